"""Multilayer-perceptron monitors for bus voltages and line loadings.

Two sibling regressors share one input layout (measurement vector plus
switch status bits): one maps to all bus voltage magnitudes (pu), the other
to the loading fraction of every monitored line. Implemented directly on
numpy: ReLU hidden layers sized by the two-thirds rule, uniform init within
the Bottou bounds, Adam on the mean squared error, early stopping on a
validation split.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridModel
from .measurements import MeasurementSet, MeasurementSpec, simulate
from .powerflow import PowerFlowError, solve_pf
from .scenarios import injections
from .seeding import STREAM_ANN, rng

MODEL_FORMAT = 1

ACTIVATIONS = ("relu", "sigmoid", "tanh")


class AnnError(Exception):
    pass


class SpecHashMismatch(AnnError):
    """Input vector layout does not match the layout the model was trained on."""


def hidden_size(n_in: int, n_out: int) -> int:
    """Neurons per hidden layer: round(2/3 * n_in + n_out)."""
    if n_in < 1 or n_out < 1:
        raise AnnError("layer sizes require n_in >= 1 and n_out >= 1")
    return int(round(2.0 / 3.0 * n_in + n_out))


@dataclass(frozen=True)
class AnnArchitecture:
    n_in: int
    n_out: int
    n_hidden_layers: int = 3
    layer_size_multiplier: int = 1
    hidden_activation: str = "relu"
    hidden_size_override: int | None = None  # explicit width, e.g. for baselines

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise AnnError("n_in and n_out must be >= 1")
        if self.layer_size_multiplier < 1:
            raise AnnError("layer_size_multiplier must be >= 1")
        if self.hidden_activation not in ACTIVATIONS:
            raise AnnError(f"unsupported activation {self.hidden_activation!r}")

    def layer_sizes(self) -> list[int]:
        if self.hidden_size_override is not None:
            hidden = self.hidden_size_override
        else:
            hidden = hidden_size(self.n_in, self.n_out) * self.layer_size_multiplier
        return [self.n_in] + [hidden] * self.n_hidden_layers + [self.n_out]


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 150
    learning_rate: float = 0.001
    validation_fraction: float = 0.25
    patience: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise AnnError("validation_fraction must be in (0, 1)")


@dataclass
class AnnModel:
    arch: AnnArchitecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm_mean: np.ndarray
    norm_sd: np.ndarray
    norm_mask: np.ndarray  # False where a feature bypasses normalization (switch bits)
    seed: int
    # the network regresses standardized targets; outputs are mapped back so
    # the model's external units stay pu voltages / loading fractions
    out_mean: np.ndarray = None
    out_sd: np.ndarray = None
    spec_hash: str = ""
    target_kind: str = ""  # "voltage" or "loading"
    train_fingerprint: str = ""
    seen_patterns: frozenset = frozenset()

    def __post_init__(self):
        if self.out_mean is None:
            self.out_mean = np.zeros(self.arch.n_out)
        if self.out_sd is None:
            self.out_sd = np.ones(self.arch.n_out)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.norm_mean) / self.norm_sd
        return np.where(self.norm_mask, z, x)

    def denormalize_output(self, y: np.ndarray) -> np.ndarray:
        return y * self.out_sd + self.out_mean

    def topology_seen(self, switch_bits) -> bool:
        return tuple(int(round(b)) for b in switch_bits) in self.seen_patterns


def init_model(arch: AnnArchitecture, seed: int) -> AnnModel:
    """Uniform weight init within +-2.38 / sqrt(fan_in); zero biases."""
    gen = rng(seed, STREAM_ANN)
    weights = []
    biases = []
    sizes = arch.layer_sizes()
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 2.38 / np.sqrt(fan_in)
        weights.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AnnModel(
        arch=arch, weights=weights, biases=biases,
        norm_mean=np.zeros(arch.n_in), norm_sd=np.ones(arch.n_in),
        norm_mask=np.ones(arch.n_in, dtype=bool), seed=seed,
    )


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return np.tanh(z)


def _activate_grad(a: np.ndarray, kind: str) -> np.ndarray:
    # gradients expressed through the activation output
    if kind == "relu":
        return (a > 0.0).astype(a.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


def forward(model: AnnModel, x: np.ndarray) -> np.ndarray:
    """Batch forward pass on already-normalized inputs."""
    a = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if k == last else _activate(z, model.arch.hidden_activation)
    return a


def loss_and_grads(model: AnnModel, x: np.ndarray, y: np.ndarray):
    """MSE over all samples and outputs, with gradients for every parameter."""
    acts = [x]
    a = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if k == last else _activate(z, model.arch.hidden_activation)
        acts.append(a)
    diff = acts[-1] - y
    n = y.shape[0] * y.shape[1]
    loss = float(np.sum(diff * diff)) / n

    grad_w = [np.empty_like(w) for w in model.weights]
    grad_b = [np.empty_like(b) for b in model.biases]
    delta = 2.0 * diff / n
    for k in range(last, -1, -1):
        grad_w[k] = acts[k].T @ delta
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * _activate_grad(
                acts[k], model.arch.hidden_activation)
    return loss, grad_w, grad_b


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1
    wall_seconds: float = 0.0


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def train(model: AnnModel, x: np.ndarray, y: np.ndarray,
          cfg: TrainConfig) -> tuple[AnnModel, TrainHistory]:
    """Train in place on (x, y); returns the weights of the best validation epoch.

    The validation split and all batch shuffles are derived from cfg.seed, so
    identical calls reproduce identical weights.
    """
    if x.shape[0] != y.shape[0]:
        raise AnnError("x and y row counts differ")
    if x.shape[1] != model.arch.n_in:
        raise AnnError(f"expected {model.arch.n_in} features, got {x.shape[1]}")

    start = time.perf_counter()
    gen = rng(cfg.seed, STREAM_ANN, 1)
    order = gen.permutation(x.shape[0])
    n_val = max(1, int(round(cfg.validation_fraction * x.shape[0])))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise AnnError("validation split leaves no training data")

    # normalization statistics from the training rows only
    mean = x[train_idx].mean(axis=0)
    sd = x[train_idx].std(axis=0)
    constant = sd < 1e-12
    model.norm_mean = np.where(model.norm_mask, mean, 0.0)
    model.norm_sd = np.where(model.norm_mask & ~constant, sd, 1.0)
    model.out_mean = y[train_idx].mean(axis=0)
    out_sd = y[train_idx].std(axis=0)
    model.out_sd = np.where(out_sd < 1e-12, 1.0, out_sd)

    xn = model.normalize(x)
    yz = (y - model.out_mean) / model.out_sd
    xt, yt = xn[train_idx], yz[train_idx]
    xv = xn[val_idx]
    yv_raw = y[val_idx]

    params = model.weights + model.biases
    adam = _Adam(params, cfg.learning_rate)
    history = TrainHistory()
    best_val = np.inf
    best_params = [p.copy() for p in params]
    epochs_since_best = 0

    for epoch in range(cfg.max_epochs):
        perm = gen.permutation(len(xt))
        for lo in range(0, len(xt), cfg.batch_size):
            batch = perm[lo:lo + cfg.batch_size]
            _, gw, gb = loss_and_grads(model, xt[batch], yt[batch])
            adam.step(params, gw + gb)

        # losses reported in original target units
        train_diff = model.denormalize_output(forward(model, xt)) - y[train_idx]
        train_loss = float(np.mean(train_diff * train_diff))
        val_diff = model.denormalize_output(forward(model, xv)) - yv_raw
        val_loss = float(np.mean(val_diff * val_diff))
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise AnnError(f"training diverged to non-finite loss at epoch {epoch}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params]
            history.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > cfg.patience:
                break

    history.stopped_epoch = len(history.train_loss) - 1
    n_w = len(model.weights)
    model.weights = best_params[:n_w]
    model.biases = best_params[n_w:]
    history.wall_seconds = time.perf_counter() - start
    return model, history


def predict(model: AnnModel, ms: MeasurementSet) -> np.ndarray:
    """Estimate from one measurement set (values + switch bits appended)."""
    if model.spec_hash and ms.spec_hash != model.spec_hash:
        raise SpecHashMismatch(
            f"measurement layout {ms.spec_hash} != model layout {model.spec_hash}")
    x = np.concatenate([ms.values, ms.switch_states])[None, :]
    return predict_batch(model, x)[0]


def predict_batch(model: AnnModel, x: np.ndarray) -> np.ndarray:
    if x.shape[1] != model.arch.n_in:
        raise AnnError(f"expected {model.arch.n_in} features, got {x.shape[1]}")
    return model.denormalize_output(forward(model, model.normalize(x)))


@dataclass
class TrainingData:
    x: np.ndarray
    y_voltage: np.ndarray
    y_loading: np.ndarray
    spec_hash: str
    n_switch_bits: int
    skipped: int = 0
    fingerprint: str = ""


def build_training_set(grid: GridModel, scenario_list, spec: MeasurementSpec,
                       configs, seed: int) -> TrainingData:
    """Run the truth pipeline over scenarios x switch configs.

    Features are the noisy measurement vector plus switch bits; targets are
    noise-free voltages (pu) and loading fractions of monitored lines.
    Diverging power flows are skipped and counted.
    """
    from .grid import apply_switch_config, grid_fingerprint

    monitored = [ln.id for ln in grid.monitored_lines]
    rows_x, rows_v, rows_l = [], [], []
    skipped = 0
    for cfg_idx, config in enumerate(configs):
        view = apply_switch_config(grid, config)
        for sc_idx, scenario in enumerate(scenario_list):
            try:
                sol = solve_pf(view, injections(grid, scenario))
            except PowerFlowError:
                skipped += 1
                continue
            ms = simulate(sol, view, spec, seed, noise_key=(cfg_idx, sc_idx))
            rows_x.append(np.concatenate([ms.values, ms.switch_states]))
            rows_v.append(sol.v_mag_pu)
            rows_l.append(sol.loading_pct[monitored] / 100.0)
    if not rows_x:
        raise AnnError("every scenario diverged; no training data")
    return TrainingData(
        x=np.array(rows_x), y_voltage=np.array(rows_v), y_loading=np.array(rows_l),
        spec_hash=spec.spec_hash, n_switch_bits=len(grid.switches), skipped=skipped,
        fingerprint=f"{grid_fingerprint(grid)}:{spec.spec_hash}:{len(rows_x)}",
    )


def train_monitor_pair(grid: GridModel, data: TrainingData, cfg: TrainConfig,
                       arch_overrides: dict | None = None):
    """Train the voltage and loading models from one training set."""
    n_in = data.x.shape[1]
    norm_mask = np.ones(n_in, dtype=bool)
    if data.n_switch_bits:
        norm_mask[n_in - data.n_switch_bits:] = False
    patterns = frozenset(
        tuple(int(round(b)) for b in row[n_in - data.n_switch_bits:])
        for row in data.x) if data.n_switch_bits else frozenset()

    models = {}
    histories = {}
    for kind, y in (("voltage", data.y_voltage), ("loading", data.y_loading)):
        arch = AnnArchitecture(n_in=n_in, n_out=y.shape[1],
                               **(arch_overrides or {}))
        model = init_model(arch, cfg.seed)
        model.norm_mask = norm_mask.copy()
        model.spec_hash = data.spec_hash
        model.target_kind = kind
        model.train_fingerprint = data.fingerprint
        model.seen_patterns = patterns
        model, history = train(model, data.x, y, cfg)
        models[kind] = model
        histories[kind] = history
    return models, histories


def save_model(model: AnnModel, path: str | Path) -> None:
    meta = {
        "format": MODEL_FORMAT,
        "arch": {
            "n_in": model.arch.n_in,
            "n_out": model.arch.n_out,
            "n_hidden_layers": model.arch.n_hidden_layers,
            "layer_size_multiplier": model.arch.layer_size_multiplier,
            "hidden_activation": model.arch.hidden_activation,
            "hidden_size_override": model.arch.hidden_size_override,
        },
        "seed": model.seed,
        "spec_hash": model.spec_hash,
        "target_kind": model.target_kind,
        "train_fingerprint": model.train_fingerprint,
        "seen_patterns": sorted(list(p) for p in model.seen_patterns),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
              "norm_mean": model.norm_mean, "norm_sd": model.norm_sd,
              "norm_mask": model.norm_mask,
              "out_mean": model.out_mean, "out_sd": model.out_sd}
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{k}"] = w
        arrays[f"b{k}"] = b
    np.savez(path, **arrays)


def load_model(path: str | Path, expect_spec_hash: str | None = None) -> AnnModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != MODEL_FORMAT:
            raise AnnError(f"{path}: unsupported model format")
        arch = AnnArchitecture(**meta["arch"])
        n_layers = len(arch.layer_sizes()) - 1
        model = AnnModel(
            arch=arch,
            weights=[data[f"w{k}"] for k in range(n_layers)],
            biases=[data[f"b{k}"] for k in range(n_layers)],
            norm_mean=data["norm_mean"], norm_sd=data["norm_sd"],
            norm_mask=data["norm_mask"], seed=meta["seed"],
            out_mean=data["out_mean"], out_sd=data["out_sd"],
            spec_hash=meta["spec_hash"], target_kind=meta["target_kind"],
            train_fingerprint=meta["train_fingerprint"],
            seen_patterns=frozenset(tuple(p) for p in meta["seen_patterns"]),
        )
    if expect_spec_hash is not None and model.spec_hash != expect_spec_hash:
        raise SpecHashMismatch(
            f"{path}: trained for layout {model.spec_hash}, expected {expect_spec_hash}")
    return model
