"""Test-case execution and success-rate evaluation.

Each test case pairs a measurement configuration with optional bad-data
faults and topology errors, and is evaluated over every scenario and
switching configuration. Both estimators consume identical measurement
vectors; errors are scored against the noise-free power flow truth.

Error conventions: voltage error in percent of nominal (pu * 100), loading
error in percentage points, both as the maximum over buses / monitored
lines. A scenario passes a criterion only if both maxima are strictly below
the criterion limits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .ann import AnnModel, SpecHashMismatch, predict_batch
from .correction import correct_voltages
from .grid import GridModel, IsolationError, apply_switch_config
from .measurements import (FaultInjection, MeasurementSet, MeasurementSpec,
                           assumed_sd_overrides, inject_fault, make_spec,
                           scale_unit_powers, simulate)
from .powerflow import solve_pf
from .scenarios import injections
from .seeding import STREAM_FAULT, rng
from .wls import ObservabilityError, WlsConfig, estimate

METHOD_ANN = "ann"
METHOD_WLS = "wls"


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class Criterion:
    v_err_limit_pct: float
    loading_err_limit_pct: float

    def __post_init__(self):
        if self.v_err_limit_pct <= 0 or self.loading_err_limit_pct <= 0:
            raise EvaluationError("criterion limits must be positive")


C1 = Criterion(1.0, 10.0)
C2 = Criterion(0.5, 5.0)


def is_successful(v_est, v_true, loading_est, loading_true,
                  criterion: Criterion) -> bool:
    """Strict comparison: an error exactly at the limit fails."""
    v_err = scenario_voltage_error(v_est, v_true)
    l_err = scenario_loading_error(loading_est, loading_true)
    return bool(v_err < criterion.v_err_limit_pct
                and l_err < criterion.loading_err_limit_pct)


def scenario_voltage_error(v_est, v_true) -> float:
    return float(np.max(np.abs(np.asarray(v_est) - np.asarray(v_true))) * 100.0)


def scenario_loading_error(loading_est, loading_true) -> float:
    return float(np.max(np.abs(np.asarray(loading_est) - np.asarray(loading_true))))


@dataclass(frozen=True)
class TestCase:
    id: str
    group: str
    v_buses: tuple[int, ...]
    s_buses: tuple[int, ...]
    s_lines: tuple[str, ...]
    i_lines: tuple[str, ...]
    faults: tuple[FaultInjection, ...] = ()
    rx_model_factor: float | None = None  # model r/x = factor * actual
    rx_lines: tuple[str, ...] = ()
    rx_uniform: tuple[float, float] | None = None
    flip_switches: tuple[int, ...] = ()
    correction: bool = False

    @property
    def label(self) -> str:
        return f"{self.id}*" if self.correction else self.id

    def spec(self, grid: GridModel) -> MeasurementSpec:
        return make_spec(grid, v_buses=self.v_buses, s_buses=self.s_buses,
                         s_lines=self.s_lines, i_lines=self.i_lines)

    def with_correction(self, on: bool) -> TestCase:
        from dataclasses import replace
        return replace(self, correction=on)


def _parse_fault(rec: dict, grid: GridModel | None) -> FaultInjection:
    lines = tuple(rec.get("lines", ()))
    if grid is not None:
        lines = tuple(grid.line_by_name(ref).id if isinstance(ref, str) else ref
                      for ref in lines)
    return FaultInjection(
        kind=rec["kind"],
        target_kind=rec.get("target_kind"),
        buses=tuple(rec.get("buses", ())),
        lines=lines,
        factor=float(rec.get("factor", 1.0)),
        value=float(rec.get("value", 0.0)),
        assumed_sd_pct=rec.get("assumed_sd_pct"),
    )


@dataclass(frozen=True)
class Catalog:
    cases: dict[str, TestCase]
    switch_configs: tuple[tuple[bool, ...], ...]
    criteria: dict[str, Criterion]
    default_case_ids: tuple[str, ...]

    def case(self, case_id: str) -> TestCase:
        base = case_id.rstrip("*")
        if base not in self.cases:
            raise EvaluationError(f"unknown test case {case_id!r}")
        tc = self.cases[base]
        return tc.with_correction(True) if case_id.endswith("*") else tc


def load_catalog(grid: GridModel | None = None) -> Catalog:
    """Read the bundled test-case tables; line names resolve against ``grid``."""
    doc = json.loads(resources.files("gridmon.data").joinpath("catalog.json")
                     .read_text("utf-8"))
    if doc.get("format") != 1:
        raise EvaluationError("unsupported catalog format")
    raw = {rec["id"]: rec for rec in doc["cases"]}
    cases: dict[str, TestCase] = {}
    for rec in doc["cases"]:
        meas = raw[rec["meas_like"]] if "meas_like" in rec else rec
        cases[rec["id"]] = TestCase(
            id=rec["id"],
            group=rec["group"],
            v_buses=tuple(meas.get("v", ())),
            s_buses=tuple(meas.get("s_bus", ())),
            s_lines=tuple(meas.get("s_line", ())),
            i_lines=tuple(meas.get("i_line", ())),
            faults=tuple(_parse_fault(f, grid) for f in rec.get("faults", ())),
            rx_model_factor=rec.get("rx_model_factor"),
            rx_lines=tuple(rec.get("rx_lines", ())),
            rx_uniform=tuple(rec["rx_uniform"]) if "rx_uniform" in rec else None,
            flip_switches=tuple(rec.get("flip_switches", ())),
        )
    return Catalog(
        cases=cases,
        switch_configs=tuple(tuple(bool(x) for x in cfg)
                             for cfg in doc["switch_configs"]),
        criteria={name: Criterion(*vals) for name, vals in doc["criteria"].items()},
        default_case_ids=tuple(doc["default_cases"]),
    )


@dataclass
class EvalResult:
    method: str
    case_label: str
    n_scenarios: int
    v_err_max_pct: np.ndarray  # per evaluated scenario-config pair
    loading_err_max_pp: np.ndarray
    success_c1: np.ndarray
    success_c2: np.ndarray
    failed_structurally: np.ndarray  # estimator produced no usable state
    bus_err_mean: np.ndarray
    bus_err_sd: np.ndarray
    bus_err_max: np.ndarray
    line_err_mean: np.ndarray
    line_err_sd: np.ndarray
    line_err_max: np.ndarray

    @property
    def sr_c1(self) -> float:
        return float(np.mean(self.success_c1))

    @property
    def sr_c2(self) -> float:
        return float(np.mean(self.success_c2))


class TruthCache:
    """Keyed store of power-flow truths for (perturbation, config, scenario)."""

    def __init__(self):
        self._store: dict = {}

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value):
        self._store[key] = value

    def __len__(self):
        return len(self._store)


def _truth_rx_factors(tc: TestCase, grid: GridModel, n_lines: int,
                      fault_seed: int, cfg_idx: int, sc_idx: int):
    """Per-line multipliers applied to the real grid's impedances.

    The catalog factor describes the estimator model as a fraction of the
    actual value, so reality is nominal divided by that factor.
    """
    if tc.rx_model_factor is None and tc.rx_uniform is None:
        return None
    factors = np.ones(n_lines)
    if tc.rx_model_factor is not None:
        for name in tc.rx_lines:
            factors[grid.line_by_name(name).id] = 1.0 / tc.rx_model_factor
    if tc.rx_uniform is not None:
        lo, hi = tc.rx_uniform
        gen = rng(fault_seed, STREAM_FAULT, cfg_idx, sc_idx)
        factors *= 1.0 / gen.uniform(lo, hi, size=n_lines)
    return factors


def _assumed_bits(tc: TestCase, config) -> tuple[bool, ...]:
    bits = list(config)
    for idx in tc.flip_switches:
        bits[idx] = not bits[idx]
    return tuple(bits)


@dataclass
class _ScenarioRecord:
    x_row: np.ndarray | None
    v_true: np.ndarray
    loading_true: np.ndarray
    wls_v: np.ndarray | None
    wls_loading: np.ndarray | None
    wls_failed: bool


def _evaluate_scenarios(tc, grid, spec, scenarios, configs, methods,
                        meas_seed, fault_seed, wls_cfg, monitored,
                        truth_cache, indices):
    """Worker: run the truth + measurement + WLS pipeline for given indices."""
    records = []
    value_faults = [f for f in tc.faults
                    if f.kind in ("zero_value", "scale_value", "constant_substitute")]
    deviations = [f for f in tc.faults if f.kind == "power_deviation"]
    sd_over = assumed_sd_overrides(tc.faults, spec) or None
    static_truth = tc.rx_uniform is None
    perturb_tag = (tc.rx_model_factor, tc.rx_lines,
                   tuple(sorted(f.buses for f in deviations)),
                   tuple(f.factor for f in deviations)) \
        if (tc.rx_model_factor or deviations) else ()

    assumed_views = {}
    for cfg_idx, config in enumerate(configs):
        bits = _assumed_bits(tc, config)
        try:
            assumed_views[cfg_idx] = (bits, apply_switch_config(grid, bits))
        except IsolationError:
            assumed_views[cfg_idx] = (bits, None)

    truth_views = [apply_switch_config(grid, config) for config in configs]

    for cfg_idx, sc_idx in indices:
        config = configs[cfg_idx]
        scenario = scenarios[sc_idx]
        actual = scenario
        for f in deviations:
            actual = scale_unit_powers(actual, grid, f.buses, f.factor)

        cache_key = (perturb_tag, cfg_idx, sc_idx) if static_truth else None
        cached = truth_cache.get(cache_key) if truth_cache is not None and cache_key else None
        if cached is not None:
            sol, truth_view = cached
        else:
            factors = _truth_rx_factors(tc, grid, len(grid.lines),
                                        fault_seed, cfg_idx, sc_idx)
            truth_view = truth_views[cfg_idx]
            if factors is not None:
                truth_view = truth_view.with_scaled_impedance(factors)
            sol = solve_pf(truth_view, injections(grid, actual))
            if truth_cache is not None and cache_key:
                truth_cache.put(cache_key, (sol, truth_view))

        ms = simulate(sol, truth_view, spec, meas_seed, noise_key=(cfg_idx, sc_idx))
        for f in value_faults:
            ms = inject_fault(ms, f, spec)
        for f in deviations:
            ms = inject_fault(ms, f, spec)
        if tc.correction:
            ms = correct_voltages(ms, spec).measurements

        bits, assumed_view = assumed_views[cfg_idx]
        ms = MeasurementSet(values=ms.values,
                            switch_states=np.array(bits, dtype=float),
                            spec_hash=ms.spec_hash)

        x_row = None
        if METHOD_ANN in methods:
            x_row = np.concatenate([ms.values, ms.switch_states])

        wls_v = wls_loading = None
        wls_failed = False
        if METHOD_WLS in methods:
            if assumed_view is None:
                wls_failed = True
            else:
                try:
                    est = estimate(assumed_view, ms, spec, cfg=wls_cfg,
                                   sd_overrides=sd_over)
                    if est.converged and np.all(np.isfinite(est.v_mag)):
                        wls_v = est.v_mag
                        wls_loading = est.loading_pct[monitored]
                    else:
                        wls_failed = True
                except (ObservabilityError, np.linalg.LinAlgError):
                    wls_failed = True

        records.append(_ScenarioRecord(
            x_row=x_row,
            v_true=sol.v_mag_pu,
            loading_true=sol.loading_pct[monitored] / 100.0,
            wls_v=wls_v,
            wls_loading=wls_loading,
            wls_failed=wls_failed,
        ))
    return records


def run_test_case(tc: TestCase, grid: GridModel, scenarios, configs,
                  models: dict[str, AnnModel] | None = None,
                  methods=(METHOD_ANN, METHOD_WLS),
                  wls_cfg: WlsConfig = WlsConfig(),
                  meas_seed: int = 0, fault_seed: int = 0,
                  criteria: dict[str, Criterion] | None = None,
                  truth_cache: TruthCache | None = None,
                  jobs: int = 1) -> dict[str, EvalResult]:
    """Evaluate one test case for the selected methods.

    Every scenario is run under every switching configuration; estimators see
    the same (possibly faulted, possibly corrected) measurement vectors.
    """
    criteria = criteria or {"C1": C1, "C2": C2}
    spec = tc.spec(grid)
    monitored = [ln.id for ln in grid.monitored_lines]
    if METHOD_ANN in methods:
        if not models or "voltage" not in models or "loading" not in models:
            raise EvaluationError(f"case {tc.label}: trained models required "
                                  "for the ann method")
        for m in models.values():
            if m.spec_hash != spec.spec_hash:
                raise SpecHashMismatch(
                    f"case {tc.label}: model trained for layout {m.spec_hash}, "
                    f"case layout is {spec.spec_hash}")

    indices = [(c, s) for c in range(len(configs)) for s in range(len(scenarios))]
    if jobs > 1:
        records = _parallel_evaluate(tc, grid, spec, scenarios, configs, methods,
                                     meas_seed, fault_seed, wls_cfg, monitored,
                                     indices, jobs)
    else:
        records = _evaluate_scenarios(tc, grid, spec, scenarios, configs, methods,
                                      meas_seed, fault_seed, wls_cfg, monitored,
                                      truth_cache, indices)

    n = len(records)
    results: dict[str, EvalResult] = {}
    v_true = np.array([r.v_true for r in records])
    l_true = np.array([r.loading_true for r in records]) * 100.0

    if METHOD_ANN in methods:
        x = np.array([r.x_row for r in records])
        v_est = predict_batch(models["voltage"], x)
        l_est = predict_batch(models["loading"], x) * 100.0
        results[METHOD_ANN] = _score(METHOD_ANN, tc.label, v_est, l_est,
                                     v_true, l_true,
                                     np.zeros(n, dtype=bool), criteria)
    if METHOD_WLS in methods:
        failed = np.array([r.wls_failed for r in records])
        v_est = np.array([r.wls_v if r.wls_v is not None else np.full(grid.n_bus, np.nan)
                          for r in records])
        l_est = np.array([r.wls_loading if r.wls_loading is not None
                          else np.full(len(monitored), np.nan) for r in records])
        results[METHOD_WLS] = _score(METHOD_WLS, tc.label, v_est, l_est,
                                     v_true, l_true, failed, criteria)
    return results


def _parallel_evaluate(tc, grid, spec, scenarios, configs, methods,
                       meas_seed, fault_seed, wls_cfg, monitored, indices, jobs):
    from multiprocessing import get_context

    chunks = [indices[i::jobs] for i in range(jobs)]
    args = [(tc, grid, spec, scenarios, configs, methods, meas_seed,
             fault_seed, wls_cfg, monitored, None, chunk) for chunk in chunks]
    with get_context("spawn").Pool(jobs) as pool:
        chunk_records = pool.starmap(_evaluate_scenarios, args)
    # indices were dealt round-robin; reassemble in original order
    records = [None] * len(indices)
    for worker, chunk in enumerate(chunks):
        for pos, _ in enumerate(chunk):
            records[worker + pos * jobs] = chunk_records[worker][pos]
    return records


def _score(method, label, v_est, l_est, v_true, l_true, failed, criteria):
    n = v_true.shape[0]
    v_err_abs = np.abs(v_est - v_true) * 100.0
    l_err_abs = np.abs(l_est - l_true)
    v_err_abs[failed] = np.inf
    l_err_abs[failed] = np.inf
    v_max = v_err_abs.max(axis=1)
    l_max = l_err_abs.max(axis=1)
    crit = {name: (v_max < c.v_err_limit_pct) & (l_max < c.loading_err_limit_pct)
            for name, c in criteria.items()}
    ok = ~failed
    if ok.any():
        bus_mean, bus_sd = v_err_abs[ok].mean(axis=0), v_err_abs[ok].std(axis=0)
        bus_max = v_err_abs[ok].max(axis=0)
        line_mean, line_sd = l_err_abs[ok].mean(axis=0), l_err_abs[ok].std(axis=0)
        line_max = l_err_abs[ok].max(axis=0)
    else:
        bus_mean = bus_sd = bus_max = np.full(v_true.shape[1], np.nan)
        line_mean = line_sd = line_max = np.full(l_true.shape[1], np.nan)
    return EvalResult(
        method=method, case_label=label, n_scenarios=n,
        v_err_max_pct=v_max, loading_err_max_pp=l_max,
        success_c1=crit.get("C1", np.zeros(n, dtype=bool)),
        success_c2=crit.get("C2", np.zeros(n, dtype=bool)),
        failed_structurally=failed,
        bus_err_mean=bus_mean, bus_err_sd=bus_sd, bus_err_max=bus_max,
        line_err_mean=line_mean, line_err_sd=line_sd, line_err_max=line_max,
    )


def error_stats(results: dict[str, EvalResult], grid: GridModel):
    """Per-bus and per-line error tables, sorted by the WLS maximum ascending."""
    ref = results.get(METHOD_WLS) or next(iter(results.values()))
    bus_order = np.argsort(ref.bus_err_max, kind="stable")
    line_order = np.argsort(ref.line_err_max, kind="stable")
    monitored = [ln.id for ln in grid.monitored_lines]
    bus_rows = []
    for b in bus_order:
        row = {"bus": int(b)}
        for method, res in results.items():
            row[f"{method}_mean"] = float(res.bus_err_mean[b])
            row[f"{method}_sd"] = float(res.bus_err_sd[b])
            row[f"{method}_max"] = float(res.bus_err_max[b])
        bus_rows.append(row)
    line_rows = []
    for pos in line_order:
        row = {"line": grid.lines[monitored[pos]].name}
        for method, res in results.items():
            row[f"{method}_mean"] = float(res.line_err_mean[pos])
            row[f"{method}_sd"] = float(res.line_err_sd[pos])
            row[f"{method}_max"] = float(res.line_err_max[pos])
        line_rows.append(row)
    return {"buses": bus_rows, "lines": line_rows}


@dataclass
class SearchStep:
    added: str
    spec_size: int
    sr: float


def default_candidate_pool(grid: GridModel) -> list[tuple[str, object]]:
    """Bus upgrades (P, Q, V per bus) first, then line P/Q pairs; line order
    starts with the evenly spaced set used by the full-observability case."""
    pool: list[tuple[str, object]] = [("bus", b.id) for b in grid.buses]
    preferred = ["1-2", "4-5", "8-9", "3-8", "6-7"]
    names = [ln.name for ln in grid.monitored_lines]
    ordered = [n for n in preferred if n in names]
    ordered += [n for n in names if n not in ordered]
    pool += [("line", n) for n in ordered]
    return pool


def search_measurement_config(grid: GridModel, scenarios, configs, *,
                              method: str = METHOD_WLS,
                              target_sr: float = 1.0,
                              criterion_name: str = "C1",
                              pool=None, train_fn=None,
                              wls_cfg: WlsConfig = WlsConfig(),
                              meas_seed: int = 0):
    """Greedy consecutive addition of measurements until the target SR is met.

    ``train_fn(spec) -> models`` supplies ANN models when method == "ann".
    Returns (steps, final TestCase, reached: bool).
    """
    pool = list(pool) if pool is not None else default_candidate_pool(grid)
    v_buses: list[int] = []
    s_buses: list[int] = []
    s_lines: list[str] = []
    steps: list[SearchStep] = []
    criteria = {"C1": C1, "C2": C2}
    tc = None
    reached = False
    if target_sr <= 0.0:
        return steps, tc, True
    for kind, ref in pool:
        if kind == "bus":
            v_buses.append(int(ref))
            s_buses.append(int(ref))
            added = f"bus {ref} (V,P,Q)"
        else:
            s_lines.append(str(ref))
            added = f"line {ref} (P,Q)"
        tc = TestCase(id="SEARCH", group="search",
                      v_buses=tuple(v_buses), s_buses=tuple(s_buses),
                      s_lines=tuple(s_lines), i_lines=())
        models = train_fn(tc.spec(grid)) if method == METHOD_ANN else None
        try:
            result = run_test_case(tc, grid, scenarios, configs, models=models,
                                   methods=(method,), wls_cfg=wls_cfg,
                                   meas_seed=meas_seed, criteria=criteria)[method]
            sr = result.sr_c1 if criterion_name == "C1" else result.sr_c2
        except (ObservabilityError, EvaluationError):
            sr = 0.0
        steps.append(SearchStep(added=added,
                                spec_size=len(tc.spec(grid).entries), sr=sr))
        if sr >= target_sr:
            reached = True
            break
    return steps, tc, reached


@dataclass
class SotaComparison:
    """Success rates of two state-of-the-art baselines on the same data."""

    few_scenario_sr_c1: float
    few_scenario_sr_c2: float
    small_arch_voltage_sr_c1: float
    small_arch_voltage_sr_c2: float


def compare_sota(grid: GridModel, tc: TestCase, axes, configs, test_scenarios,
                 *, train_seed: int = 0, meas_seed: int = 0,
                 train_cfg=None, small_arch_epochs: int = 1000) -> SotaComparison:
    """Reproduce earlier published baselines as regression anchors.

    (a) training on five hand-picked extreme scenarios instead of the full
        tuple grid; (b) a single-hidden-layer, two-neuron sigmoid network
        whose inputs are the measurements alone (no switch bits), estimating
        voltages only and scored on the voltage limit alone.
    """
    from .ann import (AnnArchitecture, TrainConfig, build_training_set,
                      init_model, predict_batch as ann_predict, train,
                      train_monitor_pair)
    from .scenarios import expand, generate_set

    train_cfg = train_cfg or TrainConfig(seed=train_seed)
    spec = tc.spec(grid)
    n_meas = len(spec.entries)

    few = [expand(tv, axes, grid, train_seed, repetition=0, tuple_index=i)
           for i, tv in enumerate(sota_extreme_tuples(axes))]
    few_data = build_training_set(grid, few, spec, configs, train_seed)
    few_models, _ = train_monitor_pair(grid, few_data, train_cfg)
    few_res = run_test_case(tc, grid, test_scenarios, configs, models=few_models,
                            methods=(METHOD_ANN,), meas_seed=meas_seed)[METHOD_ANN]

    full = generate_set(axes, grid, 3, train_seed)
    full_data = build_training_set(grid, full, spec, configs, train_seed)
    test_data = build_training_set(grid, test_scenarios, spec, configs, meas_seed)
    arch = AnnArchitecture(n_in=n_meas, n_out=full_data.y_voltage.shape[1],
                           n_hidden_layers=1, hidden_size_override=2,
                           hidden_activation="sigmoid")
    small = init_model(arch, train_cfg.seed)
    small_cfg = TrainConfig(max_epochs=small_arch_epochs, patience=100,
                            seed=train_cfg.seed, batch_size=train_cfg.batch_size)
    small, _ = train(small, full_data.x[:, :n_meas], full_data.y_voltage, small_cfg)
    v_est = ann_predict(small, test_data.x[:, :n_meas])
    v_err = np.abs(v_est - test_data.y_voltage).max(axis=1) * 100.0
    return SotaComparison(
        few_scenario_sr_c1=few_res.sr_c1,
        few_scenario_sr_c2=few_res.sr_c2,
        small_arch_voltage_sr_c1=float(np.mean(v_err < C1.v_err_limit_pct)),
        small_arch_voltage_sr_c2=float(np.mean(v_err < C2.v_err_limit_pct)),
    )


def sota_extreme_tuples(axes) -> list[tuple[float, ...]]:
    """Five hand-picked scenarios: the four range corners plus the midpoint."""
    lows = [ax.grid_values()[0] for ax in axes]
    highs = [ax.grid_values()[-1] for ax in axes]
    mids = [vals[len(vals) // 2] for vals in (ax.grid_values() for ax in axes)]
    corners = [
        tuple(lows),
        tuple(highs),
        tuple(high if i == 0 else low for i, (low, high) in enumerate(zip(lows, highs))),
        tuple(low if i == 0 else high for i, (low, high) in enumerate(zip(lows, highs))),
        tuple(mids),
    ]
    return corners
