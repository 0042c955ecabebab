"""Batch command-line front end.

Subcommands wire the pipeline end to end: ``generate`` writes scenario sets
and a power-flow truth cache, ``train`` fits monitor pairs per measurement
configuration, ``evaluate`` runs test cases for both methods and writes
per-scenario CSVs plus a summary, ``tune`` sweeps architectures.

Every output embeds the config hash and master seed; reruns with identical
configs reproduce identical CSV bodies. Exit codes: 0 success, 2 validation
error, 3 numerical failure budget exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ann import (AnnError, TrainConfig, build_training_set, load_model,
                  save_model, train_monitor_pair)
from .evaluation import (METHOD_ANN, METHOD_WLS, EvaluationError, TruthCache,
                         error_stats, load_catalog, run_test_case)
from .grid import GridError, load_bundled, load_grid
from .measurements import MeasurementError
from .scenarios import (DEFAULT_AXES, FIVE_AXES, ScenarioError,
                        export_scenarios, generate_set)
from .seeding import seed_sequence
from .tuning import tune_architecture

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

PF_FAILURE_BUDGET = 0.001  # skipped power flows per scenario set

# stream tags for deriving sub-seeds from the master seed
SEED_TRAIN_SCENARIOS = 10
SEED_TEST_SCENARIOS = 11
SEED_TRAIN_NOISE = 12
SEED_TEST_NOISE = 13
SEED_ANN = 14
SEED_FAULTS = 15


def derive_seed(master: int, tag: int) -> int:
    return int(seed_sequence(master, tag).generate_state(1)[0])


def _axes(name: str):
    if name == "default":
        return DEFAULT_AXES
    if name == "five":
        return FIVE_AXES
    raise ScenarioError(f"unknown axes preset {name!r} (use default|five)")


def _load_any_grid(ref: str):
    if ref.startswith("bundled:"):
        return load_bundled(ref.split(":", 1)[1])
    return load_grid(ref)


# keys that do not influence results (paths, parallelism) stay out of the hash
NON_SEMANTIC_KEYS = ("out", "models", "jobs", "config")


def _config_hash(resolved: dict) -> str:
    semantic = {k: v for k, v in resolved.items() if k not in NON_SEMANTIC_KEYS}
    return hashlib.sha256(
        json.dumps(semantic, sort_keys=True).encode()).hexdigest()[:12]


def _header_lines(resolved: dict) -> list[str]:
    return [f"# config_hash={_config_hash(resolved)}",
            f"# seed={resolved['seed']}",
            f"# gridmon={__version__}"]


def _write_csv(path: Path, header: list[str], columns: list[str], rows) -> None:
    lines = list(header)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(
            repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _resolved_config(args, keys) -> dict:
    resolved = {k: getattr(args, k) for k in keys}
    if args.config:
        overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(overrides) - set(keys)
        if unknown:
            raise EvaluationError(f"config file sets unknown keys {sorted(unknown)}")
        resolved.update(overrides)
    return resolved


def _model_paths(models_dir: Path, spec_hash: str) -> dict[str, Path]:
    return {kind: models_dir / f"{spec_hash}_{kind}.npz"
            for kind in ("voltage", "loading")}


def cmd_generate(args) -> int:
    keys = ("grid", "axes", "repetitions", "seed", "out")
    cfg = _resolved_config(args, keys)
    grid = _load_any_grid(cfg["grid"])
    axes = _axes(cfg["axes"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    scen_seed = derive_seed(cfg["seed"], SEED_TEST_SCENARIOS)
    scenarios = generate_set(axes, grid, cfg["repetitions"], scen_seed)
    export_scenarios(out / "scenarios.csv", scenarios, grid)
    # prepend provenance header
    body = (out / "scenarios.csv").read_text(encoding="utf-8")
    (out / "scenarios.csv").write_text(
        "\n".join(_header_lines(cfg)) + "\n" + body, encoding="utf-8")

    from .grid import apply_switch_config
    from .powerflow import PowerFlowError, solve_pf
    from .scenarios import injections

    catalog = load_catalog(grid)
    skipped = 0
    truths = {}
    for ci, config in enumerate(catalog.switch_configs):
        view = apply_switch_config(grid, config)
        v_rows = []
        l_rows = []
        for sc in scenarios:
            try:
                sol = solve_pf(view, injections(grid, sc))
            except PowerFlowError:
                skipped += 1
                v_rows.append(np.full(grid.n_bus, np.nan))
                l_rows.append(np.full(len(grid.lines), np.nan))
                continue
            v_rows.append(sol.v_mag_pu)
            l_rows.append(sol.loading_pct)
        truths[f"v_mag_config{ci}"] = np.array(v_rows)
        truths[f"loading_config{ci}"] = np.array(l_rows)
    np.savez(out / "truth_cache.npz",
             config_hash=_config_hash(cfg), seed=cfg["seed"], **truths)
    total = len(scenarios) * len(catalog.switch_configs)
    print(f"generated {len(scenarios)} scenarios x {len(catalog.switch_configs)} "
          f"configs -> {out} (skipped {skipped} diverged power flows)")
    if skipped > PF_FAILURE_BUDGET * total:
        print(f"error: diverged power flows exceed budget "
              f"({skipped}/{total})", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_train(args) -> int:
    keys = ("grid", "axes", "cases", "repetitions", "seed", "epochs",
            "batch_size", "patience", "out")
    cfg = _resolved_config(args, keys)
    grid = _load_any_grid(cfg["grid"])
    axes = _axes(cfg["axes"])
    catalog = load_catalog(grid)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    case_ids = cfg["cases"].split(",") if cfg["cases"] else list(catalog.default_case_ids)
    scen_seed = derive_seed(cfg["seed"], SEED_TRAIN_SCENARIOS)
    noise_seed = derive_seed(cfg["seed"], SEED_TRAIN_NOISE)
    ann_seed = derive_seed(cfg["seed"], SEED_ANN)
    scenarios = generate_set(axes, grid, cfg["repetitions"], scen_seed)
    train_cfg = TrainConfig(max_epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                            patience=cfg["patience"], seed=ann_seed)

    trained: set[str] = set()
    history_rows = []
    total_skipped = 0
    total_rows = 0
    for case_id in case_ids:
        tc = catalog.case(case_id)
        spec = tc.spec(grid)
        if spec.spec_hash in trained:
            continue
        data = build_training_set(grid, scenarios, spec, catalog.switch_configs,
                                  noise_seed)
        total_skipped += data.skipped
        total_rows += data.x.shape[0] + data.skipped
        models, histories = train_monitor_pair(grid, data, train_cfg)
        for kind, model in models.items():
            save_model(model, _model_paths(out, spec.spec_hash)[kind])
            h = histories[kind]
            history_rows.append((tc.id, spec.spec_hash, kind, h.best_epoch,
                                 h.stopped_epoch, float(min(h.val_loss)),
                                 round(h.wall_seconds, 3)))
        trained.add(spec.spec_hash)
        print(f"trained {tc.id} (layout {spec.spec_hash}): "
              f"voltage best epoch {histories['voltage'].best_epoch}, "
              f"loading best epoch {histories['loading'].best_epoch}")
    _write_csv(out / "training_history.csv", _header_lines(cfg),
               ["case", "spec_hash", "target", "best_epoch", "stopped_epoch",
                "best_val_mse", "wall_seconds"], history_rows)
    if total_rows and total_skipped > PF_FAILURE_BUDGET * total_rows:
        print(f"error: diverged power flows exceed budget "
              f"({total_skipped}/{total_rows})", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_evaluate(args) -> int:
    keys = ("grid", "axes", "cases", "methods", "v_correction", "repetitions",
            "seed", "models", "jobs", "out")
    cfg = _resolved_config(args, keys)
    grid = _load_any_grid(cfg["grid"])
    axes = _axes(cfg["axes"])
    catalog = load_catalog(grid)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    models_dir = Path(cfg["models"]) if cfg["models"] else out

    case_ids = cfg["cases"].split(",") if cfg["cases"] else list(catalog.default_case_ids)
    methods = tuple(cfg["methods"].split(","))
    for m in methods:
        if m not in (METHOD_ANN, METHOD_WLS):
            raise EvaluationError(f"unknown method {m!r}")
    scen_seed = derive_seed(cfg["seed"], SEED_TEST_SCENARIOS)
    noise_seed = derive_seed(cfg["seed"], SEED_TEST_NOISE)
    fault_seed = derive_seed(cfg["seed"], SEED_FAULTS)
    scenarios = generate_set(axes, grid, cfg["repetitions"], scen_seed)

    cache = TruthCache()
    summary_rows = []
    header = _header_lines(cfg)
    for case_id in case_ids:
        tc = catalog.case(case_id)
        if cfg["v_correction"] == "on":
            tc = tc.with_correction(True)
        models = None
        if METHOD_ANN in methods:
            spec_hash = tc.spec(grid).spec_hash
            paths = _model_paths(models_dir, spec_hash)
            missing = [str(p) for p in paths.values() if not p.exists()]
            if missing:
                raise EvaluationError(
                    f"case {tc.label}: no trained model for layout {spec_hash}; "
                    f"run `gridmon train` first (missing {missing[0]})")
            models = {kind: load_model(path, expect_spec_hash=spec_hash)
                      for kind, path in paths.items()}
        t0 = time.perf_counter()
        results = run_test_case(
            tc, grid, scenarios, catalog.switch_configs, models=models,
            methods=methods, meas_seed=noise_seed, fault_seed=fault_seed,
            truth_cache=cache, jobs=cfg["jobs"])
        wall = time.perf_counter() - t0
        for method, res in results.items():
            rows = [
                (i, i // len(scenarios), i % len(scenarios),
                 float(res.v_err_max_pct[i]), float(res.loading_err_max_pp[i]),
                 int(res.success_c1[i]), int(res.success_c2[i]),
                 int(res.failed_structurally[i]))
                for i in range(res.n_scenarios)
            ]
            _write_csv(out / f"{tc.label.replace('*', 'star')}_{method}.csv",
                       header,
                       ["index", "config", "scenario", "v_err_max_pct",
                        "loading_err_max_pp", "c1", "c2", "failed"], rows)
            summary_rows.append((tc.label, method, res.n_scenarios,
                                 float(res.sr_c1), float(res.sr_c2)))
            print(f"{tc.label:5s} {method:4s} SR_C1 {100 * res.sr_c1:6.2f} %  "
                  f"SR_C2 {100 * res.sr_c2:6.2f} %  ({wall:.1f} s)")
        stats = error_stats(results, grid)
        (out / f"{tc.label.replace('*', 'star')}_stats.json").write_text(
            json.dumps({"config_hash": _config_hash(cfg), **stats}, indent=1)
            + "\n", encoding="utf-8")
    _write_csv(out / "summary.csv", header,
               ["case", "method", "n", "sr_c1", "sr_c2"], summary_rows)
    lines = ["case   method   n      SR_C1     SR_C2"]
    for case, method, n, sr1, sr2 in summary_rows:
        lines.append(f"{case:6s} {method:6s} {n:6d} {100 * sr1:8.2f}% {100 * sr2:8.2f}%")
    (out / "summary.txt").write_text("\n".join(header + lines) + "\n",
                                     encoding="utf-8")
    return EXIT_OK


def cmd_tune(args) -> int:
    keys = ("grid", "axes", "cases", "layers", "multipliers", "data_repetitions",
            "repetitions", "seed", "out")
    cfg = _resolved_config(args, keys)
    grid = _load_any_grid(cfg["grid"])
    axes = _axes(cfg["axes"])
    catalog = load_catalog(grid)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    case_ids = cfg["cases"].split(",") if cfg["cases"] else list(catalog.default_case_ids)
    cases = [catalog.case(cid) for cid in case_ids]
    test_scenarios = generate_set(axes, grid, cfg["repetitions"],
                                  derive_seed(cfg["seed"], SEED_TEST_SCENARIOS))
    rows = tune_architecture(
        grid, axes, cases, test_scenarios, catalog.switch_configs,
        layer_counts=[int(x) for x in cfg["layers"].split(",")],
        multipliers=[int(x) for x in cfg["multipliers"].split(",")],
        repetition_counts=[int(x) for x in cfg["data_repetitions"].split(",")],
        train_cfg=TrainConfig(seed=derive_seed(cfg["seed"], SEED_ANN)),
        train_seed=derive_seed(cfg["seed"], SEED_TRAIN_SCENARIOS),
        meas_seed=derive_seed(cfg["seed"], SEED_TEST_NOISE))
    _write_csv(out / "tuning.csv", _header_lines(cfg),
               ["hidden_layers", "size_multiplier", "data_repetitions",
                "mean_sr_c1", "mean_sr_c2", "train_seconds", "is_default"],
               [(r.n_hidden_layers, r.layer_size_multiplier, r.repetitions,
                 r.mean_sr_c1, r.mean_sr_c2, round(r.train_seconds, 3),
                 int(r.is_default)) for r in rows])
    best = max(rows, key=lambda r: r.mean_sr_c1)
    print(f"best combination: {best.n_hidden_layers} hidden layers, "
          f"multiplier {best.layer_size_multiplier}, "
          f"{best.repetitions} repetitions (mean SR_C1 {100 * best.mean_sr_c1:.2f} %)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridmon",
        description="Train and benchmark grid monitors against WLS state estimation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--grid", default="bundled:cigre_mv_mod",
                       help="grid file path or bundled:<name>")
        p.add_argument("--axes", default="default", help="axes preset (default|five)")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--config", default=None,
                       help="JSON config file; its values override flags")

    p = sub.add_parser("generate", help="write scenario CSV and PF truth cache")
    common(p)
    p.add_argument("--repetitions", type=int, default=3)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train monitor pairs for test cases")
    common(p)
    p.add_argument("--cases", default="", help="comma-separated case ids (default: all)")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--patience", type=int, default=20)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run test cases and write reports")
    common(p)
    p.add_argument("--cases", default="", help="comma-separated case ids (default: all)")
    p.add_argument("--methods", default="ann,wls")
    p.add_argument("--v-correction", dest="v_correction", choices=("on", "off"),
                   default="off", help="voltage outlier pre-processing (starred cases)")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--models", default="", help="directory with trained models")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="architecture and training-data sweep")
    common(p)
    p.add_argument("--cases", default="M4")
    p.add_argument("--layers", default="1,2,3,4,5")
    p.add_argument("--multipliers", default="1,2,3,4")
    p.add_argument("--data-repetitions", dest="data_repetitions", default="1,2,3,4")
    p.add_argument("--repetitions", type=int, default=1,
                   help="test scenario repetitions")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GridError, ScenarioError, MeasurementError, AnnError,
            EvaluationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
