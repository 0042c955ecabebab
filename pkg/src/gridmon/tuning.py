"""Architecture and training-data sweeps.

Evaluates combinations of hidden-layer count, layer-size multiplier and
training-data repetitions by the mean success rate over a set of test cases,
and reports training time per combination.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ann import TrainConfig, build_training_set, train_monitor_pair
from .evaluation import METHOD_ANN, run_test_case
from .grid import GridModel
from .scenarios import generate_set

DEFAULT_COMBINATION = (3, 1, 3)  # hidden layers, size multiplier, repetitions


@dataclass(frozen=True)
class TuneRow:
    n_hidden_layers: int
    layer_size_multiplier: int
    repetitions: int
    mean_sr_c1: float
    mean_sr_c2: float
    train_seconds: float
    is_default: bool


def tune_architecture(grid: GridModel, axes, test_cases, test_scenarios, configs,
                      *, layer_counts=(1, 2, 3, 4, 5), multipliers=(1, 2, 3, 4),
                      repetition_counts=(1, 2, 3, 4),
                      train_cfg: TrainConfig = TrainConfig(),
                      train_seed: int = 0, meas_seed: int = 0) -> list[TuneRow]:
    """Grid sweep; every combination trains a fresh monitor pair.

    Returns one row per combination with the mean SR over all given test
    cases. The row matching the default combination is flagged.
    """
    rows: list[TuneRow] = []
    data_by_reps = {}
    for reps in sorted(set(repetition_counts)):
        scenario_list = generate_set(axes, grid, reps, train_seed)
        data_by_reps[reps] = scenario_list

    for n_layers in layer_counts:
        for mult in multipliers:
            for reps in repetition_counts:
                spec_data = {}
                sr1 = []
                sr2 = []
                seconds = 0.0
                for tc in test_cases:
                    spec = tc.spec(grid)
                    key = spec.spec_hash
                    if key not in spec_data:
                        data = build_training_set(grid, data_by_reps[reps], spec,
                                                  configs, train_seed)
                        models, histories = train_monitor_pair(
                            grid, data, train_cfg,
                            arch_overrides={"n_hidden_layers": n_layers,
                                            "layer_size_multiplier": mult})
                        seconds += sum(h.wall_seconds for h in histories.values())
                        spec_data[key] = models
                    result = run_test_case(
                        tc, grid, test_scenarios, configs, models=spec_data[key],
                        methods=(METHOD_ANN,), meas_seed=meas_seed)[METHOD_ANN]
                    sr1.append(result.sr_c1)
                    sr2.append(result.sr_c2)
                rows.append(TuneRow(
                    n_hidden_layers=n_layers, layer_size_multiplier=mult,
                    repetitions=reps,
                    mean_sr_c1=sum(sr1) / len(sr1), mean_sr_c2=sum(sr2) / len(sr2),
                    train_seconds=seconds,
                    is_default=(n_layers, mult, reps) == DEFAULT_COMBINATION,
                ))
    return rows


def best_row(rows: list[TuneRow]) -> TuneRow:
    return max(rows, key=lambda r: (r.mean_sr_c1, -r.train_seconds))
