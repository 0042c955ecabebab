"""Synthetic operating-scenario generation.

Scenarios are built from axis tuples: each axis covers one unit kind with an
inclusive percentage grid, the Cartesian product of all axis grids gives the
tuple set, and expansion applies per-unit multiplicative Gaussian noise on
top of the tuple's scaling values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .grid import GridModel
from .powerflow import InjectionSet
from .seeding import STREAM_SCENARIO, rng


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class ScenarioAxis:
    unit_kind: str
    min_pct: float
    max_pct: float
    step_pct: float
    noise_sd_pct: float

    def __post_init__(self):
        if self.min_pct > self.max_pct:
            raise ScenarioError(f"axis {self.unit_kind}: min > max")
        if self.step_pct <= 0:
            raise ScenarioError(f"axis {self.unit_kind}: step must be positive")
        if self.noise_sd_pct < 0:
            raise ScenarioError(f"axis {self.unit_kind}: negative noise SD")

    def grid_values(self) -> list[float]:
        """Inclusive scaling grid as fractions of nominal."""
        count = int(math.floor((self.max_pct - self.min_pct) / self.step_pct + 1e-9)) + 1
        values = [round(self.min_pct + k * self.step_pct, 9) / 100.0 for k in range(count)]
        if not values:
            raise ScenarioError(f"axis {self.unit_kind}: empty grid")
        return values


# load 10-100 %, wind 0-100 %, solar 0-90 %, all in 10 % steps
DEFAULT_AXES = (
    ScenarioAxis("load", 10.0, 100.0, 10.0, 10.0),
    ScenarioAxis("wec", 0.0, 100.0, 10.0, 25.0),
    ScenarioAxis("pv", 0.0, 90.0, 10.0, 25.0),
)

# five-axis variant with residential/commercial load split and batteries,
# 20 % steps to keep the tuple count manageable
FIVE_AXES = (
    ScenarioAxis("load_res", 10.0, 100.0, 20.0, 10.0),
    ScenarioAxis("load_com", 10.0, 100.0, 20.0, 10.0),
    ScenarioAxis("wec", 0.0, 100.0, 20.0, 25.0),
    ScenarioAxis("pv", 0.0, 100.0, 20.0, 25.0),
    ScenarioAxis("battery", -100.0, 100.0, 20.0, 25.0),
)


@dataclass(frozen=True)
class Scenario:
    """Per-unit power values (kW / kvar), aligned with grid.units order.

    Positive values follow each unit's own orientation (consumption for
    loads, injection for generators); net bus injections come out of
    :func:`injections`.
    """

    p_kw: np.ndarray
    q_kvar: np.ndarray
    tuple_values: tuple[float, ...]
    repetition: int
    tuple_index: int
    seed: int | None


def enumerate_tuples(axes) -> list[tuple[float, ...]]:
    """Cartesian product over all axis grids, axis order preserved."""
    if not axes:
        raise ScenarioError("at least one axis required")
    return [tuple(combo) for combo in product(*(ax.grid_values() for ax in axes))]


def _axis_by_kind(axes) -> dict[str, ScenarioAxis]:
    return {ax.unit_kind: ax for ax in axes}


def _check_axes_cover_grid(grid: GridModel, axes) -> None:
    known = {ax.unit_kind for ax in axes}
    missing = sorted({u.kind for u in grid.units} - known)
    if missing:
        raise ScenarioError(f"no scenario axis for unit kinds {missing}")


def expand(tuple_values, axes, grid: GridModel, seed: int | None,
           repetition: int = 0, tuple_index: int = 0) -> Scenario:
    """Turn one scaling tuple into per-unit powers.

    p = p_nom * scale(kind) * max(0, 1 + N(0, sd)); the clamp keeps loads and
    generators from flipping sign through noise. q follows each unit's
    cos phi with the same sign as p.
    """
    _check_axes_cover_grid(grid, axes)
    axis_map = _axis_by_kind(axes)
    scale = dict(zip((ax.unit_kind for ax in axes), tuple_values))
    gen = rng(0 if seed is None else seed, STREAM_SCENARIO, repetition, tuple_index)
    eps = gen.standard_normal(len(grid.units))
    p = np.empty(len(grid.units))
    q = np.empty(len(grid.units))
    for idx, unit in enumerate(grid.units):
        ax = axis_map[unit.kind]
        factor = max(0.0, 1.0 + ax.noise_sd_pct / 100.0 * eps[idx])
        p[idx] = unit.p_nom_kw * scale[unit.kind] * factor
        q[idx] = p[idx] * math.tan(math.acos(unit.cos_phi))
    return Scenario(p_kw=p, q_kvar=q, tuple_values=tuple(tuple_values),
                    repetition=repetition, tuple_index=tuple_index, seed=seed)


def generate_set(axes, grid: GridModel, repetitions: int, seed: int) -> list[Scenario]:
    """All tuples expanded ``repetitions`` times; repetitions differ only in noise."""
    if repetitions < 1:
        raise ScenarioError("repetitions must be >= 1")
    tuples = enumerate_tuples(axes)
    return [
        expand(tv, axes, grid, seed, repetition=rep, tuple_index=idx)
        for rep in range(repetitions)
        for idx, tv in enumerate(tuples)
    ]


def injections(grid: GridModel, scenario: Scenario) -> InjectionSet:
    """Net per-bus injections in per-unit, generation positive."""
    s_base_kw = grid.s_base_mva * 1e3
    p = np.zeros(grid.n_bus)
    q = np.zeros(grid.n_bus)
    for idx, unit in enumerate(grid.units):
        sign = -1.0 if unit.is_consumer else 1.0
        p[unit.bus] += sign * scenario.p_kw[idx] / s_base_kw
        q[unit.bus] += sign * scenario.q_kvar[idx] / s_base_kw
    return InjectionSet(p_pu=p, q_pu=q)


def export_scenarios(path: str | Path, scenarios, grid: GridModel) -> None:
    header: list[str] = []
    for u in grid.units:
        header += [f"unit_{u.id}_p_kw", f"unit_{u.id}_q_kvar"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for sc in scenarios:
            row: list[str] = []
            for idx in range(len(grid.units)):
                row += [repr(float(sc.p_kw[idx])), repr(float(sc.q_kvar[idx]))]
            writer.writerow(row)


def import_scenarios(path: str | Path, grid: GridModel) -> list[Scenario]:
    """Replay externally supplied scenarios (e.g. time series); no noise is added."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ScenarioError(f"{path}: empty scenario file")
        expected: list[str] = []
        for u in grid.units:
            expected += [f"unit_{u.id}_p_kw", f"unit_{u.id}_q_kvar"]
        if header != expected:
            raise ScenarioError(
                f"{path}: header does not match grid units "
                f"(expected {len(expected)} columns, got {len(header)})")
        scenarios = []
        for row_idx, row in enumerate(reader):
            if len(row) != len(expected):
                raise ScenarioError(f"{path}: row {row_idx + 2} has {len(row)} fields")
            values = np.array([float(x) for x in row])
            scenarios.append(Scenario(
                p_kw=values[0::2].copy(), q_kvar=values[1::2].copy(),
                tuple_values=(), repetition=0, tuple_index=row_idx, seed=None))
    return scenarios
