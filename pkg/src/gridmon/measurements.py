"""Measurement simulation: accuracy classes, noisy measurement vectors, faults.

A MeasurementSpec fixes the layout of the measurement vector (kinds,
locations, standard deviations). The layout is versioned through a content
hash; estimators refuse vectors whose hash does not match their own.

Value conventions: v_bus in pu, p/q in pu (MW on a 1 MVA base), i_line as
per-unit current at the from end. Noise is relative to the reading.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import GridModel, GridView, build_admittance
from .powerflow import PfSolution, derive_line_quantities
from .seeding import STREAM_MEASUREMENT, rng

BUS_KINDS = ("v_bus", "p_bus", "q_bus")
LINE_KINDS = ("p_line", "q_line", "i_line")
ALL_KINDS = BUS_KINDS + LINE_KINDS

# IEC-style accuracy classes: the class is the 3-sigma maximum relative
# error in percent, so SD = class / 3. Power readings combine voltage and
# current channel errors.
VOLTAGE_ACC_CLASS = 0.5
CURRENT_ACC_CLASS = 1.5
POWER_SD_PCT = VOLTAGE_ACC_CLASS / 3.0 + CURRENT_ACC_CLASS / 3.0


class MeasurementError(Exception):
    pass


def accuracy_to_sd(kind: str, acc_class: float | None = None) -> float:
    """Relative standard deviation (percent) for a measurement kind.

    Defaults follow the configured instrument classes: ACC 0.5 for voltage,
    ACC 1 (max error 1.5 %) for current, and 2/3 % for power measurements.
    An explicit ``acc_class`` (3-sigma max error, percent) overrides.
    """
    if acc_class is not None:
        if acc_class <= 0:
            raise MeasurementError(f"invalid accuracy class {acc_class}")
        return acc_class / 3.0
    if kind == "v_bus":
        return VOLTAGE_ACC_CLASS / 3.0
    if kind == "i_line":
        return CURRENT_ACC_CLASS / 3.0
    if kind in ("p_bus", "q_bus", "p_line", "q_line"):
        return POWER_SD_PCT
    raise MeasurementError(f"unknown measurement kind {kind!r}")


@dataclass(frozen=True)
class MeasurementEntry:
    kind: str
    location: int  # bus id for *_bus, line id for *_line
    sd_pct: float

    def key(self) -> str:
        return f"{self.kind}@{self.location}"


@dataclass(frozen=True)
class MeasurementSpec:
    entries: tuple[MeasurementEntry, ...]

    @property
    def spec_hash(self) -> str:
        payload = "|".join(e.key() for e in self.entries)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def index_of(self, kind: str, location: int) -> int:
        for i, e in enumerate(self.entries):
            if e.kind == kind and e.location == location:
                return i
        raise MeasurementError(f"no entry {kind}@{location} in spec")

    def indices(self, kind: str) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.kind == kind]

    def sd_vector(self) -> np.ndarray:
        return np.array([e.sd_pct for e in self.entries])

    def validate_against(self, grid: GridModel) -> None:
        n_line = len(grid.lines)
        for e in self.entries:
            if e.kind not in ALL_KINDS:
                raise MeasurementError(f"unknown measurement kind {e.kind!r}")
            if e.kind in BUS_KINDS and not 0 <= e.location < grid.n_bus:
                raise MeasurementError(f"{e.key()}: bus does not exist")
            if e.kind in LINE_KINDS and not 0 <= e.location < n_line:
                raise MeasurementError(f"{e.key()}: line does not exist")


def make_spec(grid: GridModel, v_buses=(), s_buses=(), s_lines=(), i_lines=()) -> MeasurementSpec:
    """Assemble a spec in canonical order: V entries, bus P/Q pairs, line P/Q
    pairs, then current magnitudes. Lines may be given as ids or "a-b" names."""

    def line_id(ref) -> int:
        return ref if isinstance(ref, int) else grid.line_by_name(ref).id

    entries: list[MeasurementEntry] = []
    for bus in v_buses:
        entries.append(MeasurementEntry("v_bus", int(bus), accuracy_to_sd("v_bus")))
    for bus in s_buses:
        entries.append(MeasurementEntry("p_bus", int(bus), accuracy_to_sd("p_bus")))
        entries.append(MeasurementEntry("q_bus", int(bus), accuracy_to_sd("q_bus")))
    for ref in s_lines:
        lid = line_id(ref)
        entries.append(MeasurementEntry("p_line", lid, accuracy_to_sd("p_line")))
        entries.append(MeasurementEntry("q_line", lid, accuracy_to_sd("q_line")))
    for ref in i_lines:
        entries.append(MeasurementEntry("i_line", line_id(ref), accuracy_to_sd("i_line")))
    spec = MeasurementSpec(entries=tuple(entries))
    spec.validate_against(grid)
    return spec


def save_spec(spec: MeasurementSpec, path: str | Path) -> None:
    doc = {
        "format": 1,
        "entries": [
            {"kind": e.kind, "location": e.location, "sd_pct": e.sd_pct}
            for e in spec.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_spec(path: str | Path) -> MeasurementSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != 1:
        raise MeasurementError(f"{path}: unsupported spec format")
    return MeasurementSpec(entries=tuple(
        MeasurementEntry(rec["kind"], int(rec["location"]), float(rec["sd_pct"]))
        for rec in doc["entries"]
    ))


@dataclass(frozen=True)
class MeasurementSet:
    values: np.ndarray
    switch_states: np.ndarray  # 0/1 per switch, never noisy
    spec_hash: str

    def replaced(self, values: np.ndarray) -> MeasurementSet:
        return MeasurementSet(values=values, switch_states=self.switch_states,
                              spec_hash=self.spec_hash)


def true_values(solution: PfSolution, view: GridView, spec: MeasurementSpec) -> np.ndarray:
    """Noise-free measurement vector for a converged state."""
    grid = view.grid
    vc = solution.v_mag_pu * np.exp(1j * solution.v_ang_rad)
    s_bus = vc * np.conj(build_admittance(view) @ vc)
    flows = derive_line_quantities(solution, view)
    out = np.empty(len(spec.entries))
    for i, e in enumerate(spec.entries):
        if e.kind == "v_bus":
            out[i] = solution.v_mag_pu[e.location]
        elif e.kind == "p_bus":
            out[i] = s_bus[e.location].real
        elif e.kind == "q_bus":
            out[i] = s_bus[e.location].imag
        elif e.kind == "p_line":
            out[i] = flows.p_from_pu[e.location]
        elif e.kind == "q_line":
            out[i] = flows.q_from_pu[e.location]
        elif e.kind == "i_line":
            out[i] = solution.i_line_amps[e.location] / grid.i_base_amps(
                grid.lines[e.location].from_bus)
        else:
            raise MeasurementError(f"unknown kind {e.kind!r}")
    return out


def simulate(solution: PfSolution, view: GridView, spec: MeasurementSpec,
             seed: int, *, noise_key: tuple[int, ...] = ()) -> MeasurementSet:
    """Sample one noisy measurement vector: value = true * (1 + N(0, sd))."""
    truth = true_values(solution, view, spec)
    gen = rng(seed, STREAM_MEASUREMENT, *noise_key)
    noise = gen.standard_normal(len(truth))
    values = truth * (1.0 + spec.sd_vector() / 100.0 * noise)
    return MeasurementSet(values=values,
                          switch_states=np.array(view.config, dtype=float),
                          spec_hash=spec.spec_hash)


@dataclass(frozen=True)
class FaultInjection:
    """One bad-data or gross-error effect.

    kinds:
      zero_value          - targeted entries read 0
      scale_value         - targeted entries read factor * true reading
      constant_substitute - targeted entries replaced by a constant
      wrong_assumed_sd    - estimator-assumed SD changes, reading untouched
      power_deviation     - actual injected power at target buses is factor *
                            the measured value; the stale reading is restored
                            by dividing affected bus entries by the factor
    """

    kind: str
    target_kind: str | None = None  # measurement kind for value faults
    buses: tuple[int, ...] = ()
    lines: tuple[int, ...] = ()
    factor: float = 1.0
    value: float = 0.0
    assumed_sd_pct: float | None = None

    def entry_indices(self, spec: MeasurementSpec) -> list[int]:
        idx = []
        for i, e in enumerate(spec.entries):
            if self.target_kind is not None and e.kind != self.target_kind:
                continue
            if e.kind in BUS_KINDS and e.location in self.buses:
                idx.append(i)
            elif e.kind in LINE_KINDS and e.location in self.lines:
                idx.append(i)
        return idx


def inject_fault(ms: MeasurementSet, fault: FaultInjection,
                 spec: MeasurementSpec) -> MeasurementSet:
    """Apply a value-affecting fault to a measurement vector.

    wrong_assumed_sd faults leave the vector untouched (see
    :func:`assumed_sd_overrides`); power_deviation faults restore the stale
    pre-deviation reading for bus power entries at the target buses.
    """
    if spec.spec_hash != ms.spec_hash:
        raise MeasurementError("measurement set does not belong to this spec")
    values = ms.values.copy()
    if fault.kind == "zero_value":
        targets = _value_targets(fault, spec)
        values[targets] = 0.0
    elif fault.kind == "scale_value":
        targets = _value_targets(fault, spec)
        values[targets] *= fault.factor
    elif fault.kind == "constant_substitute":
        targets = _value_targets(fault, spec)
        values[targets] = fault.value
    elif fault.kind == "power_deviation":
        for i, e in enumerate(spec.entries):
            if e.kind in ("p_bus", "q_bus") and e.location in fault.buses:
                values[i] /= fault.factor
    elif fault.kind == "wrong_assumed_sd":
        pass
    else:
        raise MeasurementError(f"unknown fault kind {fault.kind!r}")
    return ms.replaced(values)


def _value_targets(fault: FaultInjection, spec: MeasurementSpec) -> list[int]:
    targets = []
    for i, e in enumerate(spec.entries):
        kinds = (fault.target_kind,) if fault.target_kind else ALL_KINDS
        if e.kind not in kinds:
            continue
        if e.kind in BUS_KINDS and e.location in fault.buses:
            targets.append(i)
        elif e.kind in LINE_KINDS and e.location in fault.lines:
            targets.append(i)
    if not targets:
        raise MeasurementError(
            f"fault {fault.kind} targets nothing in this spec "
            f"(buses={fault.buses}, lines={fault.lines})")
    return targets


def assumed_sd_overrides(faults, spec: MeasurementSpec) -> dict[int, float]:
    """Entry-index -> SD (percent) the estimator should assume, for
    wrong_assumed_sd faults."""
    overrides: dict[int, float] = {}
    for fault in faults:
        if fault.kind != "wrong_assumed_sd":
            continue
        for i, e in enumerate(spec.entries):
            if fault.target_kind and e.kind != fault.target_kind:
                continue
            targeted = (e.kind in BUS_KINDS and e.location in fault.buses) or \
                       (e.kind in LINE_KINDS and e.location in fault.lines)
            if targeted:
                overrides[i] = float(fault.assumed_sd_pct)
    return overrides


def scale_unit_powers(scenario, grid: GridModel, buses, factor: float):
    """Scenario with every unit at the given buses scaled by ``factor``
    (power_deviation faults perturb reality this way before the power flow)."""
    bus_set = set(buses)
    mask = np.array([u.bus in bus_set for u in grid.units])
    p = np.where(mask, scenario.p_kw * factor, scenario.p_kw)
    q = np.where(mask, scenario.q_kvar * factor, scenario.q_kvar)
    return replace(scenario, p_kw=p, q_kvar=q)
