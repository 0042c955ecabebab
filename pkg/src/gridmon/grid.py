"""Electrical network data model, switch handling and admittance assembly.

All electrical computations downstream (power flow, WLS estimation) work on
a :class:`GridView`, i.e. a grid plus one concrete switch configuration.
Per-unit convention: ``s_base_mva`` from the grid file (bundled grids use
1 MVA), voltage base is each bus's ``base_kv``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

OMEGA = 2.0 * math.pi * 50.0  # rad/s, 50 Hz system

LOAD_KIND_PREFIX = "load"
GENERATOR_KINDS = ("pv", "wec", "battery")


class GridError(Exception):
    """Base class for grid file and model errors."""


class GridFormatError(GridError):
    """Raised when a grid file cannot be parsed; carries field context."""


class GridValidationError(GridError):
    """Raised when a parsed grid violates a model invariant."""


class IsolationError(GridError):
    """Raised when a switch configuration cuts supplied buses off the slack."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str  # "slack" or "pq"
    base_kv: float


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    r_ohm: float
    x_ohm: float
    b_us: float  # total shunt susceptance, microsiemens
    rating_amps: float
    # Equivalent branches standing in for non-modeled devices (e.g. the
    # substation transformer) set monitored=False: they carry power flow but
    # are excluded from loading estimation targets and loading criteria.
    monitored: bool = True

    @property
    def name(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class Switch:
    id: int
    line_id: int
    closed: bool


@dataclass(frozen=True)
class Unit:
    id: int
    bus: int
    kind: str  # "load", "pv", "wec", "battery" or a custom tag like "load_res"
    p_nom_kw: float
    cos_phi: float = 0.97

    @property
    def is_consumer(self) -> bool:
        """Loads consume (negative injection); everything else injects."""
        return self.kind.startswith(LOAD_KIND_PREFIX)


@dataclass(frozen=True)
class GridModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    switches: tuple[Switch, ...]
    units: tuple[Unit, ...]
    s_base_mva: float = 1.0

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.kind == "slack")

    @property
    def monitored_lines(self) -> tuple[Line, ...]:
        return tuple(ln for ln in self.lines if ln.monitored)

    def line_by_name(self, name: str) -> Line:
        """Look up a line by ``from-to`` bus pair, accepting both orders."""
        a, b = (int(t) for t in name.split("-"))
        for ln in self.lines:
            if {ln.from_bus, ln.to_bus} == {a, b}:
                return ln
        raise GridValidationError(f"no line between buses {a} and {b}")

    def units_at(self, bus: int) -> tuple[Unit, ...]:
        return tuple(u for u in self.units if u.bus == bus)

    def nominal_config(self) -> tuple[bool, ...]:
        return tuple(sw.closed for sw in self.switches)

    def z_base_ohm(self, bus: int) -> float:
        return self.buses[bus].base_kv ** 2 / self.s_base_mva

    def i_base_amps(self, bus: int) -> float:
        """Current base: s_base / (sqrt(3) * v_base), in amperes."""
        return self.s_base_mva * 1e6 / (math.sqrt(3.0) * self.buses[bus].base_kv * 1e3)

    def line_pu(self, line: Line) -> tuple[float, float, float]:
        """Per-unit (r, x, b_shunt_total) of a line, on the from-bus base."""
        z_base = self.z_base_ohm(line.from_bus)
        r = line.r_ohm / z_base
        x = line.x_ohm / z_base
        b = line.b_us * 1e-6 * z_base
        return r, x, b


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise GridValidationError(message)


def validate_grid(grid: GridModel) -> None:
    """Check all structural invariants, raising GridValidationError on the first hit."""
    slack_ids = [b.id for b in grid.buses if b.kind == "slack"]
    _require(len(slack_ids) == 1, f"exactly one slack bus required, found {len(slack_ids)}")
    _require(
        [b.id for b in grid.buses] == list(range(len(grid.buses))),
        "bus ids must be contiguous from 0",
    )
    for b in grid.buses:
        _require(b.kind in ("slack", "pq"), f"bus {b.id}: unknown kind {b.kind!r}")
        _require(b.base_kv > 0, f"bus {b.id}: base_kv must be positive")
    bus_ids = {b.id for b in grid.buses}
    line_ids = [ln.id for ln in grid.lines]
    _require(line_ids == list(range(len(grid.lines))), "line ids must be contiguous from 0")
    for ln in grid.lines:
        _require(ln.from_bus in bus_ids and ln.to_bus in bus_ids,
                 f"line {ln.id}: endpoint bus missing")
        _require(ln.from_bus != ln.to_bus, f"line {ln.id}: from_bus equals to_bus")
        _require(ln.r_ohm >= 0, f"line {ln.id}: negative resistance")
        _require(ln.x_ohm != 0, f"line {ln.id}: zero reactance")
        _require(ln.rating_amps > 0, f"line {ln.id}: rating_amps must be positive")
    switched_lines = [sw.line_id for sw in grid.switches]
    _require(len(set(switched_lines)) == len(switched_lines),
             "a line may carry at most one switch")
    for sw in grid.switches:
        _require(sw.line_id in set(line_ids), f"switch {sw.id}: unknown line {sw.line_id}")
    for u in grid.units:
        _require(u.bus in bus_ids, f"unit {u.id}: unknown bus {u.bus}")
        _require(0.0 < u.cos_phi <= 1.0, f"unit {u.id}: cos_phi must be in (0, 1]")
        if u.kind != "battery":
            _require(u.p_nom_kw > 0, f"unit {u.id}: p_nom_kw must be positive")
        else:
            _require(u.p_nom_kw != 0, f"unit {u.id}: battery p_nom_kw must be nonzero")
    _require(grid.s_base_mva > 0, "s_base_mva must be positive")
    # connectivity under the most permissive configuration
    reachable = _reachable_buses(grid, np.ones(len(grid.lines), dtype=bool))
    _require(len(reachable) == grid.n_bus,
             "grid is not connected even with every switch closed")


def _reachable_buses(grid: GridModel, line_closed: np.ndarray) -> set[int]:
    adj: dict[int, list[int]] = {b.id: [] for b in grid.buses}
    for ln in grid.lines:
        if line_closed[ln.id]:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
    seen = {grid.slack_bus}
    stack = [grid.slack_bus]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _coerce(section: str, index: int, record: dict, name: str, caster):
    try:
        value = record[name]
    except KeyError:
        raise GridFormatError(f"{section}[{index}]: missing field {name!r}") from None
    try:
        return caster(value)
    except (TypeError, ValueError):
        raise GridFormatError(
            f"{section}[{index}]: field {name!r} has invalid value {value!r}"
        ) from None


def parse_grid(text: str, source: str = "<string>") -> GridModel:
    """Parse the grid file format (JSON with sections buses/lines/switches/units/base)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{source}: not valid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise GridFormatError(f"{source}: top level must be an object")
    if doc.get("format") != 1:
        raise GridFormatError(f"{source}: missing or unsupported 'format' (expected 1)")
    for section in ("buses", "lines", "units", "base"):
        if section not in doc:
            raise GridFormatError(f"{source}: missing section {section!r}")
    buses = tuple(
        Bus(
            id=_coerce("buses", i, rec, "id", int),
            kind=_coerce("buses", i, rec, "kind", str),
            base_kv=_coerce("buses", i, rec, "base_kv", float),
        )
        for i, rec in enumerate(doc["buses"])
    )
    lines = tuple(
        Line(
            id=_coerce("lines", i, rec, "id", int),
            from_bus=_coerce("lines", i, rec, "from_bus", int),
            to_bus=_coerce("lines", i, rec, "to_bus", int),
            r_ohm=_coerce("lines", i, rec, "r_ohm", float),
            x_ohm=_coerce("lines", i, rec, "x_ohm", float),
            b_us=_coerce("lines", i, rec, "b_us", float),
            rating_amps=_coerce("lines", i, rec, "rating_amps", float),
            monitored=bool(rec.get("monitored", True)),
        )
        for i, rec in enumerate(doc["lines"])
    )
    switches = tuple(
        Switch(
            id=_coerce("switches", i, rec, "id", int),
            line_id=_coerce("switches", i, rec, "line_id", int),
            closed=bool(_coerce("switches", i, rec, "closed", bool)),
        )
        for i, rec in enumerate(doc.get("switches", []))
    )
    units = tuple(
        Unit(
            id=_coerce("units", i, rec, "id", int),
            bus=_coerce("units", i, rec, "bus", int),
            kind=_coerce("units", i, rec, "kind", str),
            p_nom_kw=_coerce("units", i, rec, "p_nom_kw", float),
            cos_phi=float(rec.get("cos_phi", 0.97)),
        )
        for i, rec in enumerate(doc["units"])
    )
    base = doc["base"]
    if "s_base_mva" not in base:
        raise GridFormatError(f"{source}: base section missing 's_base_mva'")
    grid = GridModel(
        buses=buses,
        lines=lines,
        switches=switches,
        units=units,
        s_base_mva=float(base["s_base_mva"]),
    )
    validate_grid(grid)
    return grid


def load_grid(path: str | Path) -> GridModel:
    path = Path(path)
    return parse_grid(path.read_text(encoding="utf-8"), source=str(path))


def bundled_grid_names() -> list[str]:
    data = resources.files("gridmon.data")
    return sorted(p.name[: -len(".grid.json")] for p in data.iterdir()
                  if p.name.endswith(".grid.json"))


def load_bundled(name: str) -> GridModel:
    """Load one of the grids shipped with the package (e.g. 'cigre_mv_mod')."""
    text = resources.files("gridmon.data").joinpath(f"{name}.grid.json").read_text("utf-8")
    return parse_grid(text, source=f"bundled:{name}")


def grid_fingerprint(grid: GridModel) -> str:
    """Stable short digest of the grid content, used to key caches."""
    import hashlib

    parts = []
    for b in grid.buses:
        parts.append(f"B{b.id}:{b.kind}:{b.base_kv!r}")
    for ln in grid.lines:
        parts.append(f"L{ln.id}:{ln.from_bus}:{ln.to_bus}:{ln.r_ohm!r}:{ln.x_ohm!r}:"
                     f"{ln.b_us!r}:{ln.rating_amps!r}:{int(ln.monitored)}")
    for sw in grid.switches:
        parts.append(f"S{sw.id}:{sw.line_id}:{int(sw.closed)}")
    for u in grid.units:
        parts.append(f"U{u.id}:{u.bus}:{u.kind}:{u.p_nom_kw!r}:{u.cos_phi!r}")
    parts.append(f"base:{grid.s_base_mva!r}")
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GridView:
    """A grid under one concrete switch configuration.

    ``line_in_service[l]`` is False for lines whose switch is open; those
    lines are excluded from the admittance matrix and carry zero current.
    Buses cut off the slack (only ever unit-less ones) are listed in
    ``dead_buses`` and held at 1.0 pu by the power flow.
    """

    grid: GridModel
    config: tuple[bool, ...]
    line_in_service: np.ndarray = field(repr=False)
    dead_buses: frozenset[int] = frozenset()

    @property
    def n_bus(self) -> int:
        return self.grid.n_bus

    def with_scaled_impedance(self, factors: np.ndarray) -> GridView:
        """View over a copy of the grid with per-line r and x multiplied by factors."""
        lines = tuple(
            replace(ln, r_ohm=ln.r_ohm * factors[ln.id], x_ohm=ln.x_ohm * factors[ln.id])
            for ln in self.grid.lines
        )
        return GridView(grid=replace(self.grid, lines=lines), config=self.config,
                        line_in_service=self.line_in_service,
                        dead_buses=self.dead_buses)


def apply_switch_config(grid: GridModel, config) -> GridView:
    """Materialize the effective topology for one open/closed pattern.

    Raises IsolationError when the pattern disconnects any bus that carries
    units from the slack bus.
    """
    config = tuple(bool(c) for c in config)
    if len(config) != len(grid.switches):
        raise GridValidationError(
            f"config length {len(config)} != number of switches {len(grid.switches)}")
    in_service = np.ones(len(grid.lines), dtype=bool)
    for sw, closed in zip(grid.switches, config):
        in_service[sw.line_id] = closed
    reachable = _reachable_buses(grid, in_service)
    dead = [u.bus for u in grid.units if u.bus not in reachable]
    if dead:
        raise IsolationError(
            f"switch config {config} disconnects supplied buses {sorted(set(dead))}")
    return GridView(grid=grid, config=config, line_in_service=in_service,
                    dead_buses=frozenset(b.id for b in grid.buses
                                         if b.id not in reachable))


def build_admittance(view: GridView) -> np.ndarray:
    """Complex node admittance matrix in per-unit (pi model per line)."""
    grid = view.grid
    n = grid.n_bus
    y = np.zeros((n, n), dtype=complex)
    for ln in grid.lines:
        if not view.line_in_service[ln.id]:
            continue
        r, x, b = grid.line_pu(ln)
        y_series = 1.0 / complex(r, x)
        y_shunt = 0.5j * b
        i, j = ln.from_bus, ln.to_bus
        y[i, i] += y_series + y_shunt
        y[j, j] += y_series + y_shunt
        y[i, j] -= y_series
        y[j, i] -= y_series
    return y
