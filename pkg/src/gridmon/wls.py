"""Weighted-least-squares state estimation with pseudo-measurement substitution.

The estimator needs P and Q information at every bus to be observable.
Buses without real injection measurements receive substitute values: DG
output is transferred from measured units of the same kind by relative
power, and the remaining balance (slack import minus measured injections
minus DG estimate) is split over unmeasured load buses proportionally to
installed power. Substitutes carry a 30 % standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridModel, GridView, build_admittance
from .measurements import MeasurementSet, MeasurementSpec

PSEUDO_SD_FRACTION = 0.30
PSEUDO_SD_FLOOR_PU = 1e-3  # 1 kW on the 1 MVA base
SD_FLOOR_PU = 1e-6


class ObservabilityError(Exception):
    """Gain matrix singular: the measurement set does not determine the state."""


@dataclass(frozen=True)
class WlsConfig:
    max_iterations: int = 10
    state_update_tolerance: float = 1e-6
    pseudo_sd_fraction: float = PSEUDO_SD_FRACTION


@dataclass(frozen=True)
class PseudoMeasurement:
    kind: str  # "p_bus" or "q_bus"
    bus: int
    value: float  # per-unit injection, generation positive
    sd_abs: float
    fallback: bool = False  # True when no measured DG of the kind existed


@dataclass(frozen=True)
class EstimatedState:
    v_mag: np.ndarray
    v_ang: np.ndarray
    loading_pct: np.ndarray  # derived on the assumed model
    converged: bool
    iterations: int
    objective: float
    objective_history: tuple[float, ...] = ()


def _measured_buses(spec: MeasurementSpec) -> set[int]:
    return {e.location for e in spec.entries if e.kind == "p_bus"}


def _slack_injection_estimate(grid: GridModel, ms: MeasurementSet,
                              spec: MeasurementSpec) -> tuple[float, float] | None:
    """Slack P, Q in per-unit: direct bus measurement if present, otherwise
    the sum of measured feeder line flows (oriented out of the from end)."""
    slack = grid.slack_bus
    measured = _measured_buses(spec)
    if slack in measured:
        p = ms.values[spec.index_of("p_bus", slack)]
        q = ms.values[spec.index_of("q_bus", slack)]
        return float(p), float(q)
    p_idx = spec.indices("p_line")
    q_idx = spec.indices("q_line")
    if p_idx:
        p = float(sum(ms.values[i] for i in p_idx))
        q = float(sum(ms.values[i] for i in q_idx))
        return p, q
    return None


def build_pseudo(grid: GridModel, ms: MeasurementSet, spec: MeasurementSpec,
                 cfg: WlsConfig = WlsConfig()) -> list[PseudoMeasurement]:
    """Substitute P/Q injections for every bus without a real injection measurement."""
    if spec.spec_hash != ms.spec_hash:
        raise ValueError("measurement set does not belong to this spec")
    s_base_kw = grid.s_base_mva * 1e3
    measured = _measured_buses(spec)
    slack = grid.slack_bus

    # nominal per-bus unit power, split by consumer/producer role
    dg_units = [u for u in grid.units if not u.is_consumer]
    load_units = [u for u in grid.units if u.is_consumer]

    # relative output of measured DG per kind, read from the net injection
    # at the measured bus (collocated loads bias this low; the 30 % pseudo
    # SD is meant to absorb exactly this kind of imprecision)
    rel_by_kind: dict[str, float] = {}
    fallback_kinds: set[str] = set()
    for kind in sorted({u.kind for u in dg_units}):
        units = [u for u in dg_units if u.kind == kind]
        meas_units = [u for u in units if u.bus in measured and u.bus != slack]
        if not meas_units:
            rel_by_kind[kind] = 0.5
            fallback_kinds.add(kind)
            continue
        inj_sum = sum(float(ms.values[spec.index_of("p_bus", u.bus)])
                      for u in meas_units)
        nom_sum = sum(u.p_nom_kw / s_base_kw for u in meas_units)
        rel_by_kind[kind] = min(max(inj_sum / nom_sum, 0.0), 1.0)

    def dg_estimate(bus: int) -> float:
        return sum(rel_by_kind[u.kind] * u.p_nom_kw / s_base_kw
                   for u in dg_units if u.bus == bus)

    slack_est = _slack_injection_estimate(grid, ms, spec)
    unmeasured = [b.id for b in grid.buses if b.id not in measured and b.id != slack]
    load_nom = {bus: sum(u.p_nom_kw for u in load_units if u.bus == bus) / s_base_kw
                for bus in unmeasured}
    total_load_nom = sum(load_nom.values())
    # DG at measured buses is already inside their net injection readings;
    # only the unmeasured DG estimate enters the load balance
    p_dg_unmeasured = sum(dg_estimate(bus) for bus in unmeasured)

    pseudos: list[PseudoMeasurement] = []
    if slack_est is not None and total_load_nom > 0:
        p_slack = slack_est[0]
        p_measured = sum(float(ms.values[spec.index_of("p_bus", b)])
                         for b in measured if b != slack)
        remainder = -p_slack - p_measured - p_dg_unmeasured
    else:
        # no balance information: every unmeasured load at half nominal
        remainder = None

    tan_phi = {u.id: math.tan(math.acos(u.cos_phi)) for u in grid.units}
    for bus in unmeasured:
        p_load = 0.0
        fallback = slack_est is None and load_nom[bus] > 0
        if load_nom[bus] > 0:
            if remainder is not None:
                p_load = remainder * load_nom[bus] / total_load_nom
            else:
                p_load = -0.5 * load_nom[bus]
        p_dg = dg_estimate(bus)
        fallback = fallback or any(
            u.kind in fallback_kinds for u in dg_units if u.bus == bus)
        p_value = p_load + p_dg
        # reactive follows the units' power factors, consistent in sign
        q_value = 0.0
        bus_units = [u for u in grid.units if u.bus == bus]
        if bus_units:
            load_share = p_load
            dg_parts = [(u, rel_by_kind[u.kind] * u.p_nom_kw / s_base_kw)
                        for u in dg_units if u.bus == bus]
            q_value = sum(part * tan_phi[u.id] for u, part in dg_parts)
            load_tan = [tan_phi[u.id] for u in bus_units if u.is_consumer]
            if load_tan:
                q_value += load_share * load_tan[0]
        sd = max(cfg.pseudo_sd_fraction * abs(p_value), PSEUDO_SD_FLOOR_PU)
        pseudos.append(PseudoMeasurement("p_bus", bus, p_value, sd, fallback))
        sd_q = max(cfg.pseudo_sd_fraction * abs(q_value), PSEUDO_SD_FLOOR_PU)
        pseudos.append(PseudoMeasurement("q_bus", bus, q_value, sd_q, fallback))
    return pseudos


def _measurement_rows(grid: GridModel, view: GridView, spec: MeasurementSpec,
                      ms: MeasurementSet, pseudos, sd_overrides):
    """Flatten real + pseudo measurements into (kind, location, value, sd_abs)."""
    rows = []
    for i, e in enumerate(spec.entries):
        sd_pct = sd_overrides.get(i, e.sd_pct) if sd_overrides else e.sd_pct
        sd_abs = max(sd_pct / 100.0 * abs(float(ms.values[i])), SD_FLOOR_PU)
        rows.append((e.kind, e.location, float(ms.values[i]), sd_abs))
    for p in pseudos:
        rows.append((p.kind, p.bus, p.value, max(p.sd_abs, SD_FLOOR_PU)))
    return rows


@dataclass(frozen=True)
class StateIndex:
    """Column layout of the WLS state vector: angles of reachable non-slack
    buses first, then magnitudes of all reachable buses."""

    slack: int
    dead: frozenset[int]
    non_slack: tuple[int, ...]
    mag_buses: tuple[int, ...]

    @classmethod
    def for_view(cls, view: GridView) -> StateIndex:
        n = view.grid.n_bus
        slack = view.grid.slack_bus
        dead = view.dead_buses
        return cls(
            slack=slack, dead=dead,
            non_slack=tuple(i for i in range(n) if i != slack and i not in dead),
            mag_buses=tuple(i for i in range(n) if i not in dead),
        )

    @property
    def n_state(self) -> int:
        return len(self.non_slack) + len(self.mag_buses)

    def angle_col(self, bus: int) -> int | None:
        if bus == self.slack or bus in self.dead:
            return None
        return self.non_slack.index(bus)

    def mag_col(self, bus: int) -> int | None:
        if bus in self.dead:
            return None
        return len(self.non_slack) + self.mag_buses.index(bus)


def measurement_model(view: GridView, rows, v: np.ndarray, th: np.ndarray,
                      index: StateIndex):
    """Measurement functions h(x) and their Jacobian at the given state.

    ``rows`` are (kind, location, value, sd) tuples; the Jacobian columns
    follow ``index``. Out-of-service line flows are identically zero.
    """
    grid = view.grid
    n = grid.n_bus
    y = build_admittance(view)
    g, b = y.real, y.imag
    ang = {bus: index.angle_col(bus) for bus in range(n)}
    mag = {bus: index.mag_col(bus) for bus in range(n)}

    th_diff = th[:, None] - th[None, :]
    cos_t, sin_t = np.cos(th_diff), np.sin(th_diff)
    a_mat = g * cos_t + b * sin_t
    c_mat = g * sin_t - b * cos_t
    p_calc = v * (a_mat @ v)
    q_calc = v * (c_mat @ v)

    h = np.zeros(len(rows))
    jac = np.zeros((len(rows), index.n_state))

    def put(m, bus, dth, dv):
        if ang[bus] is not None:
            jac[m, ang[bus]] += dth
        if mag[bus] is not None:
            jac[m, mag[bus]] += dv

    for m, (kind, loc, _value, _sd) in enumerate(rows):
        if kind == "v_bus":
            h[m] = v[loc]
            put(m, loc, 0.0, 1.0)
        elif kind in ("p_bus", "q_bus"):
            i = loc
            if kind == "p_bus":
                h[m] = p_calc[i]
                for j in range(n):
                    if j == i:
                        continue
                    put(m, j, v[i] * v[j] * c_mat[i, j], v[i] * a_mat[i, j])
                put(m, i, -q_calc[i] - b[i, i] * v[i] ** 2,
                    p_calc[i] / v[i] + g[i, i] * v[i])
            else:
                h[m] = q_calc[i]
                for j in range(n):
                    if j == i:
                        continue
                    put(m, j, -v[i] * v[j] * a_mat[i, j], v[i] * c_mat[i, j])
                put(m, i, p_calc[i] - g[i, i] * v[i] ** 2,
                    q_calc[i] / v[i] - b[i, i] * v[i])
        else:
            ln = grid.lines[loc]
            if not view.line_in_service[ln.id]:
                h[m] = 0.0
                continue
            r, x, b_sh = grid.line_pu(ln)
            y_s = 1.0 / complex(r, x)
            gs, bs = y_s.real, y_s.imag
            y_sh = 0.5 * b_sh
            i, j = ln.from_bus, ln.to_bus
            tij = th[i] - th[j]
            ct, st = math.cos(tij), math.sin(tij)
            p_ij = v[i] ** 2 * gs - v[i] * v[j] * (gs * ct + bs * st)
            q_ij = -v[i] ** 2 * (bs + y_sh) - v[i] * v[j] * (gs * st - bs * ct)
            dp = {
                "th_i": v[i] * v[j] * (gs * st - bs * ct),
                "th_j": -v[i] * v[j] * (gs * st - bs * ct),
                "v_i": 2.0 * v[i] * gs - v[j] * (gs * ct + bs * st),
                "v_j": -v[i] * (gs * ct + bs * st),
            }
            dq = {
                "th_i": -v[i] * v[j] * (gs * ct + bs * st),
                "th_j": v[i] * v[j] * (gs * ct + bs * st),
                "v_i": -2.0 * v[i] * (bs + y_sh) - v[j] * (gs * st - bs * ct),
                "v_j": -v[i] * (gs * st - bs * ct),
            }
            if kind == "p_line":
                h[m] = p_ij
                put(m, i, dp["th_i"], dp["v_i"])
                put(m, j, dp["th_j"], dp["v_j"])
            elif kind == "q_line":
                h[m] = q_ij
                put(m, i, dq["th_i"], dq["v_i"])
                put(m, j, dq["th_j"], dq["v_j"])
            else:  # i_line magnitude = sqrt(P^2+Q^2)/V_i
                s_mag = math.hypot(p_ij, q_ij)
                i_mag = s_mag / v[i]
                h[m] = i_mag
                denom = max(s_mag, 1e-9) * v[i]
                for key, bus_t in (("th_i", i), ("th_j", j)):
                    put(m, bus_t, (p_ij * dp[key] + q_ij * dq[key]) / denom, 0.0)
                put(m, i, 0.0,
                    (p_ij * dp["v_i"] + q_ij * dq["v_i"]) / denom - i_mag / v[i])
                put(m, j, 0.0, (p_ij * dp["v_j"] + q_ij * dq["v_j"]) / denom)
    return h, jac


def estimate(view: GridView, ms: MeasurementSet, spec: MeasurementSpec,
             pseudos: list[PseudoMeasurement] | None = None,
             cfg: WlsConfig = WlsConfig(),
             sd_overrides: dict[int, float] | None = None) -> EstimatedState:
    """Gauss-Newton WLS estimate of the full voltage state.

    Returns a flagged (converged=False) state on iteration exhaustion; raises
    ObservabilityError when the gain matrix is singular.
    """
    grid = view.grid
    if pseudos is None:
        pseudos = build_pseudo(grid, ms, spec, cfg)
    rows = _measurement_rows(grid, view, spec, ms, pseudos, sd_overrides)
    # injection info at buses cut off the slack constrains nothing
    rows = [r for r in rows
            if not (r[0] in ("p_bus", "q_bus", "v_bus") and r[1] in view.dead_buses)]
    index = StateIndex.for_view(view)

    z = np.array([r[2] for r in rows])
    weights = 1.0 / np.array([r[3] for r in rows]) ** 2
    non_slack = list(index.non_slack)
    mag_buses = list(index.mag_buses)

    v = np.ones(grid.n_bus)
    th = np.zeros(grid.n_bus)

    converged = False
    iterations = 0
    objective_history = []
    for iteration in range(1, cfg.max_iterations + 1):
        iterations = iteration
        h, jac = measurement_model(view, rows, v, th, index)
        residual = z - h
        objective_history.append(float(np.sum(weights * residual**2)))
        wjac = jac * weights[:, None]
        gain = jac.T @ wjac
        rhs = wjac.T @ residual
        try:
            step = np.linalg.solve(gain, rhs)
        except np.linalg.LinAlgError as exc:
            raise ObservabilityError("singular gain matrix") from exc
        if not np.all(np.isfinite(step)):
            raise ObservabilityError("non-finite state update")
        th[non_slack] += step[:len(non_slack)]
        v[mag_buses] += step[len(non_slack):]
        if np.max(np.abs(step)) < cfg.state_update_tolerance:
            converged = True
            break

    h, _ = measurement_model(view, rows, v, th, index)
    objective = float(np.sum(weights * (z - h) ** 2))
    objective_history.append(objective)
    loading = _derived_loading(grid, view, v, th)
    return EstimatedState(v_mag=v, v_ang=th, loading_pct=loading,
                          converged=converged, iterations=iterations,
                          objective=objective,
                          objective_history=tuple(objective_history))


def _derived_loading(grid: GridModel, view: GridView, v: np.ndarray,
                     th: np.ndarray) -> np.ndarray:
    vc = v * np.exp(1j * th)
    loading = np.zeros(len(grid.lines))
    for ln in grid.lines:
        if not view.line_in_service[ln.id]:
            continue
        r, x, b_sh = grid.line_pu(ln)
        y_s = 1.0 / complex(r, x)
        y_sh = 0.5j * b_sh
        vi, vj = vc[ln.from_bus], vc[ln.to_bus]
        i_from = abs(y_s * (vi - vj) + y_sh * vi) * grid.i_base_amps(ln.from_bus)
        i_to = abs(y_s * (vj - vi) + y_sh * vj) * grid.i_base_amps(ln.to_bus)
        loading[ln.id] = 100.0 * max(i_from, i_to) / ln.rating_amps
    return loading
