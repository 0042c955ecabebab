"""Newton-Raphson AC power flow.

Produces the ground-truth system state for scenario evaluation: bus voltage
magnitudes/angles, line currents and loadings, and the slack injection.
All buses except the slack are treated as PQ buses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridView, build_admittance

MISMATCH_TOL = 1e-8
MAX_ITERATIONS = 30


class PowerFlowError(Exception):
    """Newton iteration did not converge; carries the last mismatch norm."""

    def __init__(self, message: str, mismatch: float = float("nan")):
        super().__init__(message)
        self.mismatch = mismatch


@dataclass(frozen=True)
class InjectionSet:
    """Net per-bus injections in per-unit, generation positive. Slack entries ignored."""

    p_pu: np.ndarray
    q_pu: np.ndarray


@dataclass(frozen=True)
class PfSolution:
    v_mag_pu: np.ndarray
    v_ang_rad: np.ndarray
    i_line_amps: np.ndarray  # from-end current magnitude per line
    loading_pct: np.ndarray  # 100 * max(from, to current) / rating
    p_slack_kw: float
    q_slack_kvar: float
    iterations: int
    max_mismatch: float


def _complex_voltage(v_mag: np.ndarray, v_ang: np.ndarray) -> np.ndarray:
    return v_mag * np.exp(1j * v_ang)


def solve_pf(view: GridView, injections: InjectionSet,
             tol: float = MISMATCH_TOL, max_iter: int = MAX_ITERATIONS) -> PfSolution:
    """Solve the AC power flow from a flat start.

    The slack bus is held at 1.0 pu, 0 rad. Convergence requires the active
    and reactive power mismatch at every PQ bus to drop below ``tol``.
    """
    grid = view.grid
    n = grid.n_bus
    if len(injections.p_pu) != n or len(injections.q_pu) != n:
        raise ValueError("injection vectors must have one entry per bus")
    if not (np.all(np.isfinite(injections.p_pu)) and np.all(np.isfinite(injections.q_pu))):
        raise ValueError("injections must be finite")

    if view.dead_buses:
        live = np.array([abs(injections.p_pu[b]) + abs(injections.q_pu[b])
                         for b in view.dead_buses])
        if live.size and live.max() > 0:
            raise ValueError("nonzero injection at a bus cut off the slack")

    y = build_admittance(view)
    g, b = y.real, y.imag
    slack = grid.slack_bus
    pq = np.array([i for i in range(n) if i != slack and i not in view.dead_buses],
                  dtype=int)

    v = np.ones(n)
    th = np.zeros(n)
    p_sched = np.asarray(injections.p_pu, dtype=float).copy()
    q_sched = np.asarray(injections.q_pu, dtype=float).copy()

    def calc_pq(v, th):
        vc = _complex_voltage(v, th)
        s = vc * np.conj(y @ vc)
        return s.real, s.imag

    mismatch_norm = float("inf")
    for iteration in range(1, max_iter + 1):
        p_calc, q_calc = calc_pq(v, th)
        dp = p_sched[pq] - p_calc[pq]
        dq = q_sched[pq] - q_calc[pq]
        mismatch_norm = max(np.max(np.abs(dp)), np.max(np.abs(dq)))
        if mismatch_norm < tol:
            return _finalize(view, v, th, y, iteration - 1, mismatch_norm)

        # polar Jacobian over PQ buses
        th_diff = th[:, None] - th[None, :]
        cos_t, sin_t = np.cos(th_diff), np.sin(th_diff)
        a = g * cos_t + b * sin_t  # used by P and dQ/dth
        c = g * sin_t - b * cos_t  # used by Q and dP/dth
        vv = np.outer(v, v)

        dp_dth = vv * c
        np.fill_diagonal(dp_dth, -q_calc - b.diagonal() * v**2)
        dp_dv = v[:, None] * a
        np.fill_diagonal(dp_dv, p_calc / v + g.diagonal() * v)
        dq_dth = -vv * a
        np.fill_diagonal(dq_dth, p_calc - g.diagonal() * v**2)
        dq_dv = v[:, None] * c
        np.fill_diagonal(dq_dv, q_calc / v - b.diagonal() * v)

        jac = np.block([
            [dp_dth[np.ix_(pq, pq)], dp_dv[np.ix_(pq, pq)]],
            [dq_dth[np.ix_(pq, pq)], dq_dv[np.ix_(pq, pq)]],
        ])
        rhs = np.concatenate([dp, dq])
        try:
            step = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {iteration}",
                                 mismatch_norm) from exc
        m = len(pq)
        th[pq] += step[:m]
        v[pq] += step[m:]

    raise PowerFlowError(
        f"no convergence after {max_iter} iterations (mismatch {mismatch_norm:.3e})",
        mismatch_norm)


def _finalize(view: GridView, v, th, y, iterations, mismatch) -> PfSolution:
    grid = view.grid
    vc = _complex_voltage(v, th)
    slack = grid.slack_bus
    s_slack = vc[slack] * np.conj(y[slack] @ vc)
    s_base_kw = grid.s_base_mva * 1e3

    n_line = len(grid.lines)
    i_from_amps = np.zeros(n_line)
    loading = np.zeros(n_line)
    i_from_pu, i_to_pu = _branch_currents(view, vc)
    for ln in grid.lines:
        base = grid.i_base_amps(ln.from_bus)
        i_from_amps[ln.id] = i_from_pu[ln.id] * base
        worst = max(i_from_pu[ln.id] * base,
                    i_to_pu[ln.id] * grid.i_base_amps(ln.to_bus))
        loading[ln.id] = 100.0 * worst / ln.rating_amps
    return PfSolution(
        v_mag_pu=v.copy(),
        v_ang_rad=th.copy(),
        i_line_amps=i_from_amps,
        loading_pct=loading,
        p_slack_kw=float(s_slack.real) * s_base_kw,
        q_slack_kvar=float(s_slack.imag) * s_base_kw,
        iterations=iterations,
        max_mismatch=float(mismatch),
    )


def _branch_currents(view: GridView, vc: np.ndarray):
    grid = view.grid
    n_line = len(grid.lines)
    i_from = np.zeros(n_line)
    i_to = np.zeros(n_line)
    for ln in grid.lines:
        if not view.line_in_service[ln.id]:
            continue
        r, x, b = grid.line_pu(ln)
        y_s = 1.0 / complex(r, x)
        y_sh = 0.5j * b
        vi, vj = vc[ln.from_bus], vc[ln.to_bus]
        i_from[ln.id] = abs(y_s * (vi - vj) + y_sh * vi)
        i_to[ln.id] = abs(y_s * (vj - vi) + y_sh * vj)
    return i_from, i_to


@dataclass(frozen=True)
class LineFlows:
    """Complex power leaving each line end, per-unit, aligned with line ids."""

    p_from_pu: np.ndarray
    q_from_pu: np.ndarray
    p_to_pu: np.ndarray
    q_to_pu: np.ndarray

    @property
    def losses_pu(self) -> np.ndarray:
        return self.p_from_pu + self.p_to_pu


def derive_line_quantities(solution: PfSolution, view: GridView) -> LineFlows:
    """Per-line complex flows at both ends, from the converged state."""
    grid = view.grid
    vc = _complex_voltage(solution.v_mag_pu, solution.v_ang_rad)
    n_line = len(grid.lines)
    p_f = np.zeros(n_line)
    q_f = np.zeros(n_line)
    p_t = np.zeros(n_line)
    q_t = np.zeros(n_line)
    for ln in grid.lines:
        if not view.line_in_service[ln.id]:
            continue
        r, x, b = grid.line_pu(ln)
        y_s = 1.0 / complex(r, x)
        y_sh = 0.5j * b
        vi, vj = vc[ln.from_bus], vc[ln.to_bus]
        s_f = vi * np.conj(y_s * (vi - vj) + y_sh * vi)
        s_t = vj * np.conj(y_s * (vj - vi) + y_sh * vj)
        p_f[ln.id], q_f[ln.id] = s_f.real, s_f.imag
        p_t[ln.id], q_t[ln.id] = s_t.real, s_t.imag
    return LineFlows(p_from_pu=p_f, q_from_pu=q_f, p_to_pu=p_t, q_to_pu=q_t)
