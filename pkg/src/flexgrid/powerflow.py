"""Newton-Raphson AC power flow for radial LV grids.

This is the nonlinear oracle behind everything else: it creates
operating points from measurement frames, validates the linearized
model, and backs the finite-difference sensitivity estimator. All buses
except the slack are PQ; the slack is held at 1.0 p.u., angle 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError, ValidationError
from .gridmodel import GridModel, MeasurementFrame, format_rfc3339

DEFAULT_TOL = 1e-8
MAX_ITERATIONS = 50


@dataclass(frozen=True)
class OperatingPoint:
    """Per-slot grid state in per-unit.

    ``p``/``q`` are the nodal powers as given (consumption positive);
    ``slack_p``/``slack_q`` are supply-positive at the MV/LV interface,
    including the slack bus's own local load.
    """

    bus_ids: tuple[str, ...]
    branch_ids: tuple[str, ...]
    v: np.ndarray
    theta: np.ndarray
    i_mag: np.ndarray
    p: np.ndarray
    q: np.ndarray
    slack_p: float
    slack_q: float
    mismatch: float
    source: str = "solved"

    @property
    def s_grid(self) -> float:
        return float(np.hypot(self.slack_p, self.slack_q))

    def v_at(self, bus_id: str) -> float:
        return float(self.v[self.bus_ids.index(bus_id)])

    def i_at(self, branch_id: str) -> float:
        return float(self.i_mag[self.branch_ids.index(branch_id)])

    def to_json_dict(self) -> dict:
        return {
            "source": self.source,
            "mismatch": self.mismatch,
            "slack_p_pu": self.slack_p,
            "slack_q_pu": self.slack_q,
            "s_grid_pu": self.s_grid,
            "buses": {
                bus: {
                    "v_pu": float(self.v[k]),
                    "theta_rad": float(self.theta[k]),
                    "p_pu": float(self.p[k]),
                    "q_pu": float(self.q[k]),
                }
                for k, bus in enumerate(self.bus_ids)
            },
            "branches": {
                br: {"i_pu": float(self.i_mag[k])} for k, br in enumerate(self.branch_ids)
            },
        }


def _admittance_matrix(grid: GridModel) -> np.ndarray:
    n = len(grid.buses)
    ybus = np.zeros((n, n), dtype=complex)
    for br in grid.branches:
        f = grid.bus_index[br.from_bus]
        t = grid.bus_index[br.to_bus]
        y = 1.0 / complex(br.r_pu, br.x_pu)
        ybus[f, f] += y
        ybus[t, t] += y
        ybus[f, t] -= y
        ybus[t, f] -= y
    return ybus


def _injection_arrays(grid: GridModel, p: dict, q: dict):
    missing = set(grid.bus_ids) - set(p) | set(grid.bus_ids) - set(q)
    if missing:
        raise ValidationError(f"injections missing for buses {sorted(missing)}")
    p_arr = np.array([p[b] for b in grid.bus_ids], dtype=float)
    q_arr = np.array([q[b] for b in grid.bus_ids], dtype=float)
    return p_arr, q_arr


def solve_power_flow(
    grid: GridModel,
    p: dict,
    q: dict,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> OperatingPoint:
    """Solve the AC power flow for consumption-positive injections.

    Flat start, convergence on the infinity norm of the nodal power
    mismatch. Raises :class:`NonConvergenceError` (carrying the last
    mismatch norm) when the iteration cap is hit or the state degenerates.
    """
    p_arr, q_arr = _injection_arrays(grid, p, q)
    n = len(grid.buses)
    slack = grid.bus_index[grid.slack_bus_id]
    pq = np.array([k for k in range(n) if k != slack], dtype=int)
    ybus = _admittance_matrix(grid)

    # network equations use injection-positive powers
    p_spec = -p_arr
    q_spec = -q_arr

    v = np.ones(n)
    theta = np.zeros(n)
    mismatch_norm = np.inf
    for _ in range(max_iter):
        u = v * np.exp(1j * theta)
        s_calc = u * np.conj(ybus @ u)
        dp = p_spec[pq] - s_calc[pq].real
        dq = q_spec[pq] - s_calc[pq].imag
        mismatch_norm = float(np.max(np.abs(np.concatenate((dp, dq))))) if len(pq) else 0.0
        if not np.isfinite(mismatch_norm):
            raise NonConvergenceError(
                "power flow diverged (non-finite mismatch)", mismatch=mismatch_norm
            )
        if mismatch_norm <= tol:
            return _finish(grid, ybus, u, p_arr, q_arr, slack, mismatch_norm)

        ibus = ybus @ u
        diag_u = np.diag(u)
        diag_i = np.diag(ibus)
        diag_unit = np.diag(u / v)
        ds_dva = 1j * diag_u @ np.conj(diag_i - ybus @ diag_u)
        ds_dvm = diag_unit @ np.conj(diag_i) + diag_u @ np.conj(ybus @ diag_unit)
        jac = np.block(
            [
                [ds_dva[np.ix_(pq, pq)].real, ds_dvm[np.ix_(pq, pq)].real],
                [ds_dva[np.ix_(pq, pq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
            ]
        )
        try:
            step = np.linalg.solve(jac, np.concatenate((dp, dq)))
        except np.linalg.LinAlgError:
            raise NonConvergenceError(
                "power flow Jacobian is singular", mismatch=mismatch_norm
            ) from None
        theta[pq] += step[: len(pq)]
        v[pq] += step[len(pq):]
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise NonConvergenceError(
                "power flow diverged (voltage collapse)", mismatch=mismatch_norm
            )

    raise NonConvergenceError(
        f"power flow did not converge in {max_iter} iterations "
        f"(last mismatch {mismatch_norm:.3e} p.u.)",
        mismatch=mismatch_norm,
    )


def _finish(grid, ybus, u, p_arr, q_arr, slack, mismatch_norm) -> OperatingPoint:
    i_mag = np.zeros(len(grid.branches))
    for k, br in enumerate(grid.branches):
        f = grid.bus_index[br.from_bus]
        t = grid.bus_index[br.to_bus]
        i_mag[k] = abs((u[f] - u[t]) / complex(br.r_pu, br.x_pu))
    s_slack_net = u[slack] * np.conj(ybus[slack] @ u)
    # transformer supplies the feeder plus the slack bus's local load
    slack_p = float(s_slack_net.real + p_arr[slack])
    slack_q = float(s_slack_net.imag + q_arr[slack])
    return OperatingPoint(
        bus_ids=grid.bus_ids,
        branch_ids=grid.branch_ids,
        v=np.abs(u),
        theta=np.angle(u),
        i_mag=i_mag,
        p=p_arr,
        q=q_arr,
        slack_p=slack_p,
        slack_q=slack_q,
        mismatch=mismatch_norm,
    )


def operating_point_from_frame(grid: GridModel, frame: MeasurementFrame) -> OperatingPoint:
    """Solve the grid state for a frame, then overlay measured values.

    Measured V/I from monitoring devices take precedence over the
    solved state; a point with any overwrite is tagged ``measured``.
    """
    missing = set(grid.bus_ids) - set(frame.p)
    if missing:
        raise ValidationError(
            f"frame {format_rfc3339(frame.timestamp)} missing P/Q for buses "
            f"{sorted(missing)}"
        )
    point = solve_power_flow(grid, frame.p, frame.q)
    if not frame.v and not frame.i:
        return point
    v = point.v.copy()
    for bus_id, value in frame.v.items():
        v[grid.bus_index[bus_id]] = value
    i_mag = point.i_mag.copy()
    for branch_id, value in frame.i.items():
        i_mag[grid.branch_index[branch_id]] = value
    return OperatingPoint(
        bus_ids=point.bus_ids,
        branch_ids=point.branch_ids,
        v=v,
        theta=point.theta,
        i_mag=i_mag,
        p=point.p,
        q=point.q,
        slack_p=point.slack_p,
        slack_q=point.slack_q,
        mismatch=point.mismatch,
        source="measured",
    )
