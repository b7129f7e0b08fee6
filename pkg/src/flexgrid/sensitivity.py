"""Voltage/current sensitivity coefficients, two ways.

``sensitivities_model_based`` differentiates the power-flow oracle with
central finite differences. ``sensitivities_model_less`` never sees the
grid impedances: it fits the same coefficients by ridge-regularized
least squares on consecutive measurement deltas, the way a monitoring
platform would on a feeder with unknown parameters.

Coefficients are derivatives with respect to consumption-positive bus
powers, so on a radial feeder the own-bus voltage entries come out
negative (more load depresses the local voltage).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditionedError, InsufficientDataError
from .gridmodel import GridModel
from .powerflow import OperatingPoint, solve_power_flow

DEFAULT_FD_STEP = 1e-4
DEFAULT_RIDGE = 1e-8
CONDITION_LIMIT = 1e8
LOW_CURRENT_THRESHOLD = 1e-4


@dataclass(frozen=True)
class SensitivitySet:
    """First-order response of V and I to nodal P/Q changes.

    Matrices are dense over the full grid ordering; for the model-less
    method the rows of unmonitored elements are zero and listed in
    ``missing_bus_rows``/``missing_branch_rows``.
    """

    bus_ids: tuple[str, ...]
    branch_ids: tuple[str, ...]
    k_vp: np.ndarray
    k_vq: np.ndarray
    k_ip: np.ndarray
    k_iq: np.ndarray
    method: str
    anchor: OperatingPoint | None = None
    condition: dict | None = None
    missing_bus_rows: tuple[str, ...] = ()
    missing_branch_rows: tuple[str, ...] = ()
    low_current_branches: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def predict(self, dp: np.ndarray, dq: np.ndarray):
        """Linear ΔV and ΔI for nodal power changes (consumption positive)."""
        dv = self.k_vp @ dp + self.k_vq @ dq
        di = self.k_ip @ dp + self.k_iq @ dq
        return dv, di

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "bus_order": list(self.bus_ids),
            "branch_order": list(self.branch_ids),
            "k_vp": self.k_vp.tolist(),
            "k_vq": self.k_vq.tolist(),
            "k_ip": self.k_ip.tolist(),
            "k_iq": self.k_iq.tolist(),
            "condition": self.condition,
            "missing_bus_rows": list(self.missing_bus_rows),
            "missing_branch_rows": list(self.missing_branch_rows),
            "low_current_branches": list(self.low_current_branches),
            "meta": self.meta,
        }


def sensitivities_model_based(
    grid: GridModel, point: OperatingPoint, step: float = DEFAULT_FD_STEP
) -> SensitivitySet:
    """Central finite differences of the power-flow oracle around a point.

    Each bus's P (then Q) is perturbed by ±step p.u. and the network is
    re-solved; any perturbed solve may raise NonConvergenceError.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be > 0")
    n_bus = len(grid.buses)
    n_branch = len(grid.branches)
    k_vp = np.zeros((n_bus, n_bus))
    k_vq = np.zeros((n_bus, n_bus))
    k_ip = np.zeros((n_branch, n_bus))
    k_iq = np.zeros((n_branch, n_bus))

    base_p = {b: float(point.p[k]) for k, b in enumerate(grid.bus_ids)}
    base_q = {b: float(point.q[k]) for k, b in enumerate(grid.bus_ids)}
    for col, bus_id in enumerate(grid.bus_ids):
        for which, k_v, k_i in (("p", k_vp, k_ip), ("q", k_vq, k_iq)):
            p_hi, q_hi = dict(base_p), dict(base_q)
            p_lo, q_lo = dict(base_p), dict(base_q)
            if which == "p":
                p_hi[bus_id] += step
                p_lo[bus_id] -= step
            else:
                q_hi[bus_id] += step
                q_lo[bus_id] -= step
            hi = solve_power_flow(grid, p_hi, q_hi)
            lo = solve_power_flow(grid, p_lo, q_lo)
            k_v[:, col] = (hi.v - lo.v) / (2.0 * step)
            k_i[:, col] = (hi.i_mag - lo.i_mag) / (2.0 * step)

    return SensitivitySet(
        bus_ids=grid.bus_ids,
        branch_ids=grid.branch_ids,
        k_vp=k_vp,
        k_vq=k_vq,
        k_ip=k_ip,
        k_iq=k_iq,
        method="model_based",
        anchor=point,
        meta={"step": step},
    )


def sensitivities_model_less(
    grid: GridModel,
    frames,
    window: int,
    ridge: float = DEFAULT_RIDGE,
) -> SensitivitySet:
    """Fit sensitivity rows from measurement deltas, no grid parameters.

    Uses the trailing ``window`` frames; regressors are the
    consecutive-frame ΔP and ΔQ of every bus, responses the ΔV of each
    monitored bus and ΔI of each monitored branch. Branches whose
    window-mean current is below 1e-4 p.u. sit on the |I| kink; their
    rows are flagged in ``low_current_branches`` (the fit then reads the
    i_pu column as signed from-end current, which is what synthetic
    producers emit there).
    """
    n_bus = len(grid.buses)
    n_regressors = 2 * n_bus
    if window < 2 * n_regressors:
        raise InsufficientDataError(
            f"window of {window} frames < 2 x {n_regressors} regressors"
        )
    if len(frames) < window:
        raise InsufficientDataError(
            f"only {len(frames)} frames available for a window of {window}"
        )
    frames = list(frames)[-window:]

    monitored_buses = [b for b in grid.bus_ids if b in frames[0].v]
    monitored_branches = [br for br in grid.branch_ids if br in frames[0].i]

    p = np.array([[f.p[b] for b in grid.bus_ids] for f in frames])
    q = np.array([[f.q[b] for b in grid.bus_ids] for f in frames])
    design = np.hstack((np.diff(p, axis=0), np.diff(q, axis=0)))
    if design.size == 0 or np.max(np.abs(design)) < 1e-12:
        raise InsufficientDataError("all measurement deltas are zero")

    gram = design.T @ design + ridge * np.eye(n_regressors)
    cond = float(np.linalg.cond(gram))
    if cond > CONDITION_LIMIT:
        raise IllConditionedError(
            f"regression condition number {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )

    k_vp = np.zeros((n_bus, n_bus))
    k_vq = np.zeros((n_bus, n_bus))
    k_ip = np.zeros((len(grid.branches), n_bus))
    k_iq = np.zeros((len(grid.branches), n_bus))
    condition = {}

    if monitored_buses:
        v = np.array([[f.v[b] for b in monitored_buses] for f in frames])
        coeff = np.linalg.solve(gram, design.T @ np.diff(v, axis=0))
        for col, bus_id in enumerate(monitored_buses):
            row = grid.bus_index[bus_id]
            k_vp[row] = coeff[:n_bus, col]
            k_vq[row] = coeff[n_bus:, col]
            condition[f"V:{bus_id}"] = cond
    low_current = []
    if monitored_branches:
        i = np.array([[f.i[br] for br in monitored_branches] for f in frames])
        coeff = np.linalg.solve(gram, design.T @ np.diff(i, axis=0))
        for col, branch_id in enumerate(monitored_branches):
            row = grid.branch_index[branch_id]
            k_ip[row] = coeff[:n_bus, col]
            k_iq[row] = coeff[n_bus:, col]
            condition[f"I:{branch_id}"] = cond
            if np.mean(np.abs(i[:, col])) < LOW_CURRENT_THRESHOLD:
                low_current.append(branch_id)

    return SensitivitySet(
        bus_ids=grid.bus_ids,
        branch_ids=grid.branch_ids,
        k_vp=k_vp,
        k_vq=k_vq,
        k_ip=k_ip,
        k_iq=k_iq,
        method="model_less",
        anchor=None,
        condition=condition,
        missing_bus_rows=tuple(b for b in grid.bus_ids if b not in frames[0].v),
        missing_branch_rows=tuple(br for br in grid.branch_ids if br not in frames[0].i),
        low_current_branches=tuple(low_current),
        meta={"window": window, "ridge": ridge},
    )
