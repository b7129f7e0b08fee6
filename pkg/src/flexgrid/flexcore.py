"""Flexibility index over an axis-aligned uncertainty box.

A time slot's uncertainty (bus loads incl. EV charging, PV production)
is a hyper-rectangle around the expected operating point. The grid's
voltage, branch-current, and transformer limits become linear rows in
the uncertain parameters via the sensitivity coefficients. The index F
is the largest uniform scaling of the box that still fits inside the
feasible polytope; F < 1 means the slot cannot absorb its uncertainty.

Because the rows are linear and the box is axis-aligned, the inner
maximization over directions is separable and F has an exact closed
form: per row, the worst-case growth is the sum of per-parameter maxima
of {0, +coeff * up_width, -coeff * down_width}, and F is the smallest
slack-to-growth ratio. The brute-force direction oracle used in the
tests enumerates {-1, 0, 1}^n and must agree to 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AnchorMismatchError,
    MissingSensitivityRowError,
    OriginInfeasibleError,
    UnknownParameterError,
    ValidationError,
)
from .gridmodel import GridModel
from .powerflow import OperatingPoint
from .sensitivity import SensitivitySet

PARAM_KINDS = ("load_p", "pv_p")
TRAFO_LINEARIZATION_FLOOR = 1e-3
DEFAULT_REGION_CAP = 5.0


def make_param_id(kind: str, bus_id: str) -> str:
    return f"{'pv' if kind == 'pv_p' else 'load'}@{bus_id}"


@dataclass(frozen=True)
class UncertainParameter:
    """One uncertain injection: expected value plus asymmetric half-widths.

    ``x_tilde`` is in natural units (PV parameters measure production
    magnitude, so their grid injection is the negative of the value).
    """

    id: str
    bus_id: str
    kind: str
    x_tilde: float
    dx_up: float
    dx_dn: float
    tan_phi: float = 0.0

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValidationError(f"parameter {self.id!r}: unknown kind {self.kind!r}")
        if self.dx_up < 0 or self.dx_dn < 0:
            raise ValidationError(f"parameter {self.id!r}: half-widths must be >= 0")
        if self.dx_up == 0 and self.dx_dn == 0:
            raise ValidationError(f"parameter {self.id!r}: both half-widths are zero")

    @property
    def sign(self) -> float:
        """Injection sign: +1 consumption-positive load, -1 PV production."""
        return -1.0 if self.kind == "pv_p" else 1.0


@dataclass(frozen=True)
class UncertaintyModel:
    parameters: tuple[UncertainParameter, ...]
    ids: tuple[str, ...] = field(init=False, compare=False)
    x_tilde: np.ndarray = field(init=False, compare=False, repr=False)
    dx_up: np.ndarray = field(init=False, compare=False, repr=False)
    dx_dn: np.ndarray = field(init=False, compare=False, repr=False)
    tan_phi: np.ndarray = field(init=False, compare=False, repr=False)
    signs: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.parameters) < 1:
            raise ValidationError("uncertainty model needs at least one parameter")
        ids = tuple(p.id for p in self.parameters)
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate uncertain-parameter ids")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "x_tilde", np.array([p.x_tilde for p in self.parameters]))
        object.__setattr__(self, "dx_up", np.array([p.dx_up for p in self.parameters]))
        object.__setattr__(self, "dx_dn", np.array([p.dx_dn for p in self.parameters]))
        object.__setattr__(self, "tan_phi", np.array([p.tan_phi for p in self.parameters]))
        object.__setattr__(self, "signs", np.array([p.sign for p in self.parameters]))

    @property
    def n(self) -> int:
        return len(self.parameters)

    def index_of(self, param_id: str) -> int:
        try:
            return self.ids.index(param_id)
        except ValueError:
            raise UnknownParameterError(f"unknown uncertain parameter {param_id!r}") from None

    def psi(self, d: np.ndarray) -> np.ndarray:
        """Per-parameter displacement at unit scale along direction d."""
        return np.where(d >= 0, d * self.dx_up, d * self.dx_dn)

    def scaled(self, factor: float) -> "UncertaintyModel":
        """Same expected point, all half-widths multiplied by ``factor``."""
        return UncertaintyModel(
            parameters=tuple(
                UncertainParameter(
                    id=p.id,
                    bus_id=p.bus_id,
                    kind=p.kind,
                    x_tilde=p.x_tilde,
                    dx_up=p.dx_up * factor,
                    dx_dn=p.dx_dn * factor,
                    tan_phi=p.tan_phi,
                )
                for p in self.parameters
            )
        )


@dataclass(frozen=True)
class Direction:
    """Direction vector in the uncertainty box: entries in [-1, 1], at
    least one saturated so that (direction, scale) pairs are unique."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("direction must be a nonempty vector")
        peak = float(np.max(np.abs(values)))
        if peak > 1 + 1e-12 or peak < 1 - 1e-12:
            raise ValidationError(
                f"direction entries must lie in [-1, 1] with max |d_i| = 1, got peak {peak}"
            )


@dataclass(frozen=True)
class ConstraintRow:
    label: str
    coeffs: np.ndarray
    slack: float


@dataclass(frozen=True)
class LinearConstraintSystem:
    """Grid limits recast as rows a . (X - X~) <= slack around the anchor."""

    rows: tuple[ConstraintRow, ...]
    param_ids: tuple[str, ...]
    anchor: OperatingPoint | None = None
    sensitivities: SensitivitySet | None = None

    @property
    def origin_feasible(self) -> bool:
        return all(row.slack >= 0 for row in self.rows)


@dataclass(frozen=True)
class FlexibilityResult:
    f: float
    critical_direction: Direction | None
    boundary_point: np.ndarray | None
    binding_constraint: str | None
    origin_feasible: bool
    adequate: bool

    def to_json_dict(self, param_ids) -> dict:
        direction = None
        if self.critical_direction is not None:
            direction = {
                pid: float(v) for pid, v in zip(param_ids, self.critical_direction.values)
            }
        boundary = None
        if self.boundary_point is not None:
            boundary = {pid: float(v) for pid, v in zip(param_ids, self.boundary_point)}
        return {
            "F": None if math.isinf(self.f) else self.f,
            "adequate": self.adequate,
            "binding_constraint": self.binding_constraint,
            "critical_direction": direction,
            "boundary_point": boundary,
            "origin_feasible": self.origin_feasible,
        }


def _effective_coeffs(unc: UncertaintyModel, k_p_row: np.ndarray, k_q_row: np.ndarray,
                      bus_cols: np.ndarray) -> np.ndarray:
    # fold the constant-power-factor reactive coupling into one
    # coefficient per parameter, with the injection sign applied
    return unc.signs * (k_p_row[bus_cols] + unc.tan_phi * k_q_row[bus_cols])


def assemble_constraints(
    grid: GridModel,
    point: OperatingPoint,
    sens: SensitivitySet,
    unc: UncertaintyModel,
) -> LinearConstraintSystem:
    """Build all voltage, current, and transformer rows around a point.

    Per bus two voltage rows, per branch two current rows, plus the
    linearized transformer apparent-power row (eight octagon rows when
    the anchor flow is too small for the gradient to be defined).
    """
    if sens.anchor is not None and sens.anchor is not point:
        if (
            sens.anchor.bus_ids != point.bus_ids
            or not np.allclose(sens.anchor.v, point.v, atol=1e-9)
            or not np.allclose(sens.anchor.p, point.p, atol=1e-9)
            or not np.allclose(sens.anchor.q, point.q, atol=1e-9)
        ):
            raise AnchorMismatchError(
                "sensitivity set was estimated around a different operating point"
            )

    missing_buses = set(sens.missing_bus_rows)
    missing_branches = set(sens.missing_branch_rows)
    if missing_buses or missing_branches:
        raise MissingSensitivityRowError(
            f"no sensitivity rows for buses {sorted(missing_buses)} / "
            f"branches {sorted(missing_branches)}; all limited elements need a row"
        )

    bus_cols = np.array([grid.bus_index[p.bus_id] for p in unc.parameters], dtype=int)
    rows = []
    for m, bus in enumerate(grid.buses):
        coeffs = _effective_coeffs(unc, sens.k_vp[m], sens.k_vq[m], bus_cols)
        v0 = float(point.v[m])
        rows.append(ConstraintRow(f"V+:{bus.id}", coeffs, bus.v_max - v0))
        rows.append(ConstraintRow(f"V-:{bus.id}", -coeffs, v0 - bus.v_min))
    for l, branch in enumerate(grid.branches):
        coeffs = _effective_coeffs(unc, sens.k_ip[l], sens.k_iq[l], bus_cols)
        i0 = float(point.i_mag[l])
        rows.append(ConstraintRow(f"I+:{branch.id}", coeffs, branch.i_max_pu - i0))
        rows.append(ConstraintRow(f"I-:{branch.id}", -coeffs, i0 + branch.i_max_pu))
    rows.extend(_transformer_rows(grid, point, unc))
    return LinearConstraintSystem(
        rows=tuple(rows), param_ids=unc.ids, anchor=point, sensitivities=sens
    )


def _transformer_rows(grid, point, unc):
    """Linearize S_grid <= S_max; lossless aggregation of parameter changes."""
    s_max = grid.transformer.s_max_pu
    p0, q0 = point.slack_p, point.slack_q
    s0 = point.s_grid
    dq_factor = unc.signs * unc.tan_phi
    if s0 >= TRAFO_LINEARIZATION_FLOOR:
        coeffs = (p0 * unc.signs + q0 * dq_factor) / s0
        return [ConstraintRow("S:trafo", coeffs, s_max - s0)]
    # near-zero flow: the gradient of |S| is undefined, fall back to an
    # octagonal inner approximation of the transformer disc
    rows = []
    radius = s_max * math.cos(math.pi / 8)
    for k in range(8):
        phi = (2 * k + 1) * math.pi / 8
        c, s = math.cos(phi), math.sin(phi)
        coeffs = c * unc.signs + s * dq_factor
        rows.append(ConstraintRow(f"S:trafo:oct{k}", coeffs, radius - (c * p0 + s * q0)))
    return rows


def _check_bound(sys: LinearConstraintSystem, unc: UncertaintyModel):
    if sys.param_ids != unc.ids:
        raise ValidationError(
            "constraint system and uncertainty model use different parameter orderings"
        )


def beta_max(sys: LinearConstraintSystem, unc: UncertaintyModel, d: Direction) -> float:
    """Largest feasible scale along one direction (may be +inf).

    Requires a feasible origin; a row caps the scale only if its growth
    along the direction is positive.
    """
    _check_bound(sys, unc)
    negative = [row for row in sys.rows if row.slack < 0]
    if negative:
        worst = min(negative, key=lambda row: (row.slack, row.label))
        raise OriginInfeasibleError(
            f"anchor violates {worst.label} by {-worst.slack:.6g}"
        )
    psi = unc.psi(d.values)
    best = math.inf
    for row in sys.rows:
        growth = float(row.coeffs @ psi)
        if growth > 0:
            best = min(best, row.slack / growth)
    return best


def _row_growth(coeffs: np.ndarray, unc: UncertaintyModel):
    """Worst-case growth of one row over the direction box, with the
    maximizing direction (entries in {-1, 0, 1})."""
    up = coeffs * unc.dx_up
    down = -coeffs * unc.dx_dn
    per_term = np.maximum(0.0, np.maximum(up, down))
    d = np.zeros(unc.n)
    active = per_term > 0
    d[active & (up >= down)] = 1.0
    d[active & (down > up)] = -1.0
    return float(np.sum(per_term)), d


def flexibility_index(sys: LinearConstraintSystem, unc: UncertaintyModel) -> FlexibilityResult:
    """Exact closed-form flexibility index with critical direction.

    Equals inf over all valid directions of :func:`beta_max`; ties
    between binding rows break on lexicographic row label.
    """
    _check_bound(sys, unc)
    negative = [row for row in sys.rows if row.slack < 0]
    if negative:
        worst = min(negative, key=lambda row: (row.slack, row.label))
        return FlexibilityResult(
            f=0.0,
            critical_direction=None,
            boundary_point=unc.x_tilde.copy(),
            binding_constraint=worst.label,
            origin_feasible=False,
            adequate=False,
        )

    best_ratio = math.inf
    best_label = None
    best_d = None
    for row in sorted(sys.rows, key=lambda r: r.label):
        growth, d = _row_growth(row.coeffs, unc)
        if growth <= 0:
            continue
        ratio = row.slack / growth
        if ratio < best_ratio:
            best_ratio, best_label, best_d = ratio, row.label, d

    if best_label is None:
        return FlexibilityResult(
            f=math.inf,
            critical_direction=None,
            boundary_point=None,
            binding_constraint=None,
            origin_feasible=True,
            adequate=True,
        )
    direction = Direction(best_d)
    boundary = unc.x_tilde + best_ratio * unc.psi(best_d)
    return FlexibilityResult(
        f=best_ratio,
        critical_direction=direction,
        boundary_point=boundary,
        binding_constraint=best_label,
        origin_feasible=True,
        adequate=best_ratio >= 1.0,
    )


def trace_feasible_region_2d(
    sys: LinearConstraintSystem,
    unc: UncertaintyModel,
    param_pair: tuple[str, str],
    samples: int,
    cap: float = DEFAULT_REGION_CAP,
) -> list[tuple[float, float, float]]:
    """Boundary polygon of the feasible region in a 2-D parameter slice.

    All other parameters stay pinned at their expected values. Each
    sample is (theta, value1, value2) at the feasibility boundary along
    the saturated direction for theta, capped at ``cap`` box-scales; the
    first point is repeated at the end to close the polygon.
    """
    _check_bound(sys, unc)
    if samples < 3:
        raise ValidationError("need at least 3 polygon samples")
    i1 = unc.index_of(param_pair[0])
    i2 = unc.index_of(param_pair[1])
    if i1 == i2:
        raise UnknownParameterError("the two region parameters must differ")
    points = []
    for k in range(samples):
        theta = 2.0 * math.pi * k / samples
        c, s = math.cos(theta), math.sin(theta)
        scale = max(abs(c), abs(s))
        d = np.zeros(unc.n)
        d[i1] = c / scale
        d[i2] = s / scale
        beta = min(beta_max(sys, unc, Direction(d)), cap)
        psi = unc.psi(d)
        points.append(
            (
                theta,
                float(unc.x_tilde[i1] + beta * psi[i1]),
                float(unc.x_tilde[i2] + beta * psi[i2]),
            )
        )
    points.append(points[0])
    return points


def apply_parameter_values(
    unc: UncertaintyModel, base_p: dict, base_q: dict, values: np.ndarray
):
    """Map a parameter-space point back to nodal P/Q injections.

    Starting from the anchor injections, each parameter shifts its bus
    by its deviation from the expected value (PV with inverted sign,
    loads dragging reactive power along at constant power factor).
    """
    p = dict(base_p)
    q = dict(base_q)
    for k, par in enumerate(unc.parameters):
        delta = float(values[k]) - par.x_tilde
        p[par.bus_id] += par.sign * delta
        q[par.bus_id] += par.sign * par.tan_phi * delta
    return p, q
