"""Slot-by-slot flexibility sweep over a measurement series.

For each frame: solve the state, estimate sensitivities, build the
uncertainty box from the policy, assemble constraints, compute the
index. Slots that fail (non-convergence, not enough history for the
model-less window) are reported with an error marker instead of being
dropped, so the report always has one row per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime

from .errors import (
    ComputationError,
    EmptyUncertaintyError,
    InsufficientDataError,
    ValidationError,
)
from .flexcore import (
    FlexibilityResult,
    UncertainParameter,
    UncertaintyModel,
    assemble_constraints,
    flexibility_index,
    make_param_id,
)
from .gridmodel import GridModel, MeasurementFrame, format_rfc3339
from .powerflow import operating_point_from_frame
from .sensitivity import (
    DEFAULT_FD_STEP,
    DEFAULT_RIDGE,
    sensitivities_model_based,
    sensitivities_model_less,
)

POLICY_MODES = ("fractional", "absolute", "forecast_band")
DEFAULT_LOAD_FRACTION = 0.2
DEFAULT_PV_FRACTION = 0.3
DEFAULT_LOAD_TAN_PHI = 0.3


@dataclass(frozen=True)
class UncertaintyPolicy:
    """How per-slot half-widths are derived from the expected point.

    fractional: widths are a fraction of the expected value.
    absolute:   fixed per-kind widths in p.u.
    forecast_band: min/max over same-time-of-day frames in ``history``.
    """

    mode: str = "fractional"
    load_fraction: float = DEFAULT_LOAD_FRACTION
    pv_fraction: float = DEFAULT_PV_FRACTION
    load_band_pu: float = 0.02
    pv_band_pu: float = 0.05
    load_tan_phi: float = DEFAULT_LOAD_TAN_PHI
    history: tuple = ()

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValidationError(f"unknown uncertainty policy mode {self.mode!r}")
        for name in ("load_fraction", "pv_fraction", "load_band_pu", "pv_band_pu"):
            if getattr(self, name) < 0:
                raise ValidationError(f"policy {name} must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "load_fraction": self.load_fraction,
            "pv_fraction": self.pv_fraction,
            "load_band_pu": self.load_band_pu,
            "pv_band_pu": self.pv_band_pu,
            "load_tan_phi": self.load_tan_phi,
            "history_frames": len(self.history),
        }


def _bus_shares(frame: MeasurementFrame, bus) -> tuple[float, float]:
    """Split a bus's net power into (load, pv_production) shares.

    Only the net is observable; on buses carrying both tags the net is
    attributed to the dominant side and the other share reads zero.
    """
    net = frame.p[bus.id]
    has_load = "load" in bus.resources or "ev" in bus.resources
    has_pv = "pv" in bus.resources
    if has_load and has_pv:
        return max(net, 0.0), max(-net, 0.0)
    if has_pv:
        return 0.0, max(-net, 0.0)
    return net, 0.0


def _band_from_history(policy, bus, kind, x_tilde, timestamp):
    values = []
    for frame in policy.history:
        if (frame.timestamp.hour, frame.timestamp.minute) != (
            timestamp.hour,
            timestamp.minute,
        ):
            continue
        load_share, pv_share = _bus_shares(frame, bus)
        values.append(pv_share if kind == "pv_p" else load_share)
    if not values:
        raise InsufficientDataError(
            f"forecast_band policy has no history for time of day "
            f"{timestamp.hour:02d}:{timestamp.minute:02d}"
        )
    return max(max(values) - x_tilde, 0.0), max(x_tilde - min(values), 0.0)


def build_uncertainty(
    frame: MeasurementFrame, policy: UncertaintyPolicy, grid: GridModel
) -> UncertaintyModel:
    """One uncertain parameter per tagged resource of each bus.

    Loads (EV charging included in the bus band) and PV become separate
    parameters; PV down-widths are floored so production cannot go
    negative. Parameters whose widths both collapse to zero (e.g. PV at
    night under a fractional policy) are dropped.
    """
    parameters = []
    for bus in grid.buses:
        load_share, pv_share = _bus_shares(frame, bus)
        if "load" in bus.resources or "ev" in bus.resources:
            if policy.mode == "fractional":
                up = dn = policy.load_fraction * abs(load_share)
            elif policy.mode == "absolute":
                up = dn = policy.load_band_pu
            else:
                up, dn = _band_from_history(
                    policy, bus, "load_p", load_share, frame.timestamp
                )
            if up > 0 or dn > 0:
                parameters.append(
                    UncertainParameter(
                        id=make_param_id("load_p", bus.id),
                        bus_id=bus.id,
                        kind="load_p",
                        x_tilde=load_share,
                        dx_up=up,
                        dx_dn=dn,
                        tan_phi=policy.load_tan_phi,
                    )
                )
        if "pv" in bus.resources:
            if policy.mode == "fractional":
                up = dn = policy.pv_fraction * pv_share
            elif policy.mode == "absolute":
                up = dn = policy.pv_band_pu
            else:
                up, dn = _band_from_history(
                    policy, bus, "pv_p", pv_share, frame.timestamp
                )
            dn = min(dn, pv_share)  # production cannot go negative
            if up > 0 or dn > 0:
                parameters.append(
                    UncertainParameter(
                        id=make_param_id("pv_p", bus.id),
                        bus_id=bus.id,
                        kind="pv_p",
                        x_tilde=pv_share,
                        dx_up=up,
                        dx_dn=dn,
                        tan_phi=0.0,
                    )
                )
    if not parameters:
        raise EmptyUncertaintyError(
            f"frame {format_rfc3339(frame.timestamp)}: no uncertain parameters "
            f"(no tagged resources or all bands degenerate)"
        )
    return UncertaintyModel(parameters=tuple(parameters))


@dataclass(frozen=True)
class SlotReport:
    """One row of the per-slot flexibility report."""

    timestamp: datetime
    f_raw: float
    f_display: float
    adequate: bool
    binding_constraint: str | None
    load_total_pu: float
    pv_total_pu: float
    error: str | None = None
    result: FlexibilityResult | None = field(default=None, compare=False)
    uncertainty: UncertaintyModel | None = field(default=None, compare=False)

    @property
    def failed(self) -> bool:
        return self.error is not None


def _display_value(raw: float) -> float:
    return round(min(raw, 1.0), 2)


def run_series(
    grid: GridModel,
    frames,
    sens_mode: str = "model_based",
    policy: UncertaintyPolicy | None = None,
    window: int | None = None,
    ridge: float = DEFAULT_RIDGE,
    fd_step: float = DEFAULT_FD_STEP,
) -> list[SlotReport]:
    """One report per frame, deterministic, errors embedded per slot.

    With ``model_less`` the sensitivities come from the trailing
    ``window`` frames up to and including the current slot (default
    window: 4x the regressor count); earlier slots get error markers.
    """
    if sens_mode not in ("model_based", "model_less"):
        raise ValidationError(f"unknown sensitivity mode {sens_mode!r}")
    if policy is None:
        policy = UncertaintyPolicy()
    frames = list(frames)
    if not frames:
        raise ValidationError("run_series needs at least one frame")
    if window is None:
        window = 8 * len(grid.buses)  # 4x the 2*n_bus regressor count

    reports = []
    for idx, frame in enumerate(frames):
        load_total = sum(max(v, 0.0) for v in frame.p.values())
        pv_total = sum(max(-v, 0.0) for v in frame.p.values())
        try:
            point = operating_point_from_frame(grid, frame)
            if sens_mode == "model_based":
                sens = sensitivities_model_based(grid, point, step=fd_step)
            else:
                sens = sensitivities_model_less(
                    grid, frames[: idx + 1], window=window, ridge=ridge
                )
            unc = build_uncertainty(frame, policy, grid)
            system = assemble_constraints(grid, point, sens, unc)
            result = flexibility_index(system, unc)
        except ComputationError as exc:
            reports.append(
                SlotReport(
                    timestamp=frame.timestamp,
                    f_raw=math.nan,
                    f_display=math.nan,
                    adequate=False,
                    binding_constraint=None,
                    load_total_pu=load_total,
                    pv_total_pu=pv_total,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
            continue
        reports.append(
            SlotReport(
                timestamp=frame.timestamp,
                f_raw=result.f,
                f_display=_display_value(result.f),
                adequate=result.adequate,
                binding_constraint=result.binding_constraint,
                load_total_pu=load_total,
                pv_total_pu=pv_total,
                result=result,
                uncertainty=unc,
            )
        )
    return reports


@dataclass(frozen=True)
class SeriesSummary:
    insecure: tuple[SlotReport, ...]
    errors: tuple[SlotReport, ...]
    min_f_slot: SlotReport | None


def summarize(reports) -> SeriesSummary:
    """Insecure-slot table plus the slot with the lowest index.

    Error slots are listed separately; ties on the minimum break to the
    earliest timestamp.
    """
    reports = list(reports)
    if not reports:
        raise ValidationError("summarize needs at least one report")
    ordered = sorted(reports, key=lambda r: r.timestamp)
    insecure = tuple(r for r in ordered if not r.failed and not r.adequate)
    errors = tuple(r for r in ordered if r.failed)
    candidates = [r for r in ordered if not r.failed]
    min_slot = min(candidates, key=lambda r: (r.f_raw, r.timestamp)) if candidates else None
    return SeriesSummary(insecure=insecure, errors=errors, min_f_slot=min_slot)


def format_summary(summary: SeriesSummary) -> str:
    """Aligned two-column text table of the insecure slots."""
    lines = ["Time slot             Flexibility", "-" * 33]
    if summary.insecure:
        for report in summary.insecure:
            lines.append(
                f"{format_rfc3339(report.timestamp):<22}{report.f_display:.2f}"
            )
    else:
        lines.append("(all slots adequate)")
    if summary.min_f_slot is not None:
        stamp = format_rfc3339(summary.min_f_slot.timestamp)
        value = summary.min_f_slot.f_raw
        shown = "inf" if math.isinf(value) else f"{value:.4f}"
        lines.append("")
        lines.append(f"lowest flexibility: {shown} at {stamp}")
    if summary.errors:
        lines.append("")
        lines.append(f"slots with errors: {len(summary.errors)}")
        for report in summary.errors:
            lines.append(f"  {format_rfc3339(report.timestamp)}  {report.error}")
    return "\n".join(lines)
