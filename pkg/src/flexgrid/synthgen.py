"""Synthetic desk-scale fixtures: a 7-bus LV feeder and daily profiles.

The real grid behind this work is not public, so the fixtures invent
their own line parameters and limits. The defaults are calibrated so
the bundled day reproduces the qualitative picture: a congested evening
peak (insecure block), a high-load morning rescued by PV, and a quiet
midday. Profile shapes are sums of Gaussians plus seeded noise; all
generation is deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import InvalidSpecError
from .gridmodel import Branch, Bus, GridModel, MeasurementFrame, TransformerSpec
from .powerflow import OperatingPoint, solve_power_flow
from .sensitivity import SensitivitySet

# ampacities (p.u.) for the default 7-bus chain; the second segment is
# deliberately generous so congestion sits on the segment the PV bus
# can relieve
DEFAULT_AMPACITIES_7BUS = (0.445, 0.60, 0.42, 0.34, 0.26, 0.18)


@dataclass(frozen=True)
class FeederSpec:
    """Radial chain feeder: slack bus "100", then "101", "102", ..."""

    bus_count: int = 7
    base_power_va: float = 250e3
    base_voltage_v: float = 400.0
    r_pu_per_segment: float = 0.012
    x_pu_per_segment: float = 0.006
    ampacities: tuple[float, ...] | None = None
    transformer_s_max_pu: float = 0.8
    pv_bus: str = "101"
    pv_capacity_kva: float = 72.0
    ev_buses: tuple[str, ...] = ("102", "106")
    v_min: float = 0.9
    v_max: float = 1.1
    monitored: bool = True


def _segment_ampacities(spec: FeederSpec) -> tuple[float, ...]:
    n_branches = spec.bus_count - 1
    if spec.ampacities is not None:
        if len(spec.ampacities) != n_branches:
            raise InvalidSpecError(
                f"need {n_branches} ampacities, got {len(spec.ampacities)}"
            )
        return tuple(spec.ampacities)
    if spec.bus_count == 7:
        return DEFAULT_AMPACITIES_7BUS
    return tuple(max(0.15, 0.45 - 0.05 * k) for k in range(n_branches))


def generate_feeder(spec: FeederSpec = FeederSpec()) -> GridModel:
    """Build the fixture grid; always passes gridmodel validation."""
    if spec.bus_count < 2:
        raise InvalidSpecError("feeder needs at least 2 buses")
    if spec.r_pu_per_segment < 0 or spec.x_pu_per_segment < 0 or (
        spec.r_pu_per_segment == 0 and spec.x_pu_per_segment == 0
    ):
        raise InvalidSpecError("segment impedance must have positive magnitude")
    if spec.transformer_s_max_pu <= 0:
        raise InvalidSpecError("transformer rating must be > 0")
    ampacities = _segment_ampacities(spec)
    if any(a <= 0 for a in ampacities):
        raise InvalidSpecError("ampacities must be > 0")

    bus_ids = [str(100 + k) for k in range(spec.bus_count)]
    slack = bus_ids[0]
    buses = []
    for bus_id in bus_ids:
        resources = []
        if bus_id != slack:
            if bus_id == spec.pv_bus:
                resources.append("pv")
            else:
                resources.append("load")
            if bus_id in spec.ev_buses:
                resources.append("ev")
        buses.append(
            Bus(
                id=bus_id,
                v_min=spec.v_min,
                v_max=spec.v_max,
                monitored=spec.monitored,
                resources=tuple(resources),
            )
        )
    branches = [
        Branch(
            id=f"{bus_ids[k]}-{bus_ids[k + 1]}",
            from_bus=bus_ids[k],
            to_bus=bus_ids[k + 1],
            r_pu=spec.r_pu_per_segment,
            x_pu=spec.x_pu_per_segment,
            i_max_pu=ampacities[k],
        )
        for k in range(spec.bus_count - 1)
    ]
    return GridModel(
        buses=tuple(buses),
        branches=tuple(branches),
        transformer=TransformerSpec(s_max_pu=spec.transformer_s_max_pu, lv_bus_id=slack),
        slack_bus_id=slack,
        base_power_va=spec.base_power_va,
        base_voltage_v=spec.base_voltage_v,
    )


@dataclass(frozen=True)
class DaySpec:
    """One day of 10-minute profiles: two load peaks plus a PV bell."""

    date: str = "2021-11-28"
    slots: int = 144
    step_minutes: int = 10
    base_load_kw: float = 4.0
    morning_peak_kw: float = 16.0
    morning_time_min: int = 9 * 60 + 40
    morning_sigma_min: float = 100.0
    evening_peak_kw: float = 12.0
    evening_time_min: int = 18 * 60
    evening_sigma_min: float = 75.0
    ev_extra_kw: float = 6.0
    pv_peak_kw: float = 36.0
    pv_time_min: int = 12 * 60
    pv_sigma_min: float = 131.0
    daylight_min: tuple[int, int] = (6 * 60, 20 * 60)
    load_tan_phi: float = 0.3
    tan_phi_noise: float = 0.02
    noise_kw: float = 0.15
    seed: int = 1
    with_measurements: bool = False

    def __post_init__(self):
        if self.slots < 1 or self.step_minutes < 1:
            raise InvalidSpecError("need at least one slot and a positive step")
        for name in ("base_load_kw", "morning_peak_kw", "evening_peak_kw",
                     "ev_extra_kw", "pv_peak_kw", "noise_kw"):
            if getattr(self, name) < 0:
                raise InvalidSpecError(f"day spec {name} must be >= 0")


def _gaussian(minute: float, center: float, sigma: float) -> float:
    return float(np.exp(-((minute - center) ** 2) / (2.0 * sigma**2)))


def generate_profiles(grid: GridModel, spec: DaySpec = DaySpec()) -> list[MeasurementFrame]:
    """Per-unit frames for one synthetic day, deterministic per seed.

    Loads get morning/evening Gaussians plus noise (EV-tagged buses an
    extra evening hump); the PV bus a midday bell that is exactly zero
    outside the daylight window. With ``with_measurements`` every frame
    also carries power-flow-consistent V (monitored buses) and I (all
    branches).
    """
    rng = np.random.default_rng(spec.seed)
    day_start = datetime.fromisoformat(spec.date + "T00:00:00+00:00").astimezone(
        timezone.utc
    )
    base = grid.base_power_va
    frames = []
    for slot in range(spec.slots):
        minute = slot * spec.step_minutes
        stamp = day_start + timedelta(minutes=minute)
        p, q = {}, {}
        for bus in grid.buses:
            if bus.id == grid.slack_bus_id:
                p[bus.id] = 0.0
                q[bus.id] = 0.0
                continue
            if "pv" in bus.resources:
                pv_kw = spec.pv_peak_kw * _gaussian(minute, spec.pv_time_min, spec.pv_sigma_min)
                pv_kw += rng.normal(0.0, spec.noise_kw)
                if not (spec.daylight_min[0] <= minute <= spec.daylight_min[1]):
                    pv_kw = 0.0
                pv_kw = max(pv_kw, 0.0)
                p[bus.id] = -pv_kw * 1e3 / base
                q[bus.id] = 0.0
                continue
            load_kw = (
                spec.base_load_kw
                + spec.morning_peak_kw * _gaussian(minute, spec.morning_time_min, spec.morning_sigma_min)
                + spec.evening_peak_kw * _gaussian(minute, spec.evening_time_min, spec.evening_sigma_min)
            )
            if "ev" in bus.resources:
                load_kw += spec.ev_extra_kw * _gaussian(minute, spec.evening_time_min, spec.evening_sigma_min)
            load_kw += rng.normal(0.0, spec.noise_kw)
            load_kw = max(load_kw, 0.0)
            tan_phi = spec.load_tan_phi + rng.normal(0.0, spec.tan_phi_noise)
            p[bus.id] = load_kw * 1e3 / base
            q[bus.id] = p[bus.id] * tan_phi
        v, i = {}, {}
        if spec.with_measurements:
            point = solve_power_flow(grid, p, q)
            v = {b.id: float(point.v[grid.bus_index[b.id]]) for b in grid.buses if b.monitored}
            i = {br: float(point.i_mag[k]) for k, br in enumerate(grid.branch_ids)}
        frames.append(MeasurementFrame(timestamp=stamp, p=p, q=q, v=v, i=i))
    return frames


def synthesize_linear_series(
    grid: GridModel,
    anchor: OperatingPoint,
    sens: SensitivitySet,
    n_frames: int,
    delta_scale: float = 0.01,
    seed: int = 0,
    v_noise_std: float = 0.0,
    start: str = "2021-11-28T00:00:00Z",
) -> list[MeasurementFrame]:
    """Frames whose V/I follow the given linear model exactly.

    P and Q random-walk around the anchor at every bus (so all
    regressors are excited) and the monitored quantities are generated
    from the sensitivity matrices; optionally Gaussian noise is added to
    V. This is the ground-truth series for regression-recovery tests.
    """
    rng = np.random.default_rng(seed)
    n_bus = len(grid.buses)
    start_ts = datetime.fromisoformat(start.replace("Z", "+00:00")).astimezone(timezone.utc)
    p = anchor.p.copy()
    q = anchor.q.copy()
    frames = []
    for k in range(n_frames):
        if k > 0:
            p = p + rng.uniform(-delta_scale, delta_scale, n_bus)
            q = q + rng.uniform(-delta_scale, delta_scale, n_bus)
        dv, di = sens.predict(p - anchor.p, q - anchor.q)
        v = anchor.v + dv
        if v_noise_std > 0:
            v = v + rng.normal(0.0, v_noise_std, n_bus)
        i = anchor.i_mag + di
        frames.append(
            MeasurementFrame(
                timestamp=start_ts + timedelta(minutes=10 * k),
                p={b: float(p[j]) for j, b in enumerate(grid.bus_ids)},
                q={b: float(q[j]) for j, b in enumerate(grid.bus_ids)},
                v={b: float(v[j]) for j, b in enumerate(grid.bus_ids)},
                i={br: float(i[j]) for j, br in enumerate(grid.branch_ids)},
            )
        )
    return frames
