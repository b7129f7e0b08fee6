"""Grid data model, per-unit conversion, and file ingestion.

The grid file is JSON, measurements are CSV (one row per bus or branch
per timestamp, long format). All electrical quantities are stored in
per-unit on the grid's own bases; sign convention is consumption
positive, so PV production shows up as negative bus power.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import (
    NonMonotonicTimestampError,
    ParseError,
    UnknownIdError,
    ValidationError,
    ZeroBaseError,
)

DEFAULT_V_MIN = 0.9
DEFAULT_V_MAX = 1.1

RESOURCE_TAGS = ("load", "pv", "ev")


def to_per_unit(value: float, base: float) -> float:
    """Convert an SI quantity to per-unit on the given base (> 0)."""
    if base == 0:
        raise ZeroBaseError("per-unit base must be nonzero")
    return value / base


def from_per_unit(value: float, base: float) -> float:
    """Inverse of :func:`to_per_unit`; round-trips within 1e-12."""
    if base == 0:
        raise ZeroBaseError("per-unit base must be nonzero")
    return value * base


@dataclass(frozen=True)
class Bus:
    id: str
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX
    monitored: bool = False
    resources: tuple[str, ...] = ()

    def __post_init__(self):
        if not (0 < self.v_min < self.v_max):
            raise ValidationError(
                f"bus {self.id!r}: need 0 < v_min < v_max, got "
                f"[{self.v_min}, {self.v_max}]"
            )
        for tag in self.resources:
            if tag not in RESOURCE_TAGS:
                raise ValidationError(f"bus {self.id!r}: unknown resource tag {tag!r}")


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r_pu: float
    x_pu: float
    i_max_pu: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise ValidationError(f"branch {self.id!r}: from_bus == to_bus")
        if math.hypot(self.r_pu, self.x_pu) <= 0:
            raise ValidationError(f"branch {self.id!r}: impedance magnitude must be > 0")
        if self.i_max_pu <= 0:
            raise ValidationError(f"branch {self.id!r}: ampacity must be > 0")


@dataclass(frozen=True)
class TransformerSpec:
    s_max_pu: float
    lv_bus_id: str

    def __post_init__(self):
        if self.s_max_pu <= 0:
            raise ValidationError("transformer: s_max must be > 0")


@dataclass(frozen=True)
class GridModel:
    """Validated radial LV grid. Immutable; safe to share across threads."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    transformer: TransformerSpec
    slack_bus_id: str
    base_power_va: float
    base_voltage_v: float
    bus_index: dict = field(init=False, repr=False, compare=False)
    branch_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "bus_index", {b.id: k for k, b in enumerate(self.buses)}
        )
        object.__setattr__(
            self, "branch_index", {br.id: k for k, br in enumerate(self.branches)}
        )
        self._validate()

    def _validate(self):
        if self.base_power_va <= 0 or self.base_voltage_v <= 0:
            raise ValidationError("grid bases must be > 0")
        if len(self.bus_index) != len(self.buses):
            seen = set()
            dup = next(b.id for b in self.buses if b.id in seen or seen.add(b.id))
            raise ValidationError(f"duplicate bus id {dup!r}")
        if len(self.branch_index) != len(self.branches):
            seen = set()
            dup = next(
                br.id for br in self.branches if br.id in seen or seen.add(br.id)
            )
            raise ValidationError(f"duplicate branch id {dup!r}")
        if self.slack_bus_id not in self.bus_index:
            raise UnknownIdError(f"slack bus {self.slack_bus_id!r} not in bus list")
        if self.transformer.lv_bus_id != self.slack_bus_id:
            raise ValidationError(
                f"slack bus {self.slack_bus_id!r} must be the transformer LV bus "
                f"{self.transformer.lv_bus_id!r}"
            )
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self.bus_index:
                    raise UnknownIdError(f"branch {br.id!r} references unknown bus {end!r}")
        self._check_radial()

    def _check_radial(self):
        n, m = len(self.buses), len(self.branches)
        if n != m + 1:
            raise ValidationError(
                f"non-radial grid: {n} buses, {m} branches (need buses = branches + 1)"
            )
        # connectivity via BFS; with n == m + 1 a connected graph is a tree
        adjacency = {b.id: [] for b in self.buses}
        for br in self.branches:
            adjacency[br.from_bus].append(br.to_bus)
            adjacency[br.to_bus].append(br.from_bus)
        seen = {self.slack_bus_id}
        stack = [self.slack_bus_id]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != n:
            missing = sorted(set(self.bus_index) - seen)
            raise ValidationError(f"non-radial grid: buses {missing} unreachable from slack")

    # -- convenience views -------------------------------------------

    @property
    def bus_ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.buses)

    @property
    def branch_ids(self) -> tuple[str, ...]:
        return tuple(br.id for br in self.branches)

    def bus(self, bus_id: str) -> Bus:
        try:
            return self.buses[self.bus_index[bus_id]]
        except KeyError:
            raise UnknownIdError(f"unknown bus {bus_id!r}") from None

    def branch(self, branch_id: str) -> Branch:
        try:
            return self.branches[self.branch_index[branch_id]]
        except KeyError:
            raise UnknownIdError(f"unknown branch {branch_id!r}") from None


@dataclass(frozen=True)
class MeasurementFrame:
    """One time slot of monitoring data, already in per-unit.

    ``p``/``q`` cover every bus (consumption positive); ``v`` and ``i``
    only the monitored buses/branches of the series.
    """

    timestamp: datetime
    p: dict
    q: dict
    v: dict
    i: dict


def _as_float(raw, path, context):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"{path}: {context}: not a number: {raw!r}") from None
    if math.isnan(value):
        raise ParseError(f"{path}: {context}: NaN is not allowed")
    return value


def load_grid(path) -> GridModel:
    """Load and validate a grid JSON file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read grid file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a JSON object")

    for key in ("base_power_va", "base_voltage_v", "buses", "branches", "transformer", "slack_bus"):
        if key not in raw:
            raise ParseError(f"{path}: missing top-level key {key!r}")

    buses = []
    for entry in raw["buses"]:
        if "id" not in entry:
            raise ParseError(f"{path}: bus entry without 'id': {entry}")
        buses.append(
            Bus(
                id=str(entry["id"]),
                v_min=float(entry.get("v_min", DEFAULT_V_MIN)),
                v_max=float(entry.get("v_max", DEFAULT_V_MAX)),
                monitored=bool(entry.get("monitored", False)),
                resources=tuple(entry.get("resources", ())),
            )
        )
    branches = []
    for entry in raw["branches"]:
        for key in ("id", "from", "to", "r_pu", "x_pu", "i_max_pu"):
            if key not in entry:
                raise ParseError(f"{path}: branch entry missing {key!r}: {entry}")
        branches.append(
            Branch(
                id=str(entry["id"]),
                from_bus=str(entry["from"]),
                to_bus=str(entry["to"]),
                r_pu=float(entry["r_pu"]),
                x_pu=float(entry["x_pu"]),
                i_max_pu=float(entry["i_max_pu"]),
            )
        )
    trafo_raw = raw["transformer"]
    for key in ("s_max_pu", "lv_bus"):
        if key not in trafo_raw:
            raise ParseError(f"{path}: transformer entry missing {key!r}")
    transformer = TransformerSpec(
        s_max_pu=float(trafo_raw["s_max_pu"]), lv_bus_id=str(trafo_raw["lv_bus"])
    )
    return GridModel(
        buses=tuple(buses),
        branches=tuple(branches),
        transformer=transformer,
        slack_bus_id=str(raw["slack_bus"]),
        base_power_va=float(raw["base_power_va"]),
        base_voltage_v=float(raw["base_voltage_v"]),
    )


def grid_to_json_dict(grid: GridModel) -> dict:
    return {
        "base_power_va": grid.base_power_va,
        "base_voltage_v": grid.base_voltage_v,
        "buses": [
            {
                "id": b.id,
                "v_min": b.v_min,
                "v_max": b.v_max,
                "monitored": b.monitored,
                "resources": list(b.resources),
            }
            for b in grid.buses
        ],
        "branches": [
            {
                "id": br.id,
                "from": br.from_bus,
                "to": br.to_bus,
                "r_pu": br.r_pu,
                "x_pu": br.x_pu,
                "i_max_pu": br.i_max_pu,
            }
            for br in grid.branches
        ],
        "transformer": {
            "s_max_pu": grid.transformer.s_max_pu,
            "lv_bus": grid.transformer.lv_bus_id,
        },
        "slack_bus": grid.slack_bus_id,
    }


def save_grid(grid: GridModel, path) -> None:
    """Write the grid back in the same JSON schema (round-trip safe)."""
    with open(path, "w") as fh:
        json.dump(grid_to_json_dict(grid), fh, indent=2, sort_keys=True)
        fh.write("\n")


MEASUREMENT_COLUMNS = ["timestamp", "bus_id", "p_kw", "q_kvar", "v_pu", "branch_id", "i_pu"]


def parse_rfc3339(stamp: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    text = stamp.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise ParseError(f"bad RFC 3339 timestamp: {stamp!r}") from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def format_rfc3339(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def load_measurements(path, grid: GridModel) -> list[MeasurementFrame]:
    """Load a measurement CSV and convert it to per-unit frames.

    Enforces: known ids only, strictly increasing timestamps, every
    frame covers all buses with P and Q, and the monitored V/I sets are
    identical across the whole series.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read measurement file {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty measurement file")
        if [c.strip() for c in reader.fieldnames] != MEASUREMENT_COLUMNS:
            raise ParseError(
                f"{path}: header must be {','.join(MEASUREMENT_COLUMNS)}, "
                f"got {','.join(reader.fieldnames)}"
            )
        frames: dict[datetime, dict] = {}
        last_ts = None
        for lineno, row in enumerate(reader, start=2):
            context = f"line {lineno}"
            ts = parse_rfc3339(row["timestamp"])
            if ts not in frames:
                if last_ts is not None and ts <= last_ts:
                    raise NonMonotonicTimestampError(
                        f"{path}: {context}: timestamp {row['timestamp']} not strictly "
                        f"increasing"
                    )
                frames[ts] = {"p": {}, "q": {}, "v": {}, "i": {}}
                last_ts = ts
            acc = frames[ts]
            bus_id = (row["bus_id"] or "").strip()
            branch_id = (row["branch_id"] or "").strip()
            if bool(bus_id) == bool(branch_id):
                raise ParseError(
                    f"{path}: {context}: exactly one of bus_id/branch_id must be set"
                )
            if bus_id:
                if bus_id not in grid.bus_index:
                    raise UnknownIdError(f"{path}: {context}: unknown bus {bus_id!r}")
                acc["p"][bus_id] = to_per_unit(
                    _as_float(row["p_kw"], path, context) * 1e3, grid.base_power_va
                )
                acc["q"][bus_id] = to_per_unit(
                    _as_float(row["q_kvar"], path, context) * 1e3, grid.base_power_va
                )
                if (row["v_pu"] or "").strip():
                    acc["v"][bus_id] = _as_float(row["v_pu"], path, context)
            else:
                if branch_id not in grid.branch_index:
                    raise UnknownIdError(f"{path}: {context}: unknown branch {branch_id!r}")
                if not (row["i_pu"] or "").strip():
                    raise ParseError(f"{path}: {context}: branch row without i_pu")
                acc["i"][branch_id] = _as_float(row["i_pu"], path, context)

    if not frames:
        raise ParseError(f"{path}: no measurement rows")

    result = []
    monitored_v = monitored_i = None
    all_buses = set(grid.bus_ids)
    for ts in sorted(frames):
        acc = frames[ts]
        missing = all_buses - set(acc["p"])
        if missing:
            raise ValidationError(
                f"{path}: frame {format_rfc3339(ts)} missing P/Q for buses "
                f"{sorted(missing)}"
            )
        if monitored_v is None:
            monitored_v, monitored_i = set(acc["v"]), set(acc["i"])
        elif set(acc["v"]) != monitored_v or set(acc["i"]) != monitored_i:
            raise ValidationError(
                f"{path}: frame {format_rfc3339(ts)} changes the monitored set"
            )
        result.append(
            MeasurementFrame(timestamp=ts, p=acc["p"], q=acc["q"], v=acc["v"], i=acc["i"])
        )
    return result


def save_measurements(frames, grid: GridModel, path) -> None:
    """Write frames back to the measurement CSV schema (kW / kvar units)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MEASUREMENT_COLUMNS)
        for frame in frames:
            stamp = format_rfc3339(frame.timestamp)
            for bus_id in grid.bus_ids:
                writer.writerow(
                    [
                        stamp,
                        bus_id,
                        f"{from_per_unit(frame.p[bus_id], grid.base_power_va) / 1e3:.6f}",
                        f"{from_per_unit(frame.q[bus_id], grid.base_power_va) / 1e3:.6f}",
                        f"{frame.v[bus_id]:.9f}" if bus_id in frame.v else "",
                        "",
                        "",
                    ]
                )
            for branch_id in grid.branch_ids:
                if branch_id in frame.i:
                    writer.writerow(
                        [stamp, "", "", "", "", branch_id, f"{frame.i[branch_id]:.9f}"]
                    )
