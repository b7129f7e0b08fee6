"""Command-line entry point: compute, run-series, region,
estimate-sensitivities, generate.

Exit codes: 0 success, 2 input/validation error, 3 computation error.
Flags beat the optional JSON config file, which beats built-in
defaults; the effective configuration is echoed into every output's
metadata block so reported values can be reproduced.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__
from .errors import ComputationError, InputError, ParseError
from .flexcore import trace_feasible_region_2d, assemble_constraints, flexibility_index
from .gridmodel import (
    format_rfc3339,
    load_grid,
    load_measurements,
    parse_rfc3339,
    save_grid,
    save_measurements,
)
from .powerflow import operating_point_from_frame
from .sensitivity import sensitivities_model_based, sensitivities_model_less
from .synthgen import DaySpec, FeederSpec, generate_feeder, generate_profiles
from .timeseries import UncertaintyPolicy, format_summary, run_series, summarize

DEFAULTS = {
    "sens": "model_based",
    "window": None,  # model_less: defaults to 4x regressor count
    "ridge": 1e-8,
    "fd_step": 1e-4,
    "policy": "fractional",
    "load_fraction": 0.2,
    "pv_fraction": 0.3,
    "load_band_pu": 0.02,
    "pv_band_pu": 0.05,
    "load_tan_phi": 0.3,
    "samples": 360,
    "cap": 5.0,
    "format": "csv",
    "seed": 1,
}

CONFIG_KEYS = tuple(DEFAULTS)


def _common_options(parser: argparse.ArgumentParser, measurements: bool = True):
    parser.add_argument("--grid", required=True, help="grid JSON file")
    if measurements:
        parser.add_argument("--measurements", required=True, help="measurement CSV file")
    parser.add_argument("--config", help="JSON config file (flags take precedence)")
    parser.add_argument("--sens", choices=["model_based", "model_less"])
    parser.add_argument("--window", type=int, help="model_less trailing window (frames)")
    parser.add_argument("--ridge", type=float, help="ridge regularization weight")
    parser.add_argument("--fd-step", dest="fd_step", type=float, help="finite-difference step (p.u.)")
    parser.add_argument("--policy", choices=["fractional", "absolute", "forecast_band"])
    parser.add_argument("--load-fraction", dest="load_fraction", type=float)
    parser.add_argument("--pv-fraction", dest="pv_fraction", type=float)
    parser.add_argument("--load-band", dest="load_band_pu", type=float)
    parser.add_argument("--pv-band", dest="pv_band_pu", type=float)
    parser.add_argument("--load-tan-phi", dest="load_tan_phi", type=float)
    parser.add_argument("--seed", type=int)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexgrid",
        description="Flexibility analysis of LV distribution grids under load/PV uncertainty",
    )
    parser.add_argument("--version", action="version", version=f"flexgrid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="flexibility index for one time slot (JSON)")
    _common_options(p)
    p.add_argument("--slot", required=True, help="RFC 3339 timestamp of the slot")
    p.add_argument("--dump-state", action="store_true", help="embed the operating point")

    p = sub.add_parser("run-series", help="per-slot report CSV plus summary table")
    _common_options(p)
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--out", help="write the report here; summary then goes to stdout")

    p = sub.add_parser("region", help="2-D feasible-region polygon CSV")
    _common_options(p)
    p.add_argument("--slot", required=True)
    p.add_argument("--params", required=True, help="two parameter ids, e.g. load@106,pv@101")
    p.add_argument("--samples", type=int)
    p.add_argument("--cap", type=float, help="plot radius in box-scales")
    p.add_argument("--out")

    p = sub.add_parser("estimate-sensitivities", help="sensitivity matrices as JSON")
    _common_options(p)
    p.add_argument("--method", choices=["model_based", "model_less"])
    p.add_argument("--slot", help="anchor slot for model_based (default: first frame)")

    p = sub.add_parser("generate", help="write synthetic feeder + day profile fixtures")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--buses", type=int, default=7)
    p.add_argument("--date", default="2021-11-28")
    p.add_argument("--pv-peak-kw", dest="pv_peak_kw", type=float, default=36.0)
    p.add_argument("--with-measurements", action="store_true",
                   help="include power-flow-consistent V/I columns")
    return parser


def _effective_config(args: argparse.Namespace) -> dict:
    config = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ParseError(f"cannot read config file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
        unknown = set(loaded) - set(CONFIG_KEYS)
        if unknown:
            raise ParseError(f"{path}: unknown config keys {sorted(unknown)}")
        config.update(loaded)
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _policy_from_config(config: dict, frames) -> UncertaintyPolicy:
    return UncertaintyPolicy(
        mode=config["policy"],
        load_fraction=config["load_fraction"],
        pv_fraction=config["pv_fraction"],
        load_band_pu=config["load_band_pu"],
        pv_band_pu=config["pv_band_pu"],
        load_tan_phi=config["load_tan_phi"],
        history=tuple(frames) if config["policy"] == "forecast_band" else (),
    )


def _metadata(config: dict, args) -> dict:
    meta = {"tool": f"flexgrid {__version__}", "config": config}
    for key in ("grid", "measurements"):
        if getattr(args, key, None):
            meta[key] = getattr(args, key)
    return meta


def _find_frame(frames, slot: str):
    wanted = parse_rfc3339(slot)
    for frame in frames:
        if frame.timestamp == wanted:
            return frame
    raise InputError(f"slot {slot} not found in the measurement series")


def _slot_inputs(args, config):
    grid = load_grid(args.grid)
    frames = load_measurements(args.measurements, grid)
    return grid, frames


def _sensitivities_for_slot(grid, frames, frame, point, config):
    if config["sens"] == "model_less":
        window = config["window"] or 8 * len(grid.buses)
        upto = [f for f in frames if f.timestamp <= frame.timestamp]
        return sensitivities_model_less(grid, upto, window=window, ridge=config["ridge"])
    return sensitivities_model_based(grid, point, step=config["fd_step"])


def _cmd_compute(args) -> int:
    config = _effective_config(args)
    grid, frames = _slot_inputs(args, config)
    frame = _find_frame(frames, args.slot)
    point = operating_point_from_frame(grid, frame)
    sens = _sensitivities_for_slot(grid, frames, frame, point, config)
    policy = _policy_from_config(config, frames)
    from .timeseries import build_uncertainty

    unc = build_uncertainty(frame, policy, grid)
    system = assemble_constraints(grid, point, sens, unc)
    result = flexibility_index(system, unc)
    payload = {"timestamp": format_rfc3339(frame.timestamp)}
    payload.update(result.to_json_dict(unc.ids))
    if args.dump_state:
        payload["operating_point"] = point.to_json_dict()
    payload["metadata"] = _metadata(config, args)
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _report_rows(reports):
    for r in reports:
        if r.failed:
            yield [format_rfc3339(r.timestamp), "", "", "false", f"error:{r.error}",
                   f"{r.load_total_pu:.6f}", f"{r.pv_total_pu:.6f}"]
        else:
            raw = "inf" if r.f_raw == float("inf") else f"{r.f_raw:.12g}"
            yield [format_rfc3339(r.timestamp), f"{r.f_display:.2f}", raw,
                   "true" if r.adequate else "false", r.binding_constraint or "",
                   f"{r.load_total_pu:.6f}", f"{r.pv_total_pu:.6f}"]


def _render_report(reports, config, fmt: str) -> str:
    if fmt == "json":
        rows = []
        for r in reports:
            entry = {
                "timestamp": format_rfc3339(r.timestamp),
                "F_display": None if r.failed else r.f_display,
                "F_raw": None if (r.failed or r.f_raw == float("inf")) else r.f_raw,
                "adequate": r.adequate,
                "binding_constraint": r.binding_constraint,
                "load_total_pu": r.load_total_pu,
                "pv_total_pu": r.pv_total_pu,
            }
            if r.failed:
                entry["error"] = r.error
            elif r.f_raw == float("inf"):
                entry["F_unbounded"] = True
            rows.append(entry)
        return json.dumps({"metadata": {"config": config}, "slots": rows}, indent=2) + "\n"
    buffer = io.StringIO()
    buffer.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["timestamp", "F_display", "F_raw", "adequate",
                     "binding_constraint", "load_total_pu", "pv_total_pu"])
    for row in _report_rows(reports):
        writer.writerow(row)
    return buffer.getvalue()


def _cmd_run_series(args) -> int:
    config = _effective_config(args)
    grid, frames = _slot_inputs(args, config)
    policy = _policy_from_config(config, frames)
    reports = run_series(
        grid,
        frames,
        sens_mode=config["sens"],
        policy=policy,
        window=config["window"],
        ridge=config["ridge"],
        fd_step=config["fd_step"],
    )
    rendered = _render_report(reports, config, config["format"])
    if args.out:
        Path(args.out).write_text(rendered)
        print(format_summary(summarize(reports)))
    else:
        sys.stdout.write(rendered)
    return 0


def _cmd_region(args) -> int:
    config = _effective_config(args)
    grid, frames = _slot_inputs(args, config)
    frame = _find_frame(frames, args.slot)
    pair = tuple(p.strip() for p in args.params.split(","))
    if len(pair) != 2 or not all(pair):
        raise InputError("--params must name exactly two parameter ids, comma separated")
    point = operating_point_from_frame(grid, frame)
    sens = _sensitivities_for_slot(grid, frames, frame, point, config)
    policy = _policy_from_config(config, frames)
    from .timeseries import build_uncertainty

    unc = build_uncertainty(frame, policy, grid)
    system = assemble_constraints(grid, point, sens, unc)
    polygon = trace_feasible_region_2d(
        system, unc, pair, samples=config["samples"], cap=config["cap"]
    )
    buffer = io.StringIO()
    buffer.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["theta", f"{pair[0]}_value", f"{pair[1]}_value"])
    for theta, v1, v2 in polygon:
        writer.writerow([f"{theta:.9f}", f"{v1:.9f}", f"{v2:.9f}"])
    if args.out:
        Path(args.out).write_text(buffer.getvalue())
    else:
        sys.stdout.write(buffer.getvalue())
    return 0


def _cmd_estimate_sensitivities(args) -> int:
    config = _effective_config(args)
    if args.method:
        config["sens"] = args.method
    grid, frames = _slot_inputs(args, config)
    if config["sens"] == "model_less":
        window = config["window"] or 8 * len(grid.buses)
        sens = sensitivities_model_less(grid, frames, window=window, ridge=config["ridge"])
    else:
        frame = frames[0] if not args.slot else _find_frame(frames, args.slot)
        point = operating_point_from_frame(grid, frame)
        sens = sensitivities_model_based(grid, point, step=config["fd_step"])
    payload = sens.to_json_dict()
    payload["metadata"] = _metadata(config, args)
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_generate(args) -> int:
    config = _effective_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    feeder = FeederSpec(bus_count=args.buses)
    grid = generate_feeder(feeder)
    day = DaySpec(
        date=args.date,
        pv_peak_kw=args.pv_peak_kw,
        seed=config["seed"],
        with_measurements=args.with_measurements,
    )
    frames = generate_profiles(grid, day)
    grid_path = out_dir / f"feeder{args.buses}.json"
    meas_path = out_dir / f"day_{args.date}.csv"
    save_grid(grid, grid_path)
    save_measurements(frames, grid, meas_path)
    json.dump(
        {
            "grid_file": str(grid_path),
            "measurements_file": str(meas_path),
            "metadata": _metadata(config, args),
        },
        sys.stdout,
        indent=2,
    )
    sys.stdout.write("\n")
    return 0


_COMMANDS = {
    "compute": _cmd_compute,
    "run-series": _cmd_run_series,
    "region": _cmd_region,
    "estimate-sensitivities": _cmd_estimate_sensitivities,
    "generate": _cmd_generate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
