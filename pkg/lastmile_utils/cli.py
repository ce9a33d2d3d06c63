"""Command line entry point: ``lastmile simulate|sweep|ingest|metrics|kml``

stdout carries data and summaries only; log messages and errors go to stderr.
Exit status is 0 on success, 1 on a lastmile_utils error and 2 on a usage error.
"""

import argparse
import logging
import sys
from pathlib import Path

from lastmile_utils.cost import COST_KEYS, CostParams, classify_grid, critical_cells, write_surface_csv
from lastmile_utils.engine import write_event_trace
from lastmile_utils.findmy import build_tracks, ingest_paths, read_tracks_csv, write_tracks_csv
from lastmile_utils.kml import PLACEMENT_KEYS, scenario_to_kml, tracks_to_kml, write_kml
from lastmile_utils.network import (
    NETWORK_KEYS,
    POLICY_NAMES,
    HubSpokeModel,
    NetworkConfig,
    route_distance,
    write_mail_csv,
)
from lastmile_utils.sweep import SWEEP_KEYS, SweepSpec, run_sweep, write_sweep_csv
from lastmile_utils.trajectory import (
    DEFAULT_BIN_MINUTES,
    DEFAULT_MIN_DWELL_MIN,
    DEFAULT_SPEED_FLOOR_KMH,
    daily_update_counts,
    device_summary,
    dwell_segments,
    frequency_report,
    speed_profile,
    tracks_span_days,
    write_daily_csv,
    write_dwell_csv,
    write_frequency_csv,
    write_speed_csv,
    write_summary_csv,
)
from lastmile_utils.utils import ConfigInvalid, LastMileError, km_to_miles, miles_to_km, read_config, set_log_level

__all__ = ["main", "build_parser"]

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = {"network": NETWORK_KEYS, "sweep": SWEEP_KEYS, "cost": COST_KEYS, "placement": PLACEMENT_KEYS}

# (flag dest, config key) pairs given in --units
UNIT_FLAGS = [("d_s", "d_s_km"), ("d_h", "d_h_km"), ("speed", "speed_kmh"), ("threshold", "threshold_km")]
KM_FLAGS = ["d_s_km", "d_h_km", "speed_kmh", "threshold_km"]
MILE_FLAGS = [("d_s_mi", "d_s_km"), ("d_h_mi", "d_h_km"), ("speed_mph", "speed_kmh")]
PLAIN_FLAGS = ["lambda_per_hour", "mu_per_hour", "sim_time_hours", "policy", "hub_poll_hours"]


def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="Scenario seed, or sweep master seed")
    parser.add_argument(
        "--units",
        choices=["km", "miles"],
        default=argparse.SUPPRESS if suppress else "km",
        help="Units of --d-s, --d-h, --speed and --threshold (default km)",
    )
    parser.add_argument(
        "--quiet",
        action="store_true",
        default=argparse.SUPPRESS if suppress else False,
        help="Only log warnings and errors; hide progress bars",
    )


def _network_options(parser):
    group = parser.add_argument_group("network", "Override [network] config keys")
    group.add_argument("--d-s", type=float, help="Spoke-to-spoke distance in --units")
    group.add_argument("--d-h", type=float, help="Hub-to-spoke distance in --units")
    group.add_argument("--speed", type=float, help="Travel speed in --units per hour")
    group.add_argument("--threshold", type=float, help="Threshold policy cutoff in --units")
    group.add_argument("--d-s-km", type=float)
    group.add_argument("--d-h-km", type=float)
    group.add_argument("--speed-kmh", type=float)
    group.add_argument("--threshold-km", type=float)
    group.add_argument("--d-s-mi", type=float)
    group.add_argument("--d-h-mi", type=float)
    group.add_argument("--speed-mph", type=float)
    group.add_argument("--lambda-per-hour", "--lambda", dest="lambda_per_hour", type=float)
    group.add_argument("--mu-per-hour", "--mu", dest="mu_per_hour", type=float)
    group.add_argument("--sim-time-hours", type=float)
    group.add_argument("--policy", choices=POLICY_NAMES)
    group.add_argument("--hub-poll-hours", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lastmile",
        description="Hub-and-spoke network simulation and Find My trace analysis",
    )
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", parents=[common], help="Run one hub-and-spoke scenario")
    simulate.add_argument("--config", type=Path, help="TOML config with a [network] table")
    simulate.add_argument("--out", type=Path, default=Path("mail_items.csv"), help="Mail lifecycle CSV")
    simulate.add_argument("--trace", type=Path, help="Also write the dispatched event trace")
    _network_options(simulate)
    simulate.set_defaults(func=cmd_simulate)

    sweep = subparsers.add_parser("sweep", parents=[common], help="Run a replicated (d_s, d_h) sweep")
    sweep.add_argument("--config", type=Path, required=True, help="TOML config with [network] and [sweep] tables")
    sweep.add_argument("--out", type=Path, required=True, help="Output directory")
    sweep.add_argument("--workers", type=int, help="Process pool size")
    sweep.add_argument("--replications", type=int)
    sweep.add_argument("--analytic", action="store_true", help="Also write the classified cost surface")
    sweep.set_defaults(func=cmd_sweep)

    ingest = subparsers.add_parser("ingest", parents=[common], help="Normalize items.data snapshots")
    ingest.add_argument("paths", nargs="+", type=Path, help="items.data files or directories of snapshots")
    ingest.add_argument("--out", type=Path, required=True, help="Normalized track CSV")
    ingest.add_argument("--pattern", default="*.data", help="Glob used inside directories")
    ingest.add_argument("--max-h-acc", type=float, help="Drop fixes with a larger horizontal accuracy, m")
    ingest.add_argument("--strict", action="store_true", help="Fail on the first unreadable file")
    ingest.set_defaults(func=cmd_ingest)

    metrics = subparsers.add_parser("metrics", parents=[common], help="Summaries and frequency table")
    metrics.add_argument("--in", dest="input", type=Path, required=True, help="Normalized track CSV")
    metrics.add_argument("--out", type=Path, default=Path("."), help="Output directory")
    metrics.add_argument("--window-days", type=float, help="Observation window (default: span of the data)")
    metrics.add_argument("--max-h-acc", type=float)
    metrics.add_argument("--bin-minutes", type=int, default=DEFAULT_BIN_MINUTES)
    metrics.add_argument("--speed-floor-kmh", type=float, default=DEFAULT_SPEED_FLOOR_KMH)
    metrics.add_argument("--min-dwell-min", type=float, default=DEFAULT_MIN_DWELL_MIN)
    metrics.set_defaults(func=cmd_metrics)

    kml = subparsers.add_parser("kml", parents=[common], help="Export tracks or a scenario layout as KML")
    source = kml.add_mutually_exclusive_group(required=True)
    source.add_argument("--in", dest="input", type=Path, help="Normalized track CSV")
    source.add_argument("--scenario", type=Path, help="TOML config with a [placement] table")
    kml.add_argument("--out", type=Path, required=True)
    kml.set_defaults(func=cmd_kml)

    return parser


def _read_config(path):
    if path is None:
        return {}
    return read_config(path, sections=CONFIG_SECTIONS)


def _network_values(config, args):
    """``[network]`` values from the config file with command line flags layered on top"""
    values = dict(config.get("network", {}))
    units = getattr(args, "units", "km")
    for dest, key in UNIT_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = miles_to_km(value) if units == "miles" else value
    for dest, key in MILE_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = miles_to_km(value)
    for key in KM_FLAGS + PLAIN_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def _network_config(values):
    try:
        return NetworkConfig.from_dict(values).validate()
    except (TypeError, ValueError) as e:
        raise ConfigInvalid("network", str(e)) from e


def _format(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def cmd_simulate(args):
    config = _network_config(_network_values(_read_config(args.config), args))
    trace = [] if args.trace is not None else None
    metrics, items = HubSpokeModel(config).run(trace=trace)

    write_mail_csv(items, args.out)
    logger.info(f"Mail lifecycle CSV written to {args.out}")
    if trace is not None:
        write_event_trace(trace, args.trace)

    km = route_distance(config.policy, config.d_s_km, config.d_h_km)
    print(f"policy: {config.policy}")
    print(f"route_distance_km: {km:.3f}")
    print(f"route_distance_mi: {km_to_miles(km):.3f}")
    for key, value in metrics.as_dict().items():
        print(f"{key}: {_format(value)}")
    return 0


def cmd_sweep(args):
    config = _read_config(args.config)
    network = _network_values(config, args)
    sweep = dict(config.get("sweep", {}))
    if args.seed is not None:
        sweep["master_seed"] = args.seed
    if args.workers is not None:
        sweep["workers"] = args.workers
    if args.replications is not None:
        sweep["replications"] = args.replications
    try:
        spec = SweepSpec.from_config({"network": network, "sweep": sweep})
    except (TypeError, ValueError) as e:
        raise ConfigInvalid("sweep", str(e)) from e
    params = None
    if args.analytic:
        try:
            params = CostParams.from_dict(config.get("cost", {}))
        except (TypeError, ValueError) as e:
            raise ConfigInvalid("cost", str(e)) from e

    args.out.mkdir(parents=True, exist_ok=True)
    results = run_sweep(spec, quiet=args.quiet)
    write_sweep_csv(results, args.out / "sweep.csv")
    print(f"sweep: {len(results)} cells written to {args.out / 'sweep.csv'}")

    if params is not None:
        surface = classify_grid(params, spec.d_s_values, spec.d_h_values)
        write_surface_csv(surface, args.out / "surface.csv")
        print(f"surface: {surface.cells.size} cells written to {args.out / 'surface.csv'}")
        for d_s, d_h, label in critical_cells(surface):
            print(f"critical: d_s_km={d_s:g} d_h_km={d_h:g} {label}")
    return 0


def cmd_ingest(args):
    tracks, report = ingest_paths(
        args.paths, pattern=args.pattern, raise_error=args.strict, max_h_acc=args.max_h_acc, quiet=args.quiet
    )
    for path, message in report.failures.items():
        logger.warning(f"Could not ingest {path}: {message}")
    write_tracks_csv(tracks, args.out)
    print(f"ingest: {report.summary()}; {len(tracks)} devices written to {args.out}")
    return 0


def cmd_metrics(args):
    tracks = read_tracks_csv(args.input)
    if args.max_h_acc is not None:
        tracks = build_tracks([r for t in tracks for r in t.records], max_h_acc=args.max_h_acc)
    window = args.window_days if args.window_days is not None else tracks_span_days(tracks)
    report = frequency_report(tracks, window)

    args.out.mkdir(parents=True, exist_ok=True)
    write_summary_csv([device_summary(t) for t in tracks], args.out / "summary.csv")
    write_frequency_csv(report, args.out / "frequency.csv")
    segments = [s for t in tracks for s in dwell_segments(t, args.speed_floor_kmh, args.min_dwell_min)]
    write_dwell_csv(segments, args.out / "dwell.csv", args.speed_floor_kmh, args.min_dwell_min)
    write_speed_csv([speed_profile(t, args.bin_minutes) for t in tracks], args.out / "speed.csv")
    write_daily_csv(daily_update_counts(tracks), args.out / "daily.csv")
    logger.info(f"Metrics for {len(tracks)} devices written to {args.out}")

    print(f"devices: {report.device_count}  window_days: {float(report.window_days):g}")
    print(report.display())
    return 0


def cmd_kml(args):
    if args.scenario is not None:
        config = _read_config(args.scenario)
        if "placement" not in config:
            raise ConfigInvalid("placement", f"no [placement] table in {args.scenario}")
        network = _network_config(_network_values(config, args))
        try:
            placements = {key: tuple(value) for key, value in config["placement"].items()}
        except TypeError as e:
            raise ConfigInvalid("placement", f"expected [lat, lon] pairs: {e}") from e
        text = scenario_to_kml(network, placements)
    else:
        text = tracks_to_kml(read_tracks_csv(args.input))
    write_kml(text, args.out)
    print(f"kml: written to {args.out}")
    return 0


def main(argv=None):
    """Run the command line; returns the exit status"""
    parser = build_parser()
    args = parser.parse_args(argv)
    set_log_level(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except LastMileError as e:
        print(f"lastmile {args.command}: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"lastmile {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
