"""Command-line front end.

Subcommands:
  run         one scenario from a YAML config (CLI flags override fields)
  grid        sweep PER x latency x correlation x scheme into a CSV
  calibrate   estimate Markov parameters and rate levels from a trace CSV
  replay-fig3 deterministic six-packet worked-example replays
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace

import yaml

from . import channel as ch
from . import harness, replay
from .transport import FlowSpec, SenderParams


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def load_config(path: str | None) -> harness.ScenarioConfig:
    """YAML file -> ScenarioConfig; unknown keys are rejected."""
    if path is None:
        data = {}
    else:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise harness.ConfigError(f"{path}: config must be a mapping")
    known = {f.name for f in fields(harness.ScenarioConfig)}
    unknown = set(data) - known - {"flows", "levels", "sender"}
    if unknown:
        raise harness.ConfigError(
            f"{path}: unknown config keys {sorted(unknown)}; known: {sorted(known)}")
    flows = data.pop("flows", None)
    if flows is None:
        flow_specs = tuple(harness.default_flows())
    else:
        flow_specs = tuple(FlowSpec(**f) for f in flows)
    levels = ch.RateLevels(**data.pop("levels", {}))
    sender = SenderParams(**data.pop("sender", {}))
    if "constant_gbps" in data:
        data["constant_gbps"] = tuple(data["constant_gbps"])
    return harness.ScenarioConfig(flows=flow_specs, levels=levels, sender=sender,
                                  **data)


def _apply_overrides(cfg: harness.ScenarioConfig,
                     args: argparse.Namespace) -> harness.ScenarioConfig:
    updates = {}
    for arg_name, field_name in [("scheme", "scheme"), ("per", "per"),
                                 ("latency_ms", "latency_ms"), ("p", "p"),
                                 ("q", "q"), ("T_ms", "T_ms"), ("seed", "seed"),
                                 ("duration", "duration_s")]:
        val = getattr(args, arg_name, None)
        if val is not None:
            updates[field_name] = val
    if getattr(args, "trace", None) is not None:
        updates["trace_path"] = args.trace
        updates["channel_kind"] = "trace"
    if updates:
        cfg = replace(cfg, **updates)
    return cfg


def _add_common_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML scenario config")
    p.add_argument("--scheme", choices=harness.SCHEMES)
    p.add_argument("--per", type=float, help="packet error rate on the mmWave links")
    p.add_argument("--latency-ms", dest="latency_ms", type=float,
                   help="server-to-gateway latency")
    p.add_argument("--p", type=float, help="Markov flip probability")
    p.add_argument("--q", type=float, help="Markov link-coupling probability")
    p.add_argument("--T-ms", dest="T_ms", type=float, help="cohort interval")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--trace", help="trace CSV; switches the channel to trace replay")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if args.event_log:
        cfg = replace(cfg, capture_event_log=True)
    record, world = harness.simulate(cfg)
    harness.write_csv([record], args.out)
    if args.event_log and world is not None:
        with open(args.event_log, "w") as fh:
            fh.write("\n".join(world.sim.event_log) + "\n")
    print(f"wrote {args.out}: throughput {record.throughput_gbps:.3f} Gbps, "
          f"5Gb latency {record.latency_5gb_s:.3f} s, "
          f"decode ratio {record.decode_ratio:.3f}")
    return 0


def cmd_grid(args: argparse.Namespace) -> int:
    base = _apply_overrides(load_config(args.config), args)
    axes = harness.GridAxes(
        per_values=_parse_float_list(args.pers),
        latency_values_ms=_parse_float_list(args.latencies),
        corr_values=(tuple(_parse_float_list(args.corrs))
                     if args.corrs else (None,)),
        schemes=tuple(args.schemes.split(",")))
    records = harness.run_grid(base, axes, repeats=args.repeats, jobs=args.jobs)
    harness.write_csv(records, args.out)
    print(f"wrote {args.out}: {len(records)} rows")
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    trace = ch.load_trace(args.trace, duplicate_single=args.duplicate_link)
    params, levels = ch.calibrate_from_trace(trace)
    result = {
        "p": params.p, "q": params.q, "step_s": params.step_s,
        "levels": {"mean_low": levels.mean_low, "mean_high": levels.mean_high,
                   "std_low": levels.std_low, "std_high": levels.std_high},
        "state_correlation": ch.state_correlation(params),
    }
    text = yaml.safe_dump(result, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    res = replay.run_replay("cotag", args.variant, seed=args.seed,
                            capture_event_log=args.event_log is not None)
    audit_rows = res.audit.rows()
    print(",".join(replay.Audit.COLUMNS))
    for row in audit_rows:
        print(",".join(str(row[c]).lower() if c == "decoded" else str(row[c])
                       for c in replay.Audit.COLUMNS))
    cohort0 = [r for r in audit_rows if r["cohort"] == 0]
    high = sum(r["high_sent"] for r in cohort0)
    low = sum(r["low_sent"] for r in cohort0)
    ap1 = sum(r["ap1_sent"] for r in cohort0)
    ap2 = sum(r["ap2_sent"] for r in cohort0)
    delivered = sum(r["delivered"] for r in cohort0)
    exact = all(d.byte_exact for d in res.deliveries
                if d.byte_exact is not None)
    print(f"# cohort 0: gateway {high} High + {low} Low; "
          f"ap1 {ap1}, ap2 {ap2}; delivered {delivered}, byte-exact {exact}")
    if args.audit_out:
        with open(args.audit_out, "w") as fh:
            fh.write(",".join(replay.Audit.COLUMNS) + "\n")
            for row in audit_rows:
                fh.write(",".join(
                    str(row[c]).lower() if c == "decoded" else str(row[c])
                    for c in replay.Audit.COLUMNS) + "\n")
    if args.event_log:
        with open(args.event_log, "w") as fh:
            fh.write("\n".join(res.event_log) + "\n")
    if args.compare_baseline:
        summary, _, _ = replay.sustained_comparison(args.variant, seed=args.seed)
        print(f"# sustained bucket {summary.cohort}: cotag "
              f"{summary.cotag_delivered}/{summary.expected} vs traditional "
              f"{summary.traditional_delivered}/{summary.expected} in 3T window")
    if res.violations:
        print("# violations:", *res.violations, sep="\n#   ")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotag-sim",
        description="Coded multipath forwarding simulator for dual-connectivity "
                    "mmWave access networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_common_overrides(p_run)
    p_run.add_argument("--out", default="metrics.csv")
    p_run.add_argument("--event-log", help="write the dispatch log here")
    p_run.set_defaults(fn=cmd_run)

    p_grid = sub.add_parser("grid", help="run a scenario sweep")
    _add_common_overrides(p_grid)
    p_grid.add_argument("--pers", default="0,0.0001",
                        help="comma-separated PER axis")
    p_grid.add_argument("--latencies", default="0,1,5",
                        help="comma-separated latency axis (ms)")
    p_grid.add_argument("--corrs", default="-0.34,0,0.34",
                        help="comma-separated link-correlation axis")
    p_grid.add_argument("--schemes", default=",".join(harness.SCHEMES))
    p_grid.add_argument("--repeats", type=int, default=1)
    p_grid.add_argument("--jobs", type=int, default=1)
    p_grid.add_argument("--out", default="grid.csv")
    p_grid.set_defaults(fn=cmd_grid)

    p_cal = sub.add_parser("calibrate", help="fit Markov parameters to a trace")
    p_cal.add_argument("--trace", required=True)
    p_cal.add_argument("--duplicate-link", action="store_true",
                       help="accept a single-link trace and mirror it")
    p_cal.add_argument("--out", help="also write the YAML result here")
    p_cal.set_defaults(fn=cmd_calibrate)

    p_rep = sub.add_parser("replay-fig3",
                           help="deterministic six-packet worked-example replay")
    p_rep.add_argument("--variant", choices=("balanced", "unbalanced"),
                       default="balanced")
    p_rep.add_argument("--seed", type=int, default=7)
    p_rep.add_argument("--audit-out", help="write audit rows as CSV")
    p_rep.add_argument("--event-log")
    p_rep.add_argument("--compare-baseline", action="store_true",
                       help="also run the sustained traditional-forwarding "
                            "comparison")
    p_rep.set_defaults(fn=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (harness.ConfigError, ch.TraceFormatError, ch.CalibrationError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
