"""Command-line front end.

Subcommands: ``fit-map`` (identify a propulsion map from force-speed data),
``simulate`` (run a scenario file, write log and summary), ``gen-traj``
(export a reference trajectory as CSV) and ``audit`` (re-check the energy
decay of an existing log).

Exit codes: 0 success, 2 configuration/input error, 3 plant abort,
4 audit failure.  Output is deterministic: no timestamps, no machine info.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, TowsimError
from .powertrain import fit_map, read_fit_samples
from .scenario import load_scenario, write_map_file
from .simulation import SimLog, lyapunov_audit, run_closed_loop
from .trajectory import (make_circle, make_figure_eight, make_line,
                         make_s_curve, min_turn_radius, write_trajectory_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PLANT = 3
EXIT_AUDIT = 4


def _cmd_fit_map(args) -> int:
    try:
        samples = read_fit_samples(args.input)
        pmap, report = fit_map(samples)
    except TowsimError as exc:
        print(f"fit-map: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_map_file(args.output, pmap, report)
    print("fitted propulsion map coefficients:")
    for i, c in enumerate(pmap.coeffs, start=1):
        print(f"  b{i} = {c:.6g}")
    print(f"rms residual: {report.rms_residual:.6g} N over {report.n_samples} samples")
    print(f"written to {args.output}")
    return EXIT_OK


def _cmd_simulate(args, overrides) -> int:
    try:
        scenario = load_scenario(args.scenario, overrides)
    except ConfigError as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    result = run_closed_loop(scenario.cfg)
    summary = result.summary

    log_path = args.log or scenario.output_log or f"{scenario.cfg.name}_log.csv"
    summary_path = (args.summary or scenario.output_summary
                    or f"{scenario.cfg.name}_summary.txt")
    result.log.write_csv(log_path)
    with open(summary_path, "w") as fh:
        fh.write(summary.to_text())
    print(summary.to_text(), end="")
    print(f"log written to {log_path}")
    print(f"summary written to {summary_path}")

    if not summary.completed:
        print(f"simulate: plant abort: {summary.abort_reason}", file=sys.stderr)
        return EXIT_PLANT
    violations = (summary.v2_violations_unsaturated
                  if scenario.audit_exclude_saturated else summary.v2_violations)
    if violations > scenario.audit_max_violations:
        print(f"simulate: audit failure: {violations} V2 increase(s) above "
              f"tolerance {scenario.cfg.v2_step_tolerance} "
              f"(allowed {scenario.audit_max_violations})", file=sys.stderr)
        return EXIT_AUDIT
    return EXIT_OK


def _cmd_gen_traj(args) -> int:
    min_r = min_turn_radius(args.wheelbase, args.psi_max)
    try:
        if args.kind == "line":
            traj = make_line(speed=args.speed, heading=args.heading)
        elif args.kind == "circle":
            traj = make_circle(radius=args.radius, speed=args.speed,
                               min_radius=min_r)
        elif args.kind == "figure_eight":
            traj = make_figure_eight(radius=args.radius, speed=args.speed,
                                     min_radius=min_r)
        else:
            traj = make_s_curve(radius=args.radius, speed=args.speed,
                                arc_angle=args.arc_angle, lead_in=args.lead_in,
                                min_radius=min_r)
    except TowsimError as exc:
        print(f"gen-traj: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TypeError, ValueError) as exc:
        print(f"gen-traj: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = write_trajectory_csv(traj, args.output, args.duration, args.rate)
    print(f"{rows} rows written to {args.output}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    try:
        log = SimLog.read_csv(args.log)
        report = lyapunov_audit(log, residual_tolerance=args.residual_tolerance)
    except (TowsimError, OSError, KeyError, ValueError) as exc:
        print(f"audit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_AUDIT


def build_parser():
    parser = argparse.ArgumentParser(
        prog="towsim",
        description="Tractor-trailer tracking control simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit-map", help="fit a propulsion map from u1,v,F samples")
    p_fit.add_argument("input", help="CSV file with header u1,v,F")
    p_fit.add_argument("output", help="map file to write")

    p_sim = sub.add_parser(
        "simulate", help="run a scenario file",
        epilog="Unknown --section.key=value flags override scenario entries.")
    p_sim.add_argument("scenario", help="scenario YAML file")
    p_sim.add_argument("--log", help="log CSV path (default from scenario)")
    p_sim.add_argument("--summary", help="summary path (default from scenario)")

    p_gen = sub.add_parser("gen-traj", help="write a reference trajectory CSV")
    p_gen.add_argument("kind", choices=["line", "circle", "figure_eight", "s_curve"])
    p_gen.add_argument("output")
    p_gen.add_argument("--speed", type=float, required=True)
    p_gen.add_argument("--duration", type=float, required=True)
    p_gen.add_argument("--rate", type=float, default=100.0, help="samples per second")
    p_gen.add_argument("--radius", type=float, default=10.0)
    p_gen.add_argument("--heading", type=float, default=0.0)
    p_gen.add_argument("--arc-angle", type=float, default=0.6)
    p_gen.add_argument("--lead-in", type=float, default=5.0)
    p_gen.add_argument("--wheelbase", type=float, default=2.0)
    p_gen.add_argument("--psi-max", type=float, default=0.55)

    p_audit = sub.add_parser("audit", help="re-run the Lyapunov audit on a log")
    p_audit.add_argument("log", help="log CSV written by simulate")
    p_audit.add_argument("--residual-tolerance", type=float, default=1e-3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args, extras = parser.parse_known_args(argv)

    overrides = []
    for item in extras:
        if item.startswith("--") and "=" in item and "." in item.split("=", 1)[0]:
            overrides.append(item[2:])
        else:
            parser.error(f"unrecognized argument: {item}")
    if overrides and args.command != "simulate":
        parser.error("dotted overrides are only valid with the simulate command")

    if args.command == "fit-map":
        return _cmd_fit_map(args)
    if args.command == "simulate":
        return _cmd_simulate(args, overrides)
    if args.command == "gen-traj":
        return _cmd_gen_traj(args)
    return _cmd_audit(args)


if __name__ == "__main__":
    sys.exit(main())
