"""Command-line entry point: ``etestim {simulate,miet,design-lti,sweep}``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 simulation or
solver fault, 4 failed run-time assertion (Zeno guard, MIET or Lyapunov
checks, non-monotone sweep).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .harness import ConfigError, ScenarioConfig, check_sweep, iss_sweep, run_scenario
from .hybrid import SimulationError, ZenoError
from .lti_design import LmiSolveError, solve_P
from .triggering import InfeasibleTuning, compute_miet, phi_ode_oracle

EXIT_OK, EXIT_CONFIG, EXIT_FAULT, EXIT_ASSERT = 0, 2, 3, 4
IET_SLACK = 1e-6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _cmd_simulate(args) -> int:
    cfg = ScenarioConfig.from_json(args.config)
    out = args.out or cfg.output_dir
    rep = run_scenario(cfg, out_dir=out)
    for s in rep.stats:
        mn = "n/a" if s.min is None else f"{s.min:.6f}"
        mean = "n/a" if s.mean is None else f"{s.mean:.6f}"
        print(f"node {s.node + 1}: {s.count} transmissions, min IET {mn} s, mean IET {mean} s")
    print(f"final |e| {rep.final_error:.3e}, ultimate bound {rep.ultimate_bound:.3e}")
    if out:
        print(f"wrote {', '.join(sorted(rep.files.values()))}")
    failed = []
    floors = [p.threshold for p in rep.loop.nodes]
    for ev in rep.events:
        if ev.inter_event_time < floors[ev.node] - IET_SLACK:
            failed.append(f"node {ev.node + 1} transmitted after {ev.inter_event_time:.9g} s at t={ev.time:.9g}")
            break
    if rep.monitor is not None and rep.monitor.jump_violations:
        failed.append(f"{rep.monitor.jump_violations} jumps increased the Lyapunov function")
    for msg in failed:
        print(f"assertion failed: {msg}", file=sys.stderr)
    return EXIT_ASSERT if failed else EXIT_OK


def _cmd_miet(args) -> int:
    try:
        closed = compute_miet(args.L, args.gamma, args.lam)
        oracle = phi_ode_oracle(args.L, args.gamma, args.lam)
    except (InfeasibleTuning, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"closed_form {closed:.12g}")
    print(f"ode_oracle  {oracle:.12g}")
    print(f"difference  {abs(closed - oracle):.3e}")
    return EXIT_OK


def _cmd_design(args) -> int:
    sc = ScenarioConfig.from_json(args.config).build()
    if sc.lmi is None:
        raise ConfigError("lmi: this scenario defines no LMI (add an 'lmi' section to an inline LTI model)")
    sol = solve_P(sc.lmi)
    rep = sol.report
    doc = {
        "P": sol.P.tolist(),
        "report": {
            "max_eigenvalue": rep.max_eigenvalue,
            "P_min_eigenvalue": rep.P_min_eigenvalue,
            "feasible": rep.feasible,
            "residual_norm": rep.residual_norm,
            "tolerance": rep.tolerance,
        },
        "restarts_used": sol.restarts_used,
    }
    if args.out:
        parent = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(parent, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    else:
        print(json.dumps(doc, indent=2))
    print(f"max eigenvalue {rep.max_eigenvalue:.3e} (tolerance {rep.tolerance:.3e}), min eig(P) {rep.P_min_eigenvalue:.3e}")
    return EXIT_OK


def _parse_amplitudes(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("at least one amplitude is required")
    return vals


def _cmd_sweep(args) -> int:
    cfg = ScenarioConfig.from_json(args.config)
    try:
        res = iss_sweep(cfg, args.amplitudes, workers=args.workers)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"amplitudes: {exc}") from None
    print("amplitude,ultimate_bound")
    for a, b in res:
        print(f"{a:.6g},{b:.6e}")
    if not check_sweep(res):
        print("assertion failed: ultimate bounds are not nondecreasing within 10% per step", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="etestim", description="Dynamic event-triggered state estimation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one scenario and write events.csv, trace.csv, summary.json")
    s.add_argument("--config", required=True, help="scenario JSON file")
    s.add_argument("--out", help="output directory (defaults to the config's output_dir)")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("miet", help="minimum inter-event time, closed form and ODE oracle")
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.set_defaults(func=_cmd_miet)

    s = sub.add_parser("design-lti", help="solve the LMI for P and write it with its report as JSON")
    s.add_argument("--config", required=True, help="scenario JSON file (case study or inline LTI with 'lmi')")
    s.add_argument("--out", help="output JSON path (stdout when omitted)")
    s.set_defaults(func=_cmd_design)

    s = sub.add_parser("sweep", help="ultimate error bound versus noise amplitude")
    s.add_argument("--config", required=True, help="base scenario JSON file")
    s.add_argument("--amplitudes", required=True, type=_parse_amplitudes, help="comma-separated, ascending, starting at 0")
    s.add_argument("--workers", type=int, default=1, help="parallel runs")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ZenoError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (SimulationError, LmiSolveError, FloatingPointError) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
