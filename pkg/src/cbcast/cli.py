"""Command-line entry point.

Exit status: 0 all hard checks pass (or trace-only run), 1 a property
failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checker import render_verdicts, run_all_checks
from .core import CbcastError, DecodeError, InvariantViolation, ScenarioError
from .scenario import generate_scenarios, load_scenario
from .simnet import Simulator
from .trace import parse_trace

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbcast", description=__doc__.splitlines()[0])
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", metavar="PATH", help="scenario file to simulate")
    src.add_argument("--trace", metavar="PATH", help="check an existing trace instead of simulating")
    src.add_argument("--generate", type=int, metavar="N", help="write N random conforming scenarios")
    ap.add_argument("--seed", type=int, help="scheduler seed (overrides the scenario's); generator seed with --generate")
    ap.add_argument("--max-ticks", type=int, help="tick budget (overrides the scenario's)")
    ap.add_argument("--trace-out", metavar="PATH", help="where to write the trace (default: stdout)")
    ap.add_argument("--check", action="store_true", help="run all checkers on the trace")
    ap.add_argument("--verdict-out", metavar="PATH", help="where to write verdicts (default: stdout)")
    ap.add_argument("--out-dir", metavar="DIR", default="scenarios", help="output directory for --generate")
    return ap


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _check(trace, verdict_out) -> int:
    verdicts = run_all_checks(trace)
    _write(verdict_out, render_verdicts(verdicts))
    return EXIT_OK if all(v.ok for v in verdicts) else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.max_ticks is not None and args.max_ticks < 1:
        print("error: --max-ticks must be positive", file=sys.stderr)
        return EXIT_INPUT

    if args.generate is not None:
        if args.generate < 0:
            print("error: --generate needs a non-negative count", file=sys.stderr)
            return EXIT_INPUT
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for sc in generate_scenarios(args.seed or 0, args.generate):
            (out / f"{sc.name}.scn").write_text(sc.render())
        return EXIT_OK

    if args.trace is not None:
        try:
            trace = parse_trace(Path(args.trace).read_text())
        except (OSError, DecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        return _check(trace, args.verdict_out)

    try:
        sc = load_scenario(args.scenario)
        sim = Simulator(sc, seed=args.seed, max_ticks=args.max_ticks)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        result = sim.run()
    except (InvariantViolation, CbcastError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_FAIL
    text = result.trace.render()
    if args.trace_out or not args.check:
        _write(args.trace_out, text)
    if not args.check:
        return EXIT_OK
    return _check(result.trace, args.verdict_out)


if __name__ == "__main__":
    sys.exit(main())
