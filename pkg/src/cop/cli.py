"""Command line: ``cop run``, ``cop check`` and ``cop replay``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from typing import Sequence

from . import adversary
from .harness import CHECKS, DEFAULT_CHECKS, RunReport, run_check
from .simnet import ReplayMismatch, Scenario, ScenarioError, Trace, parse_partitions, replay, run


def _on_off(text: str) -> bool:
    if text in ("on", "true", "yes", "1"):
        return True
    if text in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")


def _stall(text: str) -> dict[int, int]:
    try:
        return {int(a): int(b) for a, b in (p.split(":") for p in text.split(",") if p)}
    except ValueError:
        raise argparse.ArgumentTypeError("stall is CLIENT:K[,CLIENT:K...]") from None


def _partitions(text: str) -> list[list[int]]:
    try:
        return parse_partitions(text)
    except ValueError:
        raise argparse.ArgumentTypeError("partitions look like '1,2|3'") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cop", description="Simulate and check COP executions.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--config", help="scenario file with a [scenario] section")
    r.add_argument("--clients", type=int)
    r.add_argument("--ops", type=int, help="operations per client")
    r.add_argument("--workload", choices=["counter", "kv"])
    r.add_argument("--authstore", type=_on_off, metavar="on|off")
    r.add_argument("--adversary", choices=adversary.KINDS)
    r.add_argument("--target", type=int, help="client attacked by the adversary")
    r.add_argument("--tamper", choices=["operation", "signature"])
    r.add_argument("--partitions", type=_partitions, help="fork groups, e.g. '1|2'")
    r.add_argument("--seed", type=int)
    r.add_argument("--crypto", choices=["ideal", "sha256"])
    r.add_argument("--gc", type=_on_off, metavar="on|off")
    r.add_argument("--sequential", type=_on_off, metavar="on|off")
    r.add_argument("--stall", type=_stall, metavar="CLIENT:K")
    r.add_argument("--max-events", dest="max_events", type=int)
    r.add_argument("--out", help="write the trace here (JSON lines)")
    r.add_argument("--check", default=",".join(DEFAULT_CHECKS),
                   help=f"checks deciding the exit code, from {','.join(CHECKS)} (or 'none')")

    c = sub.add_parser("check", help="check a recorded trace")
    c.add_argument("--trace", required=True)
    c.add_argument("--mode", required=True, choices=sorted(CHECKS))

    rp = sub.add_parser("replay", help="re-run a trace's scenario and compare")
    rp.add_argument("--trace", required=True)
    return p


SCENARIO_FLAGS = ("clients", "ops", "workload", "authstore", "adversary", "target", "tamper",
                  "partitions", "seed", "crypto", "gc", "sequential", "stall", "max_events")


def scenario_from_args(args: argparse.Namespace) -> Scenario:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            sc = Scenario.from_config(fh.read())
    else:
        sc = Scenario()
    given = {k: getattr(args, k) for k in SCENARIO_FLAGS if getattr(args, k) is not None}
    sc = replace(sc, **given)
    if sc.authstore and "workload" not in given and not args.config:
        sc = replace(sc, workload="kv")
    sc.validate()
    return sc


def _parse_checks(text: str) -> tuple[str, ...]:
    if text.strip() in ("", "none"):
        return ()
    modes = tuple(m.strip() for m in text.split(",") if m.strip())
    for m in modes:
        if m not in CHECKS:
            raise ScenarioError(f"unknown check {m!r}")
    return modes


def cmd_run(args: argparse.Namespace) -> int:
    sc = scenario_from_args(args)
    checks = _parse_checks(args.check)
    trace = run(sc)
    if args.out:
        trace.write(args.out)
    report = RunReport.from_trace(trace, checks)
    print(report.render())
    return report.exit_code


def cmd_check(args: argparse.Namespace) -> int:
    trace = Trace.read(args.trace)
    v = run_check(trace, args.mode)
    if v is None:
        print(f"{args.mode}: skipped, history exceeds the search bound")
        return 2
    print(f"{args.mode}: {str(v.ok).lower()}" + (f" ({v.reason})" if v.reason else ""))
    if v.ok and v.witness is not None:
        print(f"witness: {v.witness}")
    return 0 if v.ok else 1


def cmd_replay(args: argparse.Namespace) -> int:
    trace = Trace.read(args.trace)
    try:
        replay(trace)
    except ReplayMismatch as e:
        print(f"replay: mismatch, {e}")
        return 1
    print(f"replay: identical ({len(trace.events)} events)")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "check":
            return cmd_check(args)
        return cmd_replay(args)
    except (ValueError, OSError) as e:
        print(f"cop: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
