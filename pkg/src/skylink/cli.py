"""Command-line entry point: run, verify, campaign, list-fixtures."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .model import SkylinkError
from .procedures import verify_trace
from .report import PROFILES, summarize
from .scenario import list_fixtures, load_scenario
from .trace import read_trace

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2
SEED_ENV = "SKYLINK_SEED"


class UsageError(Exception):
    pass


def parse_seeds(text: str) -> range:
    """``A..B`` is half-open: ``0..100`` runs seeds 0 through 99."""
    lo, sep, hi = text.partition("..")
    if not sep:
        raise UsageError(f"seed range must look like A..B, got {text!r}")
    try:
        a, b = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"seed range bounds must be integers, got {text!r}") from None
    if a < 0 or b < 0:
        raise UsageError("seeds must be non-negative")
    return range(a, max(a, b))


def resolve_seed(given: Optional[int]) -> int:
    if given is not None:
        return given
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = resolve_seed(args.seed)
    r = harness.run(scenario, seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    r.trace.write(out)
    s = summarize(r.trace.all_records())
    print(f"scenario {scenario.name} seed {seed} -> {out}")
    for wf, counts in s["outcomes"].items():
        print(f"  {wf:<16} " + " ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    print(f"anomalies {sum(s['anomalies'].values())}" + "".join(f" {k}={v}" for k, v in s["anomalies"].items()))
    print(f"trace_hash {s['trace_hash']}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    report = verify_trace(read_trace(args.trace))
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(args.profile), indent=2) + "\n")
    if args.format == "json":
        print(json.dumps(report.to_dict(args.profile), indent=2))
    else:
        sys.stdout.write(report.render(args.profile))
    return report.exit_code(args.profile)


def _cmd_campaign(args) -> int:
    scenario = load_scenario(args.scenario)
    seeds = parse_seeds(args.seeds)
    agg = harness.campaign(scenario, seeds, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "campaign.json").write_text(json.dumps(agg, indent=2) + "\n")
    headline = {k: v for k, v in agg.items() if k != "per_seed"}
    print(json.dumps(headline, indent=2))
    return EXIT_OK


def _cmd_list(args) -> int:
    for name in list_fixtures():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skylink", description="UAS security workflow simulator and trace verifier")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one seeded run and write its trace")
    r.add_argument("scenario", help="scenario file or bundled fixture name")
    r.add_argument("--seed", type=int, default=None, help=f"RNG seed (falls back to ${SEED_ENV}, then 0)")
    r.add_argument("--out", required=True, help="trace output path (JSON Lines)")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="check a trace against the workflow tables and invariants")
    v.add_argument("trace")
    v.add_argument("--profile", choices=PROFILES, default="strict")
    v.add_argument("--format", choices=("text", "json"), default="text", help="stdout report format")
    v.add_argument("--json", metavar="PATH", help="also write the JSON report here")
    v.set_defaults(func=_cmd_verify)

    c = sub.add_parser("campaign", help="run a seed range and aggregate statistics")
    c.add_argument("scenario")
    c.add_argument("--seeds", required=True, help="half-open range A..B")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    c.set_defaults(func=_cmd_campaign)

    ls = sub.add_parser("list-fixtures", help="list bundled scenarios")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SkylinkError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
