"""Command-line front end.

Exit codes: 0 pass, 1 property violation, 2 usage or parse error,
3 inconclusive (explorer bounds hit).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .adversary import AdversaryError
from .explorer import EXTRA_PROPERTIES, PROPERTIES, Counterexample, explore
from .fuzz import fuzz
from .metrics import meter
from .protocol import ConfigurationError, Mutation
from .scenario import ScenarioError, excerpt, run_scenario
from .sim import read_trace, replay

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    report = run_scenario(args.scenario, _out_dir(args))
    res = report.result
    print(f"{args.scenario}: {res.status} at t={res.end_time}")
    for p, (t, v) in sorted(res.decisions.items()):
        print(f"  party {p} decided {v!r} at t={t}")
    if report.ok:
        print(f"PASS ({', '.join(sorted(report.scenario.checks)) or 'no checks declared'})")
        return EXIT_OK
    for v in report.violations:
        print(f"FAIL {v}")
        for line in excerpt(v):
            print(f"    {line}")
    return EXIT_VIOLATION


def _load_template(path) -> dict:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, exc.lineno, str(path)) from None
    if not isinstance(raw, dict):
        raise ScenarioError("top level must be a JSON object", 1, str(path))
    return raw


def cmd_fuzz(args) -> int:
    template = _load_template(args.template)
    summary = fuzz(template, args.runs, args.seed, _out_dir(args))
    print(json.dumps(summary.to_dict(), sort_keys=True, indent=2))
    if summary.ok:
        return EXIT_OK
    ce = summary.counterexample
    print(ce.describe())
    print(f"replay with: fuzz {args.template} --runs 1 --seed {ce.case_seed}")
    return EXIT_VIOLATION


def cmd_explore(args) -> int:
    byz = args.byzantine
    byzantine = None if byz == "none" else "primary" if byz == "primary" else int(byz)
    props = PROPERTIES + (EXTRA_PROPERTIES if args.all_properties else ())
    verdict = explore(
        args.n, args.f, args.views, args.depth,
        byzantine=byzantine, mutation=args.mutation, properties=props,
        max_states=args.max_states,
    )
    if isinstance(verdict, Counterexample):
        print(f"counterexample after {verdict.states} states")
        print(verdict.describe())
    else:
        print(verdict)
    out = _out_dir(args)
    if out is not None:
        d = asdict(verdict)
        if "path" in d:
            d["path"] = [str(t) for t in verdict.path]
        (out / "explore.json").write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")
    return verdict.exit_code


def cmd_meter(args) -> int:
    met = meter(args.trace)
    text = met.to_json()
    print(text)
    out = _out_dir(args)
    if out is not None:
        (out / "metrics.json").write_text(text + "\n")
    return EXIT_VIOLATION if met.violations else EXIT_OK


def cmd_replay(args) -> int:
    stored = Path(args.trace).read_bytes()
    res = replay(args.trace)
    fresh = res.trace_text().encode()
    out = _out_dir(args)
    if out is not None:
        res.write_trace(out / "trace.jsonl")
    if fresh == stored:
        print(f"replay identical: {len(res.trace)} events")
        return EXIT_OK
    a, b = stored.splitlines(), fresh.splitlines()
    first = next((i for i, (x, y) in enumerate(zip(a, b)) if x != y), min(len(a), len(b)))
    print(f"replay differs at line {first + 1} ({len(a)} stored vs {len(b)} replayed lines)")
    return EXIT_VIOLATION


def _positive(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {val}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iths", description="Simulate and check IT-HS Byzantine agreement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file and check its declared properties")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fuzz", help="run randomized cases drawn from a template")
    p.add_argument("template")
    p.add_argument("--runs", type=_positive, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("explore", help="exhaustively explore a small system")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--f", type=int, default=1)
    p.add_argument("--views", type=_positive, default=1, help="view bound")
    p.add_argument("--depth", type=_positive, default=10_000, help="depth bound")
    p.add_argument("--max-states", type=_positive, default=200_000)
    p.add_argument("--byzantine", default="primary", help="'primary', 'none', or a party id")
    p.add_argument("--mutation", choices=Mutation.ALL, default=None)
    p.add_argument("--all-properties", action="store_true",
                   help="also check the support properties (disables the single-view reduction)")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("meter", help="meter a stored trace and check the word bounds")
    p.add_argument("trace")
    p.set_defaults(func=cmd_meter)

    p = sub.add_parser("replay", help="re-run a stored trace from its header and compare")
    p.add_argument("trace")
    p.set_defaults(func=cmd_replay)

    for action in sub.choices.values():
        action.add_argument("--out", metavar="DIR", default=None, help="write artifacts here")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ConfigurationError, AdversaryError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
