"""Command line entry point: run, sweep, check and report."""

from __future__ import annotations

import argparse
import json
import sys
import time

from ..netsim import Trace
from .checks import check_all
from .metrics import count_messages, summarize
from .runner import run
from .scenario import SCENARIO_DIR_ENV, ScenarioError, load_scenario, packaged_scenarios, parse_seed_range


def _violations(result_checks: dict, safety_only: bool) -> list:
    out = list(result_checks["safety"])
    if not safety_only:
        out += result_checks["liveness"]
    return out


def _run_one(sc, seed, args):
    res = run(sc, seed, max_events=args.max_events)
    checks = check_all(res.trace, res.status)
    bad = _violations(checks, args.safety_only)
    return res, checks, bad


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else sc.seeds[0]
    res, checks, bad = _run_one(sc, seed, args)
    if args.trace:
        res.trace.write(args.trace)
    report = {
        "scenario": sc.name,
        "seed": seed,
        "status": res.status,
        "end_time": res.end_time,
        "events": res.events,
        "trace_fingerprint": res.trace.fingerprint(),
        "summary": summarize(res.trace),
        "violations": [str(x) for x in bad],
    }
    if res.error:
        report["error"] = res.error
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    s = report["summary"]
    print(f"{sc.name} seed={seed} status={res.status} t={res.end_time} events={res.events} "
          f"rounds={s['rounds_executed']} msgs={s['messages']['total']} violations={len(bad)}")
    for v in bad:
        print(f"  VIOLATION {v}")
    return 1 if bad else 0


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    seeds = parse_seed_range(args.seeds) if args.seeds else sc.seeds
    failures = 0
    rows = []
    t0 = time.perf_counter()
    for seed in seeds:
        res, _, bad = _run_one(sc, seed, args)
        failures += bool(bad)
        rows.append({"seed": seed, "status": res.status, "violations": [str(x) for x in bad]})
        mark = "ok" if not bad else "FAIL"
        print(f"seed {seed:>5} {mark:4} status={res.status} t={res.end_time}")
        for v in bad:
            print(f"  VIOLATION {v}")
    elapsed = time.perf_counter() - t0
    print(f"{len(seeds)} runs, {failures} failing, {elapsed:.1f}s")
    if args.report:
        with open(args.report, "w") as fh:
            json.dump({"scenario": sc.name, "runs": rows, "failing": failures}, fh, indent=2)
    return 1 if failures else 0


def cmd_check(args) -> int:
    trace = Trace.read(args.trace)
    checks = check_all(trace, args.status)
    bad = _violations(checks, args.safety_only)
    for v in bad:
        print(f"VIOLATION {v}")
    print(f"{len(trace)} records, {len(bad)} violations")
    return 1 if bad else 0


def cmd_report(args) -> int:
    trace = Trace.read(args.trace)
    out = {"summary": summarize(trace), "messages": count_messages(trace)}
    text = json.dumps(out, indent=2, sort_keys=True, default=str)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def cmd_list(args) -> int:
    for name in packaged_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clusterbft",
                                description="Simulate clustered reconfigurable BFT replication and check invariants. "
                                            f"Scenario names resolve against ${SCENARIO_DIR_ENV} and the packaged set.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trace_in=False):
        if not trace_in:
            sp.add_argument("--scenario", required=True, help="scenario file or name")
            sp.add_argument("--max-events", type=int, default=None, help="abort a run after this many events")
        sp.add_argument("--report", help="write a JSON report here")
        sp.add_argument("--safety-only", action="store_true", help="ignore liveness checks")

    r = sub.add_parser("run", help="run one scenario with one seed")
    common(r)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--trace", help="write the trace here")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over a seed range")
    common(s)
    s.add_argument("--seeds", help="seed range such as 0..99")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="check invariants on a trace file")
    common(c, trace_in=True)
    c.add_argument("--trace", required=True)
    c.add_argument("--status", default=None, help="run status to assume for the quiescence check")
    c.set_defaults(func=cmd_check)

    rp = sub.add_parser("report", help="message counts and statistics for a trace file")
    rp.add_argument("--trace", required=True)
    rp.add_argument("--report", help="write the JSON here instead of stdout")
    rp.set_defaults(func=cmd_report)

    ls = sub.add_parser("list", help="list packaged scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
