"""Message accounting and per-run statistics derived from a trace."""

from __future__ import annotations

from collections import Counter, defaultdict

from ..core import fault_threshold
from ..netsim import Trace


def count_messages(trace: Trace) -> dict:
    """Sent messages split into global and local, total and per round and kind."""
    per_round: dict = defaultdict(lambda: {"global": 0, "local": 0, "kinds": Counter()})
    totals = {"global": 0, "local": 0}
    for rec in trace:
        if rec.kind != "send":
            continue
        d = rec.data
        scope = d["scope"]
        totals[scope] += 1
        bucket = per_round[d["r"] if d["r"] is not None else 0]
        bucket[scope] += 1
        bucket["kinds"][d["msg"]] += 1
    rounds = {r: {"global": b["global"], "local": b["local"], "kinds": dict(sorted(b["kinds"].items()))}
              for r, b in sorted(per_round.items())}
    return {"global": totals["global"], "local": totals["local"], "total": totals["global"] + totals["local"],
            "rounds": rounds}


def global_bound(sizes: list[int]) -> int:
    """Upper bound on inter-cluster messages in a round with correct leaders: z(z-1)(max f + 1)."""
    z = len(sizes)
    return z * (z - 1) * (max(fault_threshold(n) for n in sizes) + 1)


def summarize(trace: Trace) -> dict:
    starts: dict[int, int] = {}
    ends: dict[int, int] = {}
    committed = Counter()
    for rec in trace:
        if rec.kind == "round_start":
            r = rec.data["r"]
            starts[r] = min(starts.get(r, rec.time), rec.time)
        elif rec.kind == "execute":
            r = rec.data["r"]
            ends[r] = max(ends.get(r, rec.time), rec.time)
    per_node_execs = defaultdict(int)
    for rec in trace.of_kind("execute"):
        per_node_execs[rec.node] += 1
        committed[rec.data["r"]] = max(committed[rec.data["r"]], rec.data["n"])
    latencies = {r: ends[r] - starts[r] for r in sorted(ends) if r in starts}
    changes = Counter()
    for rec in trace.of_kind("le_change"):
        changes[rec.node] += 1
    reconf = [{"subject": r.data["subject"], "kind": r.data["kind"], "round": r.data["r"], "tagged": r.data["tagged"]}
              for r in trace.of_kind("reconfig_applied")]
    seen = set()
    unique_reconf = []
    for x in reconf:
        key = (x["subject"], x["kind"])
        if key not in seen:
            seen.add(key)
            unique_reconf.append(x)
    msgs = count_messages(trace)
    return {
        "rounds_executed": len(ends),
        "round_latency": latencies,
        "committed_per_round": dict(sorted(committed.items())),
        "leader_changes_max_per_node": max(changes.values()) if changes else 0,
        "reconfigurations": unique_reconf,
        "messages": {"global": msgs["global"], "local": msgs["local"], "total": msgs["total"]},
        "messages_per_round": {r: {"global": b["global"], "local": b["local"]} for r, b in msgs["rounds"].items()},
    }
