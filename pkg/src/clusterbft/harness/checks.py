"""Safety and liveness checkers over a run trace.

Every checker reads only the trace, so it works equally on a live run and on
a trace file written earlier. Correct nodes are all nodes not listed as
Byzantine in the trace's meta record.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from ..core import fault_threshold, quorum_size
from ..netsim import Trace

SAFETY = (
    "brd_integrity", "brd_uniformity", "brd_no_duplication", "brd_validity", "inter_agreement",
    "overthrow_resistance", "config_uniformity", "total_order", "state_agreement", "accuracy",
    "certificates", "network_integrity", "byzantine_budget",
)
LIVENESS = ("quiescence", "round_completion", "brd_termination", "txn_validity", "reconfig_completeness",
            "leader_agreement", "eventual_succession")
# strategies that stall a round as leader, with the fewest clusters at which they do;
# a run with work must not end under one
STALLING = {"silent_leader": 2, "tob_withhold": 1, "mute": 1}


@dataclass(frozen=True)
class Violation:
    prop: str
    detail: str

    def __str__(self):
        return f"{self.prop}: {self.detail}"


class TraceView:
    """Indexes a trace once for all checkers."""

    def __init__(self, trace: Trace):
        self.trace = trace
        metas = trace.of_kind("meta")
        if not metas:
            raise ValueError("trace has no meta record")
        self.meta = metas[0].data
        self.byz = set(self.meta["byzantine"])
        self.by_kind: dict[str, list] = defaultdict(list)
        for rec in trace:
            self.by_kind[rec.kind].append(rec)

    def correct(self, node: str) -> bool:
        return node != "-" and node not in self.byz

    def events(self, kind: str, correct_only: bool = True):
        return [r for r in self.by_kind.get(kind, ()) if not correct_only or self.correct(r.node)]


def _disagreements(groups: dict, label: str, prop: str) -> list[Violation]:
    out = []
    for key, vals in sorted(groups.items(), key=lambda kv: str(kv[0])):
        distinct = sorted(set(v for _, v in vals))
        if len(distinct) > 1:
            out.append(Violation(prop, f"{label} {key}: {len(distinct)} distinct values across "
                                       f"{sorted(set(n for n, _ in vals))}"))
    return out


# -- safety -------------------------------------------------------------------


def check_brd(v: TraceView) -> list[Violation]:
    out = []
    delivered = v.events("brd_deliver")
    per_node = defaultdict(int)
    groups = defaultdict(list)
    broadcasts = {(r.node, r.data["r"]): r.data["rd"] for r in v.events("brd_broadcast")}
    for rec in delivered:
        d = rec.data
        per_node[(rec.node, d["r"])] += 1
        groups[(d["cluster"], d["r"])].append((rec.node, d["bundle"]))
        if len(set(d["senders"])) < d["q"]:
            out.append(Violation("brd_integrity", f"{rec.node} r{d['r']}: {len(set(d['senders']))} "
                                                  f"contributors < quorum {d['q']}"))
        for sender, rd in sorted(d["contribs"].items()):
            if not v.correct(sender):
                continue
            sent = broadcasts.get((sender, d["r"]))
            if sent != rd:
                out.append(Violation("brd_validity", f"{rec.node} r{d['r']}: contribution of correct {sender} "
                                                     f"does not match what it broadcast"))
    for (node, r), n in sorted(per_node.items()):
        if n > 1:
            out.append(Violation("brd_no_duplication", f"{node} delivered {n} times in round {r}"))
    out += _disagreements(groups, "cluster/round", "brd_uniformity")
    return out


def check_inter_agreement(v: TraceView) -> list[Violation]:
    groups = defaultdict(list)
    for rec in v.events("ops_accept"):
        groups[(rec.data["cluster"], rec.data["r"])].append((rec.node, rec.data["ops"]))
    for rec in v.events("stage1"):
        groups[(rec.data["cluster"], rec.data["r"])].append((rec.node, rec.data["ops"]))
    return _disagreements(groups, "cluster/round", "inter_agreement")


def check_execution(v: TraceView) -> list[Violation]:
    out = []
    cfg, order, state = defaultdict(list), defaultdict(list), defaultdict(list)
    rounds = defaultdict(list)
    for rec in v.events("execute"):
        d = rec.data
        cfg[d["r"]].append((rec.node, d["config"]))
        order[d["r"]].append((rec.node, tuple(d["ops"])))
        state[d["r"]].append((rec.node, d["state"]))
        rounds[rec.node].append(d["r"])
    out += _disagreements(cfg, "round", "config_uniformity")
    out += _disagreements(order, "round", "total_order")
    out += _disagreements(state, "round", "state_agreement")
    for node, rs in sorted(rounds.items()):
        if rs != list(range(rs[0], rs[0] + len(rs))):
            out.append(Violation("total_order", f"{node} executed rounds out of sequence: {rs[:10]}"))
    return out


def check_overthrow(v: TraceView) -> list[Violation]:
    """Every leader change at a correct replica must trace back to a legitimate complaint.

    Legitimate: a correct member's own timer expired, or it accepted a remote
    complaint instance for the first time. A complaint caused by a replayed
    instance, or amplification alone, does not count.
    """
    out = []
    cluster_of = {}
    for rec in v.trace:
        if rec.kind == "round_start":
            cluster_of[rec.node] = rec.data["cluster"]
    fresh_at = {}
    for rec in v.events("remote_complaint"):
        d = rec.data
        key = (rec.node, f"remote:{d['origin']}:{d['r']}:{d['cn']}")
        fresh_at.setdefault(key, d["fresh"])
    seen_uses = defaultdict(int)
    legit = defaultdict(list)  # (cluster, ts) -> times
    for rec in v.trace:
        if rec.kind == "round_start":
            cluster_of[rec.node] = rec.data["cluster"]
            continue
        if rec.kind != "le_complain" or not v.correct(rec.node):
            continue
        cause = rec.data["cause"]
        ok = cause in ("tob-timeout", "brd-timeout")
        if cause.startswith("remote:"):
            seen_uses[(rec.node, cause)] += 1
            ok = fresh_at.get((rec.node, cause), False) and seen_uses[(rec.node, cause)] == 1
        if ok:
            legit[(cluster_of.get(rec.node), rec.data["ts"])].append(rec.time)
    for rec in v.events("le_change"):
        d = rec.data
        if d["how"] != "quorum":
            continue
        c = cluster_of.get(rec.node)
        times = legit.get((c, d["old"]), [])
        if not any(t <= rec.time for t in times):
            out.append(Violation("overthrow_resistance", f"{rec.node} (cluster {c}) left ts {d['old']} at "
                                                         f"t={rec.time} without a legitimate complaint"))
    # replay resistance: an accepted remote instance may cause at most one complaint per replica
    for (node, cause), n in sorted(seen_uses.items()):
        if n > 1:
            out.append(Violation("overthrow_resistance", f"{node} complained {n} times for {cause}"))
    return out


def check_accuracy(v: TraceView) -> list[Violation]:
    out = []
    requested = defaultdict(list)
    for rec in v.events("reconfig_request"):
        requested[(rec.node, rec.data["kind"])].append(rec.time)
    flagged = set()
    for rec in v.events("reconfig_applied"):
        d = rec.data
        subj = d["subject"]
        if not v.correct(subj) or (subj, d["kind"]) in flagged:
            continue
        if not any(t <= rec.time for t in requested.get((subj, d["kind"]), [])):
            flagged.add((subj, d["kind"]))
            out.append(Violation("accuracy", f"{d['kind']} of {subj} applied without its request"))
    return out


def check_certificates(v: TraceView) -> list[Violation]:
    return [Violation("certificates", f"{r.node} rejected its own ordered slot {r.data}")
            for r in v.events("tob_reject")]


def check_network(v: TraceView) -> list[Violation]:
    sends = {}
    for rec in v.by_kind.get("send", ()):
        sends[rec.data["id"]] = (rec.node, rec.data["to"], rec.data["msg"])
    out = []
    got = defaultdict(int)
    for rec in v.by_kind.get("recv", ()):
        i = rec.data["id"]
        got[i] += 1
        s = sends.get(i)
        if s is None or s[1] != rec.node or s[0] != rec.data["from"] or s[2] != rec.data["msg"]:
            out.append(Violation("network_integrity", f"delivery {i} at {rec.node} has no matching send"))
    for i, n in got.items():
        if n > 1:
            out.append(Violation("network_integrity", f"envelope {i} delivered {n} times"))
    return out


def membership_by_round(v: TraceView) -> dict[int, list[set]]:
    """Cluster layouts per executed round, rebuilt from applied changes at correct replicas."""
    layout = [set(c) for c in v.meta["clusters"]]
    changes = defaultdict(set)
    for rec in v.events("reconfig_applied"):
        d = rec.data
        changes[d["r"]].add((d["kind"], d["subject"], d["cluster"]))
    rounds = sorted({rec.data["r"] for rec in v.events("execute")})
    out = {}
    for r in range(1, (max(rounds) if rounds else 0) + 2):
        out[r] = [set(c) for c in layout]
        for kind, subj, c in sorted(changes.get(r, ())):
            if kind == "join":
                layout[c].add(subj)
            else:
                layout[c].discard(subj)
    return out


def check_budget(v: TraceView) -> list[Violation]:
    out = []
    for r, layout in membership_by_round(v).items():
        for j, members in enumerate(layout):
            bad = len(members & v.byz)
            if members and bad > fault_threshold(len(members)):
                out.append(Violation("byzantine_budget", f"round {r} cluster {j}: {bad} Byzantine of "
                                                         f"{len(members)}"))
    return out


def check_safety(trace: Trace) -> list[Violation]:
    v = trace if isinstance(trace, TraceView) else TraceView(trace)
    out = []
    for fn in (check_brd, check_inter_agreement, check_execution, check_overthrow, check_accuracy,
               check_certificates, check_network, check_budget):
        out += fn(v)
    return out


# -- liveness -------------------------------------------------------------------


def check_liveness(trace: Trace, status: str | None = None) -> list[Violation]:
    """Properties that must hold once a run past GST has gone quiet."""
    v = trace if isinstance(trace, TraceView) else TraceView(trace)
    out = []
    if status is not None and status != "quiescent":
        out.append(Violation("quiescence", f"run ended with status {status}"))
    finals = {r.node: r.data for r in v.events("final")}
    members = {n: d for n, d in finals.items() if d["status"] == "member"}
    if not members:
        out.append(Violation("round_completion", "no correct member at the end of the run"))
        return out
    top = max(d["round"] for d in members.values())
    for n, d in sorted(members.items()):
        if d["round"] != top:
            out.append(Violation("round_completion", f"{n} stopped at round {d['round']}, others reached {top}"))
        if d["pool"]:
            out.append(Violation("txn_validity", f"{n} still holds {d['pool']} unexecuted transactions"))
    for n, d in sorted(finals.items()):
        if d["status"] == "joining":
            out.append(Violation("reconfig_completeness", f"{n} never finished joining"))
    brd_rounds = {(r.node, r.data["r"]) for r in v.events("brd_deliver")}
    for rec in v.events("execute"):
        if (rec.node, rec.data["r"]) not in brd_rounds:
            out.append(Violation("brd_termination", f"{rec.node} executed round {rec.data['r']} "
                                                    f"without delivering its dissemination"))
    returned = {(r.node, r.data["tid"]) for r in v.events("txn_return")}
    executed_anywhere = set()
    for rec in v.events("tob_deliver"):
        executed_anywhere.add(rec.data["tid"])
    left = {n for n, d in finals.items() if d["status"] == "left"}
    for rec in v.events("txn_submit"):
        tid = rec.data["tid"]
        if (rec.node, tid) in returned:
            continue
        if rec.node in left and tid in executed_anywhere:
            continue
        out.append(Violation("txn_validity", f"transaction {tid} submitted at {rec.node} never returned"))
    acks = v.events("ack_quorum")
    applied = {(r.data["subject"], r.data["kind"]): r.data["r"] for r in v.events("reconfig_applied")}
    for rec in acks:
        key = (rec.node, rec.data["kind"])
        r_applied = applied.get(key)
        if r_applied is None:
            out.append(Violation("reconfig_completeness", f"{rec.data['kind']} of {rec.node} acknowledged for "
                                                          f"round {rec.data['r']} but never installed"))
        elif r_applied > rec.data["r"] + 2:
            out.append(Violation("reconfig_completeness", f"{rec.data['kind']} of {rec.node} installed in round "
                                                          f"{r_applied}, acknowledged for {rec.data['r']}"))
    views = defaultdict(set)
    for n, d in members.items():
        views[d["cluster"]].add((d["ts"], d["leader"]))
    for c, vs in sorted(views.items()):
        if len(vs) > 1:
            out.append(Violation("leader_agreement", f"cluster {c} members disagree on the leader: {sorted(vs)}"))
    strategies = v.meta.get("strategies", {})
    # a run that never had anything to order never needed its first leader
    had_work = bool(v.events("txn_submit") or v.events("execute"))
    for c, vs in sorted(views.items()):
        if not had_work:
            break
        for _, leader in sorted(vs):
            needs = STALLING.get(strategies.get(leader))
            if needs is not None and len(v.meta["clusters"]) >= needs:
                out.append(Violation("eventual_succession", f"cluster {c} ended under {leader}, "
                                                            f"a {strategies[leader]} node"))
    return out


def check_all(trace: Trace, status: str | None = None) -> dict[str, list[Violation]]:
    v = TraceView(trace)
    return {"safety": check_safety(v), "liveness": check_liveness(v, status)}


def quorum_intersection_table(max_n: int = 10) -> list[dict]:
    """For each size: f, quorum and the smallest pairwise quorum intersection found by enumeration."""
    from itertools import combinations

    rows = []
    for n in range(1, max_n + 1):
        f = fault_threshold(n)
        q = quorum_size(n)
        quorums = [frozenset(c) for c in combinations(range(n), q)]
        smallest = min(len(a & b) for a in quorums for b in quorums)
        rows.append({"n": n, "f": f, "quorum": q, "min_intersection": smallest, "ok": smallest >= f + 1})
    return rows
