"""Build a simulation from a scenario, run it, and collect the outcome."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..adversary import Coalition, make_strategy
from ..core import Configuration
from ..netsim import Simulator, Trace, TruncatedRun
from ..replica import Replica
from .scenario import Scenario
from .workload import gen_workload


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    status: str  # "quiescent" | "horizon" | "truncated"
    trace: Trace
    replicas: dict = field(default_factory=dict)
    end_time: int = 0
    events: int = 0
    error: str | None = None


def meta_record(sc: Scenario, seed: int) -> dict:
    return {
        "scenario": sc.name,
        "seed": seed,
        "clusters": [list(c) for c in sc.clusters],
        "byzantine": sorted(sc.byzantine),
        "strategies": {f.node: f.strategy for f in sc.faults},
        "batch": sc.protocol.batch_size,
        "gst": sc.timing.gst,
        "defense": sc.protocol.replay_defense,
        "joiners": sc.joiners,
    }


def build(sc: Scenario, seed: int) -> tuple[Simulator, dict[str, Replica]]:
    config = Configuration.build(sc.clusters)
    sim = Simulator(seed, sc.timing, byzantine=sc.byzantine)
    sim.trace.add(0, "-", "meta", meta_record(sc, seed))
    coalition = Coalition()
    faults = {f.node: f for f in sc.faults}
    replicas: dict[str, Replica] = {}
    for nid in sc.all_nodes():
        ctx = sim.context(nid)
        f = faults.get(nid)
        interceptor = make_strategy(f.strategy, coalition, f.options) if f else None
        replicas[nid] = Replica(ctx, config, sc.protocol, interceptor)
        sim.register(nid, replicas[nid])

    correct_members = [x for c in sc.clusters for x in c if x not in sc.byzantine]
    submitters = sc.workload.submitters or correct_members
    for sub in gen_workload(sc.workload, seed, submitters):
        rep = replicas[sub.replica]
        sim.schedule(sub.time, sub.replica, lambda rep=rep, txn=sub.txn: rep.submit(txn), "submit")

    def trigger(change, contacts, r_hint):
        rep = replicas[change.subject]
        if change.kind == "join":
            rep.request_join(change.cluster, contacts, r_hint)
        else:
            rep.request_leave()

    by_round = [m for m in sc.membership if m.at_round is not None]
    for m in sc.membership:
        if m.at_time is not None:
            contacts = list(sc.clusters[m.cluster])
            sim.schedule(m.at_time, m.subject, lambda m=m, c=contacts: trigger(m, c, 1), "membership")

    fired: set[int] = set()

    def on_round(rep: Replica, r: int) -> None:
        if rep.id in sc.byzantine:
            return
        for idx, m in enumerate(by_round):
            if idx in fired or rep.cluster != m.cluster or r < m.at_round:
                continue
            fired.add(idx)
            contacts = list(rep.config.members(m.cluster))
            sim.schedule(sim.now, m.subject, lambda m=m, c=contacts, r=r: trigger(m, c, r), "membership")
        sv = sc.stale_view
        if sv is not None and rep.id == sv.node and r >= sv.from_round:
            clusters = list(rep.config.clusters)
            if clusters[sv.cluster] != frozenset(sv.members):
                clusters[sv.cluster] = frozenset(sv.members)
                rep.config = Configuration(tuple(clusters), rep.config.departed - frozenset(sv.members),
                                           rep.config.round)
                rep.trace("stale_view_injected", cluster=sv.cluster)

    for rep in replicas.values():
        rep.round_hook = on_round
    return sim, replicas


def run(sc: Scenario, seed: int, max_events: int | None = None) -> RunResult:
    sim, replicas = build(sc, seed)
    budget = max_events if max_events is not None else sc.max_events
    error = None
    try:
        status = sim.run(until=sc.horizon, max_events=budget)
    except TruncatedRun as exc:
        status = "truncated"
        error = str(exc)
    for nid in sorted(replicas):
        sim.trace.add(sim.now, nid, "final", replicas[nid].summary())
    return RunResult(sc, seed, status, sim.trace, replicas, sim.now, sim.events_processed, error)
