"""The fault matrix: every shipped strategy on every reference topology over many seeds."""

from __future__ import annotations

import os
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from ..adversary import SHIPPED
from ..core import fault_threshold
from ..netsim import TimingModel
from ..replica import ProtocolParams
from .checks import TraceView, Violation, check_liveness, check_safety
from .runner import run
from .scenario import Fault, MembershipChange, Scenario, WorkloadSpec, default_ids, validate

TOPOLOGIES = {
    "4+7": [4, 7],
    "3x4": [4, 4, 4],
    "4+7+10": [4, 7, 10],
}


def matrix_scenario(topology: str, strategy: str | None, seed: int = 0, txns: int = 6,
                    with_membership: bool = True) -> Scenario:
    """A scenario with the full Byzantine budget per cluster running `strategy`.

    The faulty members are the ones that lead right after start (sorted
    positions 1..f), so the first leaders of every cluster are Byzantine.
    GST varies with the seed. Cluster 0 gains a joiner in round 1 and loses a
    correct member in round 2.
    """
    sizes = TOPOLOGIES[topology]
    clusters = [default_ids(j, n) for j, n in enumerate(sizes)]
    faults = []
    if strategy is not None:
        for members in clusters:
            for x in members[1: 1 + fault_threshold(len(members))]:
                faults.append(Fault(x, strategy))
    rng = random.Random(f"matrix:{topology}:{strategy}:{seed}")
    gst = rng.choice([0, 100, 200, 400])
    membership = []
    if with_membership:
        membership = [MembershipChange("j0", "join", 0, at_round=1),
                      MembershipChange(clusters[0][-1], "leave", 0, at_round=2)]
    sc = Scenario(
        name=f"matrix-{topology}-{strategy or 'none'}",
        clusters=clusters,
        faults=faults,
        timing=TimingModel(gst=gst, delta=10, pre_gst_max=60),
        protocol=ProtocolParams(batch_size=2),
        workload=WorkloadSpec(txns=txns, window=300),
        membership=membership,
        horizon=400_000,
        max_events=400_000,
        seeds=[seed],
    )
    validate(sc)
    return sc


@dataclass
class MatrixOutcome:
    topology: str
    strategy: str
    seed: int
    status: str
    safety: list[Violation] = field(default_factory=list)
    liveness: list[Violation] = field(default_factory=list)
    seconds: float = 0.0


def run_cell(topology: str, strategy: str, seed: int) -> MatrixOutcome:
    sc = matrix_scenario(topology, strategy, seed)
    t0 = time.perf_counter()
    res = run(sc, seed)
    v = TraceView(res.trace)
    out = MatrixOutcome(topology, strategy, seed, res.status, check_safety(v), check_liveness(v, res.status))
    out.seconds = time.perf_counter() - t0
    return out


def _cell(args) -> MatrixOutcome:
    return run_cell(*args)


def run_matrix(seeds: range | list[int], strategies=SHIPPED, topologies=tuple(TOPOLOGIES), progress=None,
               workers: int | None = 1) -> list[MatrixOutcome]:
    """Run every (strategy, topology, seed) cell; `workers` > 1 spreads cells over processes.

    Runs share nothing, so the outcome list is the same in either mode.
    """
    cells = [(t, s, seed) for s in strategies for t in topologies for seed in seeds]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1:
        it = map(_cell, cells)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        it = pool.map(_cell, cells, chunksize=8)
    outcomes = []
    try:
        for o in it:
            outcomes.append(o)
            if progress is not None:
                progress(o)
    finally:
        if pool is not None:
            pool.shutdown()
    return outcomes
