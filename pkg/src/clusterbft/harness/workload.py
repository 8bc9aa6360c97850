"""Deterministic client workload: a read/write mix over a skewed key space."""

from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import accumulate

from ..core import Txn


@dataclass(frozen=True)
class Submission:
    time: int
    replica: str
    txn: Txn


def zipf_weights(n: int, s: float) -> list[float]:
    return [1.0 / (k + 1) ** s for k in range(n)]


def gen_workload(spec, seed: int, submitters: list[str]) -> list[Submission]:
    """Transactions with submit times and target replicas, a pure function of (spec, seed)."""
    if spec.txns <= 0:
        return []
    if not submitters:
        raise ValueError("workload needs at least one submitting replica")
    if not 0.0 <= spec.read_ratio <= 1.0:
        raise ValueError("read_ratio must be within [0, 1]")
    rng = random.Random(f"workload:{seed}")
    cum = list(accumulate(zipf_weights(max(1, spec.keys), spec.skew)))
    targets = sorted(submitters)
    out = []
    for i in range(spec.txns):
        is_read = rng.random() < spec.read_ratio
        key = f"k{rng.choices(range(len(cum)), cum_weights=cum)[0]}"
        if is_read:
            txn = Txn(f"t{i}", "read", key)
        else:
            txn = Txn(f"t{i}", "write", key, f"v{i}")
        t = spec.start + (rng.randrange(spec.window) if spec.window > 0 else 0)
        out.append(Submission(t, targets[rng.randrange(len(targets))], txn))
    out.sort(key=lambda s: (s.time, s.txn.tid))
    return out
