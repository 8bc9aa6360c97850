"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in the terminal summary.
"""

import random
import time
from collections import Counter

import pytest

from clusterbft.adversary import SHIPPED
from clusterbft.harness.checks import check_all, quorum_intersection_table
from clusterbft.harness.matrix import TOPOLOGIES, matrix_scenario, run_matrix
from clusterbft.harness.runner import run
from clusterbft.harness.scenario import load_scenario, packaged_scenarios

from conftest import record_criterion
from test_metrics import best_case, executed_rounds
from test_replays import fig3b_deliveries, grow_facts

MATRIX_SEEDS = range(200)
MATRIX_BUDGET_S = 600


@pytest.fixture(scope="module")
def matrix():
    t0 = time.perf_counter()
    outcomes = run_matrix(MATRIX_SEEDS, workers=None)
    return outcomes, time.perf_counter() - t0


def _summary(bad):
    return ", ".join(f"{o.strategy}/{o.topology}/{o.seed}" for o in bad[:5])


def test_criterion_1_safety_matrix(matrix):
    outcomes, elapsed = matrix
    cells = Counter((o.strategy, o.topology) for o in outcomes)
    complete = set(cells) == {(s, t) for s in SHIPPED for t in TOPOLOGIES} and min(cells.values()) >= 200
    bad = [o for o in outcomes if o.safety]
    kinds = Counter(v.prop for o in bad for v in o.safety)
    ok = complete and not bad and elapsed < MATRIX_BUDGET_S
    record_criterion(1, "safety matrix", ok,
                     f"{len(outcomes)} runs, {len(bad)} with violations {dict(kinds)}, {elapsed:.0f}s "
                     f"of {MATRIX_BUDGET_S}s" + (f"; first: {_summary(bad)}" if bad else ""))
    assert complete
    assert not bad, _summary(bad)
    assert elapsed < MATRIX_BUDGET_S


def test_criterion_2_liveness_matrix(matrix):
    outcomes, _ = matrix
    bad = [o for o in outcomes if o.liveness or o.status != "quiescent"]
    kinds = Counter(v.prop for o in bad for v in o.liveness)
    record_criterion(2, "liveness matrix", not bad, f"{len(outcomes)} runs, {len(bad)} stuck {dict(kinds)}"
                     + (f"; first: {_summary(bad)}" if bad else ""))
    assert not bad, _summary(bad)


def test_criterion_3_best_case_inter_count():
    counts = Counter()
    for seed in range(5):
        for b in executed_rounds(run(best_case([4, 7]), seed).trace).values():
            counts[b["kinds"].get("Inter", 0)] += 1
    ok = set(counts) == {5}
    record_criterion(3, "5 Inter per round for 4+7", ok, f"Inter per round histogram {dict(counts)}")
    assert ok


def test_criterion_4_partial_leader_replay():
    sc = load_scenario("brd_partial_leader")
    failures = []
    for seed in sc.seeds:
        res = run(sc, seed)
        checks = check_all(res.trace, res.status)
        pre, bundles = fig3b_deliveries(res)
        if pre != ["p1"] or set(bundles) != {"p1", "p3", "p4"} or len(set(bundles.values())) != 1 \
                or checks["safety"] or checks["liveness"]:
            failures.append((seed, pre, bundles))
    record_criterion(4, "partial-leader replay", not failures,
                     f"{len(sc.seeds)} seeds, {len(failures)} off script")
    assert not failures


def _replay_counts(res, node="c0n00"):
    changes = sum(1 for r in res.trace.of_kind("le_change") if r.node == node)
    legit = {(r.data["origin"], r.data["r"], r.data["cn"]) for r in res.trace.of_kind("remote_complaint")
             if r.node == node and r.data["fresh"]}
    return changes, len(legit)


def test_criterion_5_replay_defense():
    sc = load_scenario("complaint_replay")
    on_bad, off_bad, extras = [], [], []
    for seed in sc.seeds:
        sc.protocol.replay_defense = True
        res = run(sc, seed)
        checks = check_all(res.trace, res.status)
        changes, legit = _replay_counts(res)
        if changes != legit or checks["safety"] or checks["liveness"]:
            on_bad.append(seed)
        sc.protocol.replay_defense = False
        res = run(sc, seed)
        checks = check_all(res.trace, res.status)
        changes, legit = _replay_counts(res)
        extras.append(changes - legit)
        if changes - legit < 3 or "overthrow_resistance" not in {v.prop for v in checks["safety"]}:
            off_bad.append(seed)
    ok = not on_bad and not off_bad
    record_criterion(5, "complaint replay defense", ok,
                     f"defense on mismatches {on_bad}; defense off extra changes {extras}, "
                     f"unflagged {off_bad}")
    assert ok


def test_criterion_6_quorum_tables():
    rows = quorum_intersection_table(10)
    ok = [r["n"] for r in rows] == list(range(1, 11)) and all(r["min_intersection"] >= r["f"] + 1 for r in rows)
    record_criterion(6, "quorum intersection n=1..10", ok,
                     " ".join(f"n{r['n']}:f{r['f']}/q{r['quorum']}/min{r['min_intersection']}" for r in rows))
    assert ok


def test_criterion_7_determinism():
    rng = random.Random(20)
    pairs = []
    names = packaged_scenarios()
    for _ in range(20):
        if rng.random() < 0.5:
            sc = load_scenario(rng.choice(names))
        else:
            sc = matrix_scenario(rng.choice(list(TOPOLOGIES)), rng.choice(SHIPPED))
        pairs.append((sc, rng.randrange(10_000)))
    differing = [(sc.name, seed) for sc, seed in pairs if run(sc, seed).trace.text() != run(sc, seed).trace.text()]
    record_criterion(7, "byte-identical traces", not differing, f"{len(pairs)} pairs, {len(differing)} differ")
    assert not differing


def test_criterion_8_grow_4_to_7():
    sc = load_scenario("grow_4_to_7")
    failures = []
    for seed in sc.seeds:
        res = run(sc, seed)
        checks = check_all(res.trace, res.status)
        effective, f_at = grow_facts(res)
        rounds = set(effective.values())
        if len(rounds) != 1 or checks["safety"] or checks["liveness"]:
            failures.append((seed, "rounds", sorted(rounds)))
            continue
        (R,) = rounds
        wrong_f = [(n, r) for n, per in f_at.items() for r, f in per.items() if f != (2 if r + 1 >= R else 1)]
        accepted = [(r.data["r"], r.data["sigs"]) for r in res.trace.of_kind("ops_accept") if r.data["cluster"] == 0]
        weak_after = [x for x in accepted if x[0] >= R and x[1] < 5]
        rejected = any(r.data["r"] >= R for r in res.trace.of_kind("inter_reject"))
        if wrong_f or weak_after or not rejected:
            failures.append((seed, wrong_f[:3], weak_after[:3], rejected))
    record_criterion(8, "grow 4 to 7", not failures, f"{len(sc.seeds)} seeds, failures {failures[:3]}")
    assert not failures
