"""Scripted scenarios: partial-leader dissemination, complaint replays, growing a cluster."""

import pytest

from clusterbft.harness.scenario import load_scenario

SEEDS = range(4)


def correct(res, node):
    return node not in res.scenario.byzantine


def fig3b_deliveries(res):
    """(pre-change delivering nodes, {node: bundle}) for round 1 among correct round-1 members."""
    members = set(res.scenario.clusters[0])
    changes = [r.time for r in res.trace.of_kind("le_change") if correct(res, r.node)]
    first_change = min(changes) if changes else None
    got = {}
    for r in res.trace.of_kind("brd_deliver"):
        if r.data["r"] == 1 and r.node in members and correct(res, r.node):
            got.setdefault(r.node, (r.time, r.data["bundle"]))
    pre = sorted(n for n, (t, _) in got.items() if first_change is None or t < first_change)
    return pre, {n: b for n, (_, b) in got.items()}


@pytest.mark.parametrize("seed", SEEDS)
def test_partial_leader_one_early_delivery_then_same_set(run_packaged, seed):
    res, checks = run_packaged("brd_partial_leader", seed)
    assert checks == {"safety": [], "liveness": []}
    pre, bundles = fig3b_deliveries(res)
    assert pre == ["p1"]
    assert set(bundles) == {"p1", "p3", "p4"}
    assert len(set(bundles.values())) == 1


@pytest.mark.parametrize("seed", SEEDS)
def test_replay_defense_on(run_packaged, seed):
    res, checks = run_packaged("complaint_replay", seed)
    assert checks == {"safety": [], "liveness": []}
    assert res.trace.of_kind("adv_replay")
    for node in res.scenario.clusters[0]:
        if not correct(res, node):
            continue
        changes = [r for r in res.trace.of_kind("le_change") if r.node == node]
        legit = {(r.data["origin"], r.data["r"], r.data["cn"]) for r in res.trace.of_kind("remote_complaint")
                 if r.node == node and r.data["fresh"]}
        assert len(changes) == len(legit), node


@pytest.mark.parametrize("seed", SEEDS)
def test_replay_defense_off_is_caught(run_packaged, seed):
    res, checks = run_packaged("complaint_replay", seed, replay_defense=False)
    changes = [r for r in res.trace.of_kind("le_change") if r.node == "c0n00"]
    legit = {(r.data["origin"], r.data["r"], r.data["cn"]) for r in res.trace.of_kind("remote_complaint")
             if r.node == "c0n00" and r.data["fresh"]}
    assert len(changes) - len(legit) >= 3
    assert "overthrow_resistance" in {v.prop for v in checks["safety"]}


def grow_facts(res):
    byz = res.scenario.byzantine
    effective = {}
    for r in res.trace:
        if r.node in byz:
            continue
        if r.kind == "joined":
            effective.setdefault(r.node, r.data["r"])
        elif r.kind == "execute" and r.data["sizes"][0] == 7:
            effective.setdefault(r.node, r.data["r"] + 1)
    f_at = {}
    for r in res.trace.of_kind("execute"):
        if r.node not in byz and r.data["cluster"] == 0:
            f_at.setdefault(r.node, {})[r.data["r"]] = r.data["f"]
    return effective, f_at


@pytest.mark.parametrize("seed", SEEDS)
def test_grow_4_to_7(run_packaged, seed):
    res, checks = run_packaged("grow_4_to_7", seed)
    assert checks == {"safety": [], "liveness": []}
    effective, f_at = grow_facts(res)
    correct_nodes = {n for c in res.scenario.clusters for n in c} | set(res.scenario.joiners)
    correct_nodes -= res.scenario.byzantine
    assert set(effective) == correct_nodes
    (R,) = set(effective.values())
    for node, per_round in f_at.items():
        for r, f in per_round.items():
            # execute records carry the threshold for the following round
            assert f == (2 if r + 1 >= R else 1), (node, r)
    accepted = [(r.data["r"], r.data["sigs"]) for r in res.trace.of_kind("ops_accept") if r.data["cluster"] == 0]
    assert all(s >= 5 for r, s in accepted if r >= R)
    assert any(s == 3 for r, s in accepted if r < R)
    rejecting = {r.node for r in res.trace.of_kind("inter_reject") if r.data["r"] >= R}
    assert rejecting and rejecting <= set(res.scenario.clusters[1])


def test_grow_scenario_matches_file():
    sc = load_scenario("grow_4_to_7")
    assert [len(c) for c in sc.clusters] == [4, 4]
    assert sorted(m.subject for m in sc.membership) == ["c0n04", "c0n05", "c0n06"]
