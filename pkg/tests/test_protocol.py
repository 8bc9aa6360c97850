from dataclasses import replace

import pytest

from clusterbft.adversary import SHIPPED, STRATEGIES, make_strategy
from clusterbft.core import Certificate, Trans, Txn
from clusterbft.harness.checks import check_all
from clusterbft.harness.matrix import matrix_scenario, run_cell
from clusterbft.harness.runner import run
from clusterbft.harness.scenario import Fault, MembershipChange, ScenarioError, validate
from clusterbft.intercluster import validate_operations


@pytest.fixture
def archived(run_packaged):
    res, _ = run_packaged("two_clusters", 0)
    rep = res.replicas["c1n00"]
    inter = rep.inter
    ops, proofs = inter.prev[0]
    return inter.prev_config, inter.prev_round, ops, proofs, rep.params.batch_size


def cut(proof, keep):
    sigs = sorted(proof.cert.signatures, key=lambda s: s.signer)[:keep]
    return replace(proof, cert=Certificate(proof.cert.subject, frozenset(sigs)))


def test_genuine_operations_validate(archived):
    cfg, r, ops, proofs, b = archived
    assert validate_operations(cfg, 0, r, ops, proofs, b)


def test_operations_bound_to_round_and_cluster(archived):
    cfg, r, ops, proofs, b = archived
    assert not validate_operations(cfg, 0, r + 1, ops, proofs, b)
    assert not validate_operations(cfg, 1, r, ops, proofs, b)
    assert not validate_operations(cfg, 7, r, ops, proofs, b)
    assert not validate_operations(cfg, 0, r, ops[1:], proofs[1:], b)


def test_short_certificates_rejected(archived):
    cfg, r, ops, proofs, b = archived
    q = cfg.q(0)
    short = (cut(proofs[0], q - 1),) + tuple(proofs[1:])
    assert not validate_operations(cfg, 0, r, ops, short, b)
    last = tuple(proofs[:-1]) + (cut(proofs[-1], q - 1),)
    assert not validate_operations(cfg, 0, r, ops, last, b)


def test_substituted_transaction_rejected(archived):
    cfg, r, ops, proofs, b = archived
    forged = (Trans(ops[0].origin, Txn("evil", "write", "k0", "x")),) + tuple(ops[1:])
    assert not validate_operations(cfg, 0, r, forged, proofs, b)


def test_certificates_checked_against_current_view(archived):
    cfg, r, ops, proofs, b = archived
    # the same certificates against a view where cluster 0 grew: quorum rises beyond the signer count
    grown = cfg.apply(0, [])
    members = set(cfg.clusters[0]) | {f"extra{i}" for i in range(6)}
    grown = replace(grown, clusters=(frozenset(members),) + tuple(cfg.clusters[1:]))
    assert grown.q(0) > cfg.q(0)
    assert not validate_operations(grown, 0, r, ops, proofs, b)


def test_registry():
    assert set(SHIPPED) <= set(STRATEGIES)
    with pytest.raises(ValueError, match="unknown adversary strategy"):
        make_strategy("nope", None)


@pytest.mark.parametrize("strategy", SHIPPED)
def test_each_strategy_small_matrix_cell(strategy):
    o = run_cell("4+7", strategy, 3)
    assert o.safety == [] and o.liveness == [], [str(v) for v in o.safety + o.liveness]


def test_f_mute_members_do_not_block():
    sc = matrix_scenario("4+7", "mute", with_membership=False)
    res = run(sc, 0)
    checks = check_all(res.trace, res.status)
    assert checks == {"safety": [], "liveness": []}
    assert res.trace.of_kind("brd_deliver")


def test_join_and_leave_are_uniform():
    sc = matrix_scenario("3x4", None)
    res = run(sc, 2)
    checks = check_all(res.trace, res.status)
    assert checks == {"safety": [], "liveness": []}
    applied = {(r.data["kind"], r.data["subject"]) for r in res.trace.of_kind("reconfig_applied")}
    assert applied == {("join", "j0"), ("leave", "c0n03")}
    finals = {r.node: r.data for r in res.trace.of_kind("final")}
    assert finals["j0"]["status"] == "member"
    assert finals["c0n03"]["status"] == "left"
    states = {d["state"] for d in finals.values() if d["status"] == "member"}
    assert len(states) == 1


def test_byzantine_joiner_budget_is_enforced():
    sc = matrix_scenario("3x4", None, with_membership=False)
    sc.faults = [Fault("c0n01", "mute")]
    sc.membership = [MembershipChange("c0n03", "leave", 0, at_round=1)]
    with pytest.raises(ScenarioError):
        validate(sc)


def test_catchup_serves_laggards(run_packaged):
    res, checks = run_packaged("brd_partial_leader", 0)
    assert checks == {"safety": [], "liveness": []}
    caught = {r.node for r in res.trace.of_kind("catchup")}
    assert caught and caught <= {"p3", "p4"}
