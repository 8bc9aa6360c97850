from itertools import combinations

import pytest
from hypothesis import given, strategies as st

from clusterbft.core import (KEYRING, Certificate, Configuration, InvalidConfiguration, Keyring, ReconfigRequest,
                             Txn, digest, encode, fault_threshold, quorum_size, sender_set, subject,
                             validate_certificate)

# frozen from the brute-force oracle below
QUORUMS = {1: 1, 2: 2, 3: 2, 4: 3, 5: 4, 6: 4, 7: 5, 8: 6, 9: 6, 10: 7}
THRESHOLDS = {1: 0, 2: 0, 3: 0, 4: 1, 5: 1, 6: 1, 7: 2, 8: 2, 9: 2, 10: 3}


def smallest_intersecting_quorum(n, f):
    """Oracle: smallest q whose every pair of q-subsets shares at least f+1 members."""
    for q in range(1, n + 1):
        sets = [frozenset(c) for c in combinations(range(n), q)]
        if min(len(a & b) for a in sets for b in sets) >= f + 1:
            return q
    raise AssertionError("no quorum size works")


@pytest.mark.parametrize("n", range(1, 11))
def test_quorum_matches_oracle(n):
    f = fault_threshold(n)
    assert f == THRESHOLDS[n] == max(x for x in range(n) if 3 * x + 1 <= n)
    assert quorum_size(n) == QUORUMS[n] == smallest_intersecting_quorum(n, f)


@pytest.mark.parametrize("f", range(4))
def test_quorum_is_2f_plus_1_at_3f_plus_1(f):
    assert quorum_size(3 * f + 1) == 2 * f + 1


def test_fault_threshold_rejects_empty():
    with pytest.raises(InvalidConfiguration):
        fault_threshold(0)


def test_sender_set():
    assert sender_set(["p3", "p1", "p4", "p2"], 1) == ("p1", "p2")
    assert sender_set([f"q{i}" for i in range(7)], 2) == ("q0", "q1", "q2")
    with pytest.raises(InvalidConfiguration):
        sender_set(["a"], 1)


@given(st.sets(st.text("abcdef", min_size=1, max_size=3), min_size=1, max_size=12))
def test_sender_set_contains_a_correct_member(ids):
    f = fault_threshold(len(ids))
    s = sender_set(ids, f)
    assert len(s) == f + 1 and set(s) <= ids
    assert list(s) == sorted(ids)[: f + 1]


def test_encode_is_canonical():
    assert encode({"b": 1, "a": [1, "x"]}) == encode({"a": [1, "x"], "b": 1})
    assert digest(("a", 1)) == digest(("a", 1))
    assert digest(("a", 1)) != digest(("a", "1"))
    assert Txn("t", "write", "k", "v").digest == Txn("t", "write", "k", "v").digest
    assert Txn("t", "write", "k", "v").digest != Txn("t", "write", "k", "w").digest


def test_certificate_validation():
    members = ["p1", "p2", "p3", "p4"]
    subj = subject("x", 1)
    sigs = frozenset(KEYRING.sign(p, subj) for p in members[:3])
    assert validate_certificate(Certificate(subj, sigs), members, 3)
    assert not validate_certificate(Certificate(subj, sigs), members, 4)
    # signatures over another subject or from outsiders do not count
    other = frozenset(KEYRING.sign(p, subject("y")) for p in members)
    assert not validate_certificate(Certificate(subj, other), members, 1)
    assert not validate_certificate(Certificate(subj, sigs), ["p4", "p5"], 1)
    forged = frozenset(Keyring(b"other").sign(p, subj) for p in members)
    assert not validate_certificate(Certificate(subj, forged), members, 1)


def test_duplicate_signatures_count_once():
    subj = subject("dup")
    tok = KEYRING.sign("p1", subj)
    assert not validate_certificate(Certificate(subj, frozenset([tok, tok])), ["p1", "p2"], 2)


def req(kind, who, cluster=0, r=1):
    return ReconfigRequest(kind, who, cluster, r)


def test_configuration_apply_joins_before_leaves():
    cfg = Configuration.build([["a", "b", "c", "d"], ["e"]])
    new = cfg.apply(0, [req("leave", "a"), req("join", "x"), req("join", "e")])
    assert new.clusters[0] == frozenset({"b", "c", "d", "x"})
    assert new.departed == frozenset({"a"})
    # a departed id cannot come back
    assert new.apply(0, [req("join", "a")]).clusters[0] == new.clusters[0]
    assert not new.admissible(req("join", "a"))
    assert new.admissible(req("leave", "b"))


def test_configuration_never_empties_a_cluster():
    cfg = Configuration.build([["a"]])
    assert cfg.apply(0, [req("leave", "a")]).clusters[0] == frozenset({"a"})
    assert not cfg.admissible(req("leave", "a"))


def test_configuration_rejects_overlap():
    with pytest.raises(InvalidConfiguration):
        Configuration.build([["a", "b"], ["b"]])
    with pytest.raises(InvalidConfiguration):
        Configuration.build([[]])


def test_grow_4_to_7_threshold():
    cfg = Configuration.build([["p1", "p2", "p3", "p4"]])
    assert (cfg.f(0), cfg.q(0)) == (1, 3)
    grown = cfg.apply(0, [req("join", x) for x in ("p5", "p6", "p7")])
    assert (grown.f(0), grown.q(0)) == (2, 5)


@given(st.lists(st.tuples(st.sampled_from(["join", "leave"]), st.sampled_from("abcdefgh")), max_size=12))
def test_apply_keeps_layout_valid(ops):
    cfg = Configuration.build([["a", "b", "c"], ["z"]])
    for kind, who in ops:
        before = cfg
        cfg = cfg.apply(0, [req(kind, who)])
        assert cfg.clusters[0]
        assert not (cfg.departed & cfg.clusters[0])
        assert before.departed <= cfg.departed
        assert cfg.clusters[1] == frozenset({"z"})
