from hypothesis import given, strategies as st

from clusterbft.core import Configuration
from clusterbft.leader import Election, leader_of
from clusterbft.messages import LeComplaint

MEMBERS = [f"p{i}" for i in range(1, 8)]  # n=7, f=2, q=5


class Host:
    def __init__(self, members=MEMBERS, me="p1"):
        self.config = Configuration.build([members])
        self.cluster = 0
        self.id = me
        self.records = []
        self.sent = []
        self.new_leaders = []

    def trace(self, kind, **data):
        self.records.append((kind, data))

    def broadcast(self, dsts, msg):
        self.sent.append((tuple(dsts), msg))

    def on_new_leader(self, leader, ts):
        self.new_leaders.append((leader, ts))


def changes(host):
    return [d for k, d in host.records if k == "le_change"]


def test_leader_round_robin():
    assert leader_of(["c", "a", "b"], 0) == "a"
    assert leader_of(["c", "a", "b"], 1) == "b"
    assert leader_of(["c", "a", "b"], 5) == "c"


def test_complain_once_per_ts_and_only_about_leader():
    h = Host()
    e = Election(h)
    e.complain("p3", "tob-timeout")  # not the leader
    assert not h.sent
    e.complain(e.leader, "tob-timeout")
    e.complain(e.leader, "tob-timeout")
    assert len(h.sent) == 1 and isinstance(h.sent[0][1], LeComplaint)


def test_amplify_at_f_plus_1_change_at_quorum():
    h = Host()
    e = Election(h)
    e.on_complaint("p2", LeComplaint(0, 1))
    e.on_complaint("p3", LeComplaint(0, 1))
    assert not h.sent
    e.on_complaint("p4", LeComplaint(0, 1))  # f+1 = 3
    assert [k for k, _ in h.records] == ["le_complain"]
    assert h.records[0][1]["cause"] == "amplify"
    e.on_complaint("p5", LeComplaint(0, 1))
    assert e.ts == 1
    e.on_complaint("p6", LeComplaint(0, 1))  # q = 5
    assert e.ts == 2 and changes(h)[0]["how"] == "quorum"
    assert h.new_leaders == [(leader_of(MEMBERS, 2), 2)]


def test_outsiders_and_stale_complaints_ignored():
    h = Host()
    e = Election(h)
    for src in ("x1", "x2", "x3", "x4", "x5"):
        e.on_complaint(src, LeComplaint(0, 1))
    e.on_complaint("p2", LeComplaint(0, 0))
    e.on_complaint("p3", LeComplaint(1, 1))
    assert e.ts == 1 and not h.records


def test_sync_jumps_to_later_ts():
    h = Host()
    e = Election(h)
    for src in ("p2", "p3", "p4"):
        e.on_complaint(src, LeComplaint(0, 4))
    assert e.ts == 4 and changes(h)[0]["how"] == "sync"


def test_observe_needs_f_plus_1_members():
    h = Host()
    e = Election(h)
    e.observe("p2", 6)
    e.observe("p3", 5)
    e.observe("x9", 9)  # not a member
    assert e.ts == 1
    e.observe("p4", 3)
    # the (f+1)-th highest of {6, 5, 3}
    assert e.ts == 3 and changes(h)[0]["how"] == "observe"


@given(st.lists(st.tuples(st.sampled_from(MEMBERS + ["x"]), st.integers(0, 6)), max_size=60))
def test_ts_never_decreases_and_change_needs_correct_support(events):
    h = Host()
    e = Election(h)
    last = e.ts
    for src, ts in events:
        e.on_complaint(src, LeComplaint(0, ts))
        assert e.ts >= last
        last = e.ts
    # the host's own complaint is never delivered back here, so every quorum
    # change rests on q distinct member complaints for the old ts
    for d in changes(h):
        if d["how"] == "quorum":
            backers = {s for s, t in events if t == d["old"] and s in MEMBERS}
            assert len(backers) >= 5
