"""Leader-based Byzantine reliable dissemination of collected reconfiguration requests.

Members send their signed request sets to the leader, which aggregates a
quorum of them into a bundle. The bundle then goes through Echo and Ready
rounds; a member delivers once a quorum of Ready messages agree. A member that
reached Ready keeps the bundle and its attestation as its `valid` value and
hands it to every later leader of the round, which must re-propose the most
recent one it hears about.
"""

from __future__ import annotations

from .core import KEYRING, ReconfigRequest, count_valid, digest, subject
from .messages import Agg, Attestation, BrdEcho, BrdReady, Bundle, Contribution, Valid


def contribution_subject(cluster: int, r: int, ts: int, recs) -> str:
    return subject("brd-recs", cluster, r, ts, recs)


def brd_echo_subject(cluster: int, r: int, ts: int, bundle_digest: str) -> str:
    return subject("brd-echo", cluster, r, ts, bundle_digest)


def brd_ready_subject(cluster: int, r: int, ts: int, bundle_digest: str) -> str:
    return subject("brd-ready", cluster, r, ts, bundle_digest)


def bundle_integrity(bundle: Bundle, cluster: int, r: int, members, q: int, ts: int | None = None,
                     keyring=KEYRING) -> bool:
    """At least q distinct members signed their part of the bundle for this round."""
    if not isinstance(bundle, Bundle):
        return False
    members = set(members)
    seen = set()
    for c in bundle.contributions:
        if not isinstance(c, Contribution) or c.cluster != cluster or c.round != r:
            return False
        if ts is not None and c.ts != ts:
            return False
        if c.sender in seen or c.sender not in members:
            return False
        s = c.sig
        if s is None or s.signer != c.sender or s.digest != contribution_subject(cluster, r, c.ts, c.recs):
            return False
        if not keyring.verify(s):
            return False
        seen.add(c.sender)
    return len(seen) >= q


def valid_attestation(att: Attestation, bundle: Bundle, cluster: int, r: int, members, f: int, q: int,
                      keyring=KEYRING) -> bool:
    if not isinstance(att, Attestation):
        return False
    if att.kind == "origin":
        return bundle_integrity(bundle, cluster, r, members, q, ts=att.ts, keyring=keyring)
    if att.kind == "echo":
        return count_valid(att.sigs, brd_echo_subject(cluster, r, att.ts, bundle.digest), members, keyring) >= q
    if att.kind == "ready":
        return count_valid(att.sigs, brd_ready_subject(cluster, r, att.ts, bundle.digest), members,
                           keyring) >= f + 1
    return False


def union_requests(bundle: Bundle) -> list[ReconfigRequest]:
    out = []
    for c in bundle.contributions:
        out.extend(c.recs)
    return out


class BrdInstance:
    def __init__(self, host, r: int, leader: str, ts: int):
        self.host = host
        self.cluster = host.cluster
        self.r = r
        cfg = host.config
        self.members = cfg.members(self.cluster)
        self.f = cfg.f(self.cluster)
        self.q = cfg.q(self.cluster)
        self.leader = leader
        self.ts = ts
        self.my_recs: frozenset | None = None
        self.valid: tuple[Bundle, Attestation] | None = None
        self.delivered = False
        self.future: list[tuple[str, object]] = []
        self._reset_epoch()

    def _reset_epoch(self):
        self.echoed = False
        self.readied = False
        self.quorum: set[str] = set()
        self.contributions: dict[str, Contribution] = {}
        self.high_valid: tuple[Bundle, Attestation] | None = None
        self.agg_sent = False
        self.echo_votes: dict[str, dict] = {}
        self.ready_votes: dict[str, dict] = {}
        self.bundles: dict[str, Bundle] = {}

    @property
    def is_leader(self) -> bool:
        return self.host.id == self.leader

    def _contribution(self) -> Contribution:
        sig = self.host.ctx.sign(contribution_subject(self.cluster, self.r, self.ts, self.my_recs))
        return Contribution(self.cluster, self.r, self.ts, self.host.id, self.my_recs, sig)

    def broadcast(self, recs) -> None:
        """Submit this member's request set; called once per round."""
        if self.my_recs is not None:
            return
        self.my_recs = frozenset(recs)
        self.host.trace("brd_broadcast", r=self.r, cluster=self.cluster, recs=len(self.my_recs),
                        rd=digest(self.my_recs)[:16])
        if self.valid is None:
            self.host.send(self.leader, self._contribution())

    def on_new_leader(self, leader: str, ts: int) -> None:
        self.leader = leader
        self.ts = ts
        self._reset_epoch()
        if self.valid is not None:
            bundle, att = self.valid
            self.host.send(leader, Valid(self.cluster, self.r, ts, self.host.id, bundle, att))
        elif self.my_recs is not None:
            self.host.send(leader, self._contribution())
        buffered, self.future = self.future, []
        for src, msg in buffered:
            self.on_message(src, msg)

    # -- message handling ---------------------------------------------------

    def on_message(self, src: str, msg) -> None:
        if src not in self.members:
            return
        if msg.ts > self.ts:
            self.future.append((src, msg))
            self.host.election.observe(src, msg.ts)
            return
        if msg.ts < self.ts:
            return
        if isinstance(msg, Contribution):
            self._on_contribution(src, msg)
        elif isinstance(msg, Valid):
            self._on_valid(src, msg)
        elif isinstance(msg, Agg):
            self._on_agg(src, msg)
        elif isinstance(msg, BrdEcho):
            self._on_echo(src, msg)
        elif isinstance(msg, BrdReady):
            self._on_ready(src, msg)

    def _on_contribution(self, src: str, m: Contribution) -> None:
        if not self.is_leader or self.agg_sent or src in self.quorum or m.sender != src:
            return
        s = m.sig
        if s is None or s.signer != src or s.digest != contribution_subject(self.cluster, self.r, m.ts, m.recs):
            return
        if not self.host.ctx.keyring.verify(s):
            return
        self.contributions[src] = m
        self.quorum.add(src)
        self._maybe_aggregate()

    def _on_valid(self, src: str, m: Valid) -> None:
        if not self.is_leader or self.agg_sent or src in self.quorum or m.sender != src:
            return
        att = m.att
        if att.kind not in ("echo", "ready") or att.ts >= self.ts:
            return
        if not valid_attestation(att, m.bundle, self.cluster, self.r, self.members, self.f, self.q):
            return
        if not bundle_integrity(m.bundle, self.cluster, self.r, self.members, self.q):
            return
        self.quorum.add(src)
        if self.high_valid is None or att.ts > self.high_valid[1].ts:
            self.high_valid = (m.bundle, att)
        self._maybe_aggregate()

    def _maybe_aggregate(self) -> None:
        if len(self.quorum) < self.q or self.agg_sent:
            return
        if self.high_valid is None and len(self.contributions) < self.q:
            return
        self.agg_sent = True
        if self.high_valid is not None:
            bundle, att = self.high_valid
        else:
            contribs = tuple(self.contributions[k] for k in sorted(self.contributions))
            bundle = Bundle(contribs)
            att = Attestation("origin", self.ts, frozenset(c.sig for c in contribs))
        self.host.broadcast(self.members, Agg(self.cluster, self.r, self.ts, bundle, att))

    def _on_agg(self, src: str, m: Agg) -> None:
        if src != self.leader or self.echoed:
            return
        att = m.att
        if att.kind == "origin":
            if att.ts != self.ts:
                return
        elif att.ts >= self.ts:
            return
        if not valid_attestation(att, m.bundle, self.cluster, self.r, self.members, self.f, self.q):
            return
        if not bundle_integrity(m.bundle, self.cluster, self.r, self.members, self.q):
            return
        if self.valid is not None and att.kind != "origin":
            vb, va = self.valid
            if m.bundle != vb and att.ts < va.ts:
                return
        self.echoed = True
        self.bundles[m.bundle.digest] = m.bundle
        sig = self.host.ctx.sign(brd_echo_subject(self.cluster, self.r, self.ts, m.bundle.digest))
        self.host.broadcast(self.members, BrdEcho(self.cluster, self.r, self.ts, m.bundle, sig))

    def _tally(self, table: dict, src: str, m, subj: str) -> dict | None:
        s = m.sig
        if s is None or s.signer != src or s.digest != subj or not self.host.ctx.keyring.verify(s):
            return None
        votes = table.setdefault(m.bundle.digest, {})
        votes.setdefault(src, s)
        self.bundles.setdefault(m.bundle.digest, m.bundle)
        return votes

    def _on_echo(self, src: str, m: BrdEcho) -> None:
        d = m.bundle.digest
        votes = self._tally(self.echo_votes, src, m, brd_echo_subject(self.cluster, self.r, self.ts, d))
        if votes is None or len(votes) < self.q or self.readied:
            return
        if not bundle_integrity(m.bundle, self.cluster, self.r, self.members, self.q):
            return
        self._ready(m.bundle, Attestation("echo", self.ts, frozenset(votes.values())))

    def _ready(self, bundle: Bundle, att: Attestation) -> None:
        self.readied = True
        self.valid = (bundle, att)
        sig = self.host.ctx.sign(brd_ready_subject(self.cluster, self.r, self.ts, bundle.digest))
        self.host.broadcast(self.members, BrdReady(self.cluster, self.r, self.ts, bundle, sig))

    def _on_ready(self, src: str, m: BrdReady) -> None:
        d = m.bundle.digest
        subj = brd_ready_subject(self.cluster, self.r, self.ts, d)
        votes = self._tally(self.ready_votes, src, m, subj)
        if votes is None:
            return
        if len(votes) >= self.f + 1 and not self.readied:
            if not bundle_integrity(m.bundle, self.cluster, self.r, self.members, self.q):
                return
            self._ready(m.bundle, Attestation("ready", self.ts, frozenset(votes.values())))
        if len(votes) >= self.q and not self.delivered:
            if not bundle_integrity(m.bundle, self.cluster, self.r, self.members, self.q):
                return
            self.delivered = True
            self.host.on_brd_deliver(self, m.bundle, self.ts, frozenset(votes.values()))

