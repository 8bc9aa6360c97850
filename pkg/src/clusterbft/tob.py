"""Reference total-order broadcast for one cluster and one round.

A leader-driven three-step agreement over a fixed number of slots:
Propose, Echo (quorum makes an entry prepared), Commit (quorum makes it
committed). Every leader epoch starts with the members reporting their
prepared entries to the new leader, which forwards a quorum of those reports
so that every member can compute which slots must keep their value.
"""

from __future__ import annotations

from .core import Certificate, Trans, Txn, count_valid, subject
from .messages import Commit, Echo, EpochStart, NewView, OpCert, PreparedEntry, Propose


def echo_subject(cluster: int, r: int, ts: int, seq: int, op: str) -> str:
    return subject("tob-echo", cluster, r, ts, seq, op)


def commit_subject(cluster: int, r: int, ts: int, seq: int, op: str) -> str:
    return subject("tob-commit", cluster, r, ts, seq, op)


def epoch_subject(cluster: int, r: int, ts: int, prepared: tuple, pending: tuple) -> str:
    return subject("tob-epoch", cluster, r, ts, prepared, pending)


def noop_txn(cluster: int, r: int, ts: int, seq: int) -> Txn:
    return Txn(f"noop:{cluster}:{r}:{ts}:{seq}", "noop")


def valid_op_cert(cluster: int, r: int, seq: int, op: Trans, proof, members, q: int) -> bool:
    if not isinstance(proof, OpCert) or not isinstance(op, Trans):
        return False
    subj = commit_subject(cluster, r, proof.ts, seq, op.digest)
    if proof.cert.subject != subj:
        return False
    return count_valid(proof.cert.signatures, subj, members) >= q


class TobInstance:
    """Slot agreement for one round. `host` is the owning replica."""

    def __init__(self, host, r: int, batch_size: int, leader: str, ts: int):
        self.host = host
        self.cluster = host.cluster
        self.r = r
        self.B = batch_size
        self.members = host.config.members(host.cluster)
        self.q = host.config.q(host.cluster)
        self.leader = leader
        self.ts = ts
        self.prepared: dict[int, PreparedEntry] = {}
        self.committed: dict[int, tuple[Trans, OpCert]] = {}
        self.commit_votes: dict[tuple, dict] = {}
        self.delivered = 0
        self.future: list[tuple[str, object]] = []
        self._reset_epoch()

    def _reset_epoch(self):
        self.starts: dict[str, EpochStart] = {}
        self.view_ready = False
        self.view_sent = False
        self.mandatory: dict[int, Trans] = {}
        self.proposed: dict[int, Trans] = {}
        self.accepted: dict[int, Trans] = {}
        self.echo_votes: dict[tuple, dict] = {}
        self.sent_commit: set[int] = set()
        self.early: list[tuple[str, object]] = []
        self.padding = False

    @property
    def done(self) -> bool:
        return self.delivered >= self.B

    @property
    def is_leader(self) -> bool:
        return self.host.id == self.leader

    # -- epoch management ---------------------------------------------------

    def begin(self) -> None:
        prepared = tuple(self.prepared[s] for s in sorted(self.prepared))
        pending = tuple(self.host.own_pending())
        sig = self.host.ctx.sign(epoch_subject(self.cluster, self.r, self.ts, prepared, pending))
        self.host.send(self.leader, EpochStart(self.cluster, self.r, self.ts, prepared, pending, sig))

    def on_new_leader(self, leader: str, ts: int) -> None:
        self.leader = leader
        self.ts = ts
        self._reset_epoch()
        self.begin()
        buffered, self.future = self.future, []
        for src, msg in buffered:
            self.on_message(src, msg)

    # -- message handling ---------------------------------------------------

    def on_message(self, src: str, msg) -> None:
        if src not in self.members:
            return
        ts = msg.ts
        if ts > self.ts:
            self.future.append((src, msg))
            election = self.host.election
            election.observe(src, ts)
            if isinstance(msg, NewView):
                # each signed start vouches that its signer reached ts
                keyring = self.host.ctx.keyring
                for st in msg.starts:
                    sig = getattr(st, "sig", None)
                    if (isinstance(st, EpochStart) and sig is not None and st.ts == ts and sig.signer in self.members
                            and sig.digest == epoch_subject(self.cluster, self.r, ts, st.prepared, st.pending)
                            and keyring.verify(sig)):
                        election.observe(sig.signer, ts)
            return
        if isinstance(msg, Commit):
            self._on_commit(src, msg)
            return
        if ts < self.ts:
            return
        if isinstance(msg, EpochStart):
            self._on_epoch_start(src, msg)
        elif isinstance(msg, NewView):
            self._on_new_view(src, msg)
        elif isinstance(msg, Propose):
            if not self.view_ready:
                self.early.append((src, msg))
            else:
                self._on_propose(src, msg)
        elif isinstance(msg, Echo):
            self._on_echo(src, msg)

    def _valid_start(self, src: str, m: EpochStart) -> bool:
        if m.sig is None or m.sig.signer != src or m.ts != self.ts:
            return False
        if m.sig.digest != epoch_subject(self.cluster, self.r, m.ts, m.prepared, m.pending):
            return False
        if not self.host.ctx.keyring.verify(m.sig):
            return False
        for e in m.prepared:
            if not isinstance(e, PreparedEntry) or e.ts >= m.ts or not 0 <= e.seq < self.B:
                return False
            op = Trans(e.origin, e.txn)
            subj = echo_subject(self.cluster, self.r, e.ts, e.seq, op.digest)
            if count_valid(e.echoes, subj, self.members) < self.q:
                return False
        return True

    def _on_epoch_start(self, src: str, m: EpochStart) -> None:
        if not self.is_leader or self.view_sent or src in self.starts:
            return
        if not self._valid_start(src, m):
            return
        self.starts[src] = m
        self.host.absorb_pending(m.pending)
        if len(self.starts) >= self.q:
            self.view_sent = True
            starts = tuple(self.starts[k] for k in sorted(self.starts))
            self.host.broadcast(self.members, NewView(self.cluster, self.r, self.ts, starts))

    @staticmethod
    def _mandatory(starts) -> dict[int, Trans]:
        best: dict[int, PreparedEntry] = {}
        for st in starts:
            for e in st.prepared:
                cur = best.get(e.seq)
                if cur is None or e.ts > cur.ts:
                    best[e.seq] = e
        return {s: Trans(e.origin, e.txn) for s, e in best.items()}

    def _on_new_view(self, src: str, m: NewView) -> None:
        if src != self.leader or self.view_ready:
            return
        seen = set()
        for st in m.starts:
            signer = st.sig.signer if st.sig is not None else None
            if signer in seen or signer not in self.members or not self._valid_start(signer, st):
                return
            seen.add(signer)
        if len(seen) < self.q:
            return
        self.view_ready = True
        self.mandatory = self._mandatory(m.starts)
        for st in m.starts:
            self.host.absorb_pending(st.pending)
        early, self.early = self.early, []
        for s, p in early:
            self._on_propose(s, p)
        if self.is_leader:
            self.try_propose()

    def _on_propose(self, src: str, m: Propose) -> None:
        if src != self.leader or not 0 <= m.seq < self.B or m.seq in self.accepted:
            return
        op = Trans(m.origin, m.txn)
        want = self.mandatory.get(m.seq)
        if want is not None and want != op:
            return
        if want is None and any(t.txn.tid == m.txn.tid for t in self.accepted.values()):
            return
        self.accepted[m.seq] = op
        sig = self.host.ctx.sign(echo_subject(self.cluster, self.r, self.ts, m.seq, op.digest))
        self.host.broadcast(self.members, Echo(self.cluster, self.r, self.ts, m.seq, op.digest, sig))
        self._check_prepared(m.seq)

    def _on_echo(self, src: str, m: Echo) -> None:
        if m.sig is None or m.sig.signer != src or not 0 <= m.seq < self.B:
            return
        if m.sig.digest != echo_subject(self.cluster, self.r, m.ts, m.seq, m.op):
            return
        if not self.host.ctx.keyring.verify(m.sig):
            return
        votes = self.echo_votes.setdefault((m.seq, m.op), {})
        votes.setdefault(src, m.sig)
        self._check_prepared(m.seq)

    def _check_prepared(self, seq: int) -> None:
        op = self.accepted.get(seq)
        if op is None or seq in self.sent_commit:
            return
        votes = self.echo_votes.get((seq, op.digest), {})
        if len(votes) < self.q:
            return
        self.prepared[seq] = PreparedEntry(seq, self.ts, op.origin, op.txn, frozenset(votes.values()))
        self.sent_commit.add(seq)
        sig = self.host.ctx.sign(commit_subject(self.cluster, self.r, self.ts, seq, op.digest))
        self.host.broadcast(self.members, Commit(self.cluster, self.r, self.ts, seq, op.origin, op.txn, sig))

    def _on_commit(self, src: str, m: Commit) -> None:
        if m.sig is None or m.sig.signer != src or not 0 <= m.seq < self.B or m.seq in self.committed:
            return
        op = Trans(m.origin, m.txn)
        subj = commit_subject(self.cluster, self.r, m.ts, m.seq, op.digest)
        if m.sig.digest != subj or not self.host.ctx.keyring.verify(m.sig):
            return
        votes = self.commit_votes.setdefault((m.ts, m.seq, op.digest), {})
        votes.setdefault(src, m.sig)
        if len(votes) >= self.q:
            cert = OpCert(m.ts, Certificate(subj, frozenset(votes.values())))
            self.committed[m.seq] = (op, cert)
            self._deliver()

    def _deliver(self) -> None:
        while self.delivered < self.B and self.delivered in self.committed:
            seq = self.delivered
            op, cert = self.committed[seq]
            self.delivered += 1
            self.host.on_tob_deliver(self, seq, op, cert)

    # -- leader proposals ---------------------------------------------------

    def try_propose(self, pad: bool = False) -> None:
        if not self.is_leader or not self.view_ready:
            return
        if pad:
            self.padding = True
        used = {t.txn.tid for t in self.proposed.values()}
        used.update(t.txn.tid for t in self.mandatory.values())
        used.update(op.txn.tid for op, _ in self.committed.values())
        candidates = (t for t in self.host.pool_snapshot() if t.txn.tid not in used)
        stalled = False
        for seq in range(self.B):
            if seq in self.proposed:
                continue
            op = self.mandatory.get(seq)
            if op is None and not stalled:
                op = next(candidates, None)
                if op is None:
                    stalled = True
            if op is None:
                if not self.padding:
                    continue
                op = Trans(self.host.id, noop_txn(self.cluster, self.r, self.ts, seq))
            self.proposed[seq] = op
            self.host.broadcast(self.members, Propose(self.cluster, self.r, self.ts, seq, op.origin, op.txn))
        if len(self.proposed) < self.B and not self.padding and self.host.active:
            self.host.arm_fill_timer()
