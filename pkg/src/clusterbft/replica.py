"""A replica: round driver tying together ordering, dissemination, exchange and execution."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from math import ceil

from .brd import BrdInstance, brd_ready_subject
from .core import Certificate, Configuration, Reconfig, Trans, Txn, digest
from .intercluster import InterCluster, validate_operations
from .leader import Election, leader_of
from .messages import (Ack, Agg, AppSnapshot, BrdEcho, BrdReady, Catchup, CatchupRequest, Commit, Contribution, CurrState, Echo,
                       EpochStart, Inter, LComplaint, LeComplaint, Local, NewView, Propose, RComplaint,
                       ReconfigMsg, RecsProof, RemoteComplaint, RoundHint, TxRequest, Valid)
from .reconfig import Collection, Requester, StateTransfer, normalize_recs
from .tob import TobInstance, valid_op_cert

TOB_KINDS = (EpochStart, NewView, Propose, Echo, Commit)
BRD_KINDS = (Contribution, Valid, Agg, BrdEcho, BrdReady)
ACTIVATING = (Propose, Contribution, Agg, BrdEcho, BrdReady)
HISTORY = 8  # executed rounds kept to answer catch-up requests


@dataclass
class ProtocolParams:
    batch_size: int = 2
    alpha: float = 0.9
    tob_timeout: int = 150
    brd_timeout: int = 150
    remote_timeout: int = 300
    epsilon: int = 75
    fill_timeout: int = 20
    client_timeout: int = 200
    backoff: int = 2
    max_backoff_exp: int = 8
    replay_defense: bool = True

    @classmethod
    def from_dict(cls, d: dict | None) -> "ProtocolParams":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown protocol parameters: {sorted(unknown)}")
        p = cls(**d)
        if p.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 < p.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        return p

    @property
    def recs_threshold(self) -> int:
        return max(1, min(self.batch_size, ceil(self.alpha * self.batch_size)))


class KVStore:
    """Replicated key-value state with a hash chain over executed transactions."""

    def __init__(self):
        self.data: dict[str, str] = {}
        self.chain = "0" * 64
        self.executed: set[str] = set()

    def apply(self, txn: Txn):
        if txn.tid in self.executed:
            return None
        self.executed.add(txn.tid)
        self.chain = hashlib.sha256((self.chain + txn.digest).encode()).hexdigest()
        if txn.op == "write":
            self.data[txn.key] = txn.value
            return "ok"
        if txn.op == "read":
            return self.data.get(txn.key)
        return None

    def snapshot(self) -> AppSnapshot:
        return AppSnapshot(tuple(sorted(self.data.items())), self.chain, tuple(sorted(self.executed)))

    def restore(self, snap: AppSnapshot) -> None:
        self.data = dict(snap.store)
        self.chain = snap.chain
        self.executed = set(snap.executed)

    def state_digest(self) -> str:
        return self.snapshot().digest


class Replica:
    """Deterministic state machine for one replica id.

    Status is one of "member", "idle" (not yet a member), "joining" and
    "left". Byzantine behaviour is layered on through `interceptor`.
    """

    def __init__(self, ctx, config: Configuration, params: ProtocolParams, interceptor=None):
        self.ctx = ctx
        self.id = ctx.id
        self.params = params
        self.interceptor = interceptor
        self.config = config
        self.cluster = config.cluster_of(self.id)
        self.status = "member" if self.cluster is not None else "idle"
        self.r = 0
        self.app = KVStore()
        self.election = Election(self)
        self.inter = InterCluster(self)
        self.collection = Collection(self)
        self.requester: Requester | None = None
        self.transfer: StateTransfer | None = None
        self.pending_states: list[tuple[str, CurrState]] = []
        self.pre_join: list[tuple[str, object]] = []
        self.pool: dict[str, Trans] = {}
        self.mine: set[str] = set()
        self.future: dict[int, list[tuple[str, object]]] = {}
        self.active = False
        self.leader: str | None = None
        self.last_leader_change = 0
        self.tob: TobInstance | None = None
        self.brd: BrdInstance | None = None
        self.tob_k = 0
        self.stage1_done = False
        self.sent_recs = False
        self.trans_log: list[tuple[Trans, object]] = []
        self.recs_op: tuple[Reconfig, RecsProof] | None = None
        self.results: dict[str, object] = {}
        self.round_hook = None
        self.helped: set[tuple[str, int]] = set()
        self.history: dict[int, tuple] = {}
        self.requested: set[tuple[str, int]] = set()
        if interceptor is not None:
            interceptor.attach(self)

    # -- plumbing -----------------------------------------------------------

    def trace(self, kind: str, /, **data) -> None:
        self.ctx.trace(kind, **data)

    def send(self, dst: str, msg) -> None:
        if self.interceptor is not None:
            for d, m in self.interceptor.outgoing(self, dst, msg):
                self.ctx.send(d, m)
        else:
            self.ctx.send(dst, msg)

    def broadcast(self, dsts, msg) -> None:
        for d in dsts:
            self.send(d, msg)

    @property
    def is_leader(self) -> bool:
        return self.status == "member" and self.leader == self.id

    @property
    def members(self) -> tuple[str, ...]:
        return self.config.members(self.cluster)

    def own_pending(self):
        return tuple((t.origin, t.txn) for tid, t in self.pool.items() if tid in self.mine)

    def absorb_pending(self, pending) -> None:
        for item in pending:
            try:
                origin, txn = item
            except (TypeError, ValueError):
                continue
            if isinstance(txn, Txn) and txn.tid not in self.app.executed and txn.tid not in self.pool:
                self.pool[txn.tid] = Trans(origin, txn)

    def pool_snapshot(self) -> list[Trans]:
        return list(self.pool.values())

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        if self.status == "member":
            self._begin_round(self.config.round)

    def _begin_round(self, r: int) -> None:
        self.r = r
        self.active = False
        self.stage1_done = False
        self.sent_recs = False
        self.trans_log = []
        self.recs_op = None
        self.tob_k = 0
        self.leader = self.election.leader
        self.last_leader_change = self.ctx.now
        ts = self.election.ts
        self.inter.round_start(r)
        self.helped = {k for k in self.helped if k[1] >= r - HISTORY}
        self.requested = {k for k in self.requested if k[1] >= r}
        self.peers_here: set[str] = set()
        self.tob = TobInstance(self, r, self.params.batch_size, self.leader, ts)
        self.brd = BrdInstance(self, r, self.leader, ts)
        self.trace("round_start", r=r, leader=self.leader, ts=ts, cluster=self.cluster)
        if self.round_hook is not None:
            self.round_hook(self, r)
        self.tob.begin()
        if self.pool or self.collection:
            self.activate()
        for key in [k for k in self.future if k < r]:
            del self.future[key]
        for src, msg in self.future.pop(r, []):
            if self.r != r or self.status != "member":
                break
            self.on_message(src, msg)
        if self.r == r and self.status == "member":
            members = self.config.clusters[self.cluster]
            if any(src in members for msgs in self.future.values() for src, _ in msgs):
                self.ctx.set_timer(("behind", r), self.params.tob_timeout + self.params.brd_timeout)

    def activate(self) -> None:
        if self.active or self.status != "member":
            return
        self.active = True
        self._arm_tob_timer()
        if self.is_leader:
            self.tob.try_propose()

    def _arm_tob_timer(self) -> None:
        if self.active and not self.tob.done:
            p = self.params
            self.ctx.set_timer(("tob", self.r), p.tob_timeout * p.backoff ** min(self.tob_k, p.max_backoff_exp))

    def _arm_brd_timer(self) -> None:
        if self.sent_recs and not self.brd.delivered:
            p = self.params
            self.ctx.set_timer(("brd", self.r), p.brd_timeout * p.backoff ** min(self.tob_k, p.max_backoff_exp))

    def arm_fill_timer(self) -> None:
        if not self.ctx.timer_active(("fill", self.r)):
            self.ctx.set_timer(("fill", self.r), self.params.fill_timeout)

    # -- external inputs ----------------------------------------------------

    def submit(self, txn: Txn) -> None:
        """A client hands a transaction to this replica."""
        if self.status != "member":
            self.trace("txn_refused", tid=txn.tid)
            return
        self.trace("txn_submit", tid=txn.tid, op=txn.op)
        self.mine.add(txn.tid)
        self.broadcast(self.members, TxRequest(self.cluster, self.id, txn))

    def request_join(self, cluster: int, contacts, round_hint: int = 1) -> None:
        if self.status != "idle":
            return
        self.status = "joining"
        self.requester = Requester(self, "join", cluster, contacts, round_hint, self.params.client_timeout,
                                   self.params.backoff)
        self.requester.submit()

    def request_leave(self) -> None:
        if self.status != "member" or self.requester is not None:
            return
        self.requester = Requester(self, "leave", self.cluster, self.members, self.r,
                                   self.params.client_timeout, self.params.backoff)
        self.requester.submit()

    # -- dispatch -----------------------------------------------------------

    def on_message(self, src: str, msg) -> None:
        if self.interceptor is not None and not self.interceptor.incoming(self, src, msg):
            return
        if self.status == "left":
            return
        if isinstance(msg, (Ack, RoundHint)):
            if self.requester is not None:
                if isinstance(msg, Ack):
                    self.requester.on_ack(src, msg)
                    self._maybe_transfer()
                else:
                    self.requester.on_hint(src, msg)
            return
        if isinstance(msg, CurrState):
            if self.status == "joining":
                self.pending_states.append((src, msg))
                self._maybe_transfer()
            elif self.status == "member" and src in self.config.clusters[self.cluster]:
                # late states still tell a new member how far the leader sequence got
                self.election.observe(src, msg.ts)
            return
        if self.status != "member":
            if self.status == "joining":
                self.pre_join.append((src, msg))
            return
        if isinstance(msg, TxRequest):
            self._on_txrequest(src, msg)
        elif isinstance(msg, LeComplaint):
            self.election.on_complaint(src, msg)
        elif isinstance(msg, ReconfigMsg):
            self.collection.on_request(src, msg.req)
        else:
            r = getattr(msg, "round", None)
            if r is None:
                return
            if r > self.r:
                self.future.setdefault(r, []).append((src, msg))
                tag = ("behind", self.r)
                if src in self.config.clusters[self.cluster] and not self.ctx.timer_active(tag):
                    self.ctx.set_timer(tag, self.params.tob_timeout + self.params.brd_timeout)
                return
            self._route(src, msg)

    def _route(self, src: str, msg) -> None:
        cls = type(msg)
        if cls in _INSTANCE_KINDS:
            if msg.cluster != self.cluster:
                return
            if msg.round == self.r - 1 and msg.ts > self.inter.prev_ts:
                # the previous round changed leader after this replica left it
                self._help_laggard(src, msg.round)
                return
            if msg.round != self.r:
                return
            self.peers_here.add(src)
            if cls in _ACTIVATING and src in self.config.clusters[self.cluster]:
                self.activate()
            if cls in _TOB_SET:
                self.tob.on_message(src, msg)
            else:
                self.brd.on_message(src, msg)
            return
        handler = _ROUTES.get(cls)
        if handler is not None:
            handler(self, src, msg)

    def _on_catchup_request(self, src: str, msg) -> None:
        if msg.round < self.r and msg.cluster == self.cluster:
            self._help_laggard(src, msg.round)

    # -- members left behind in the previous round ---------------------------

    def _help_laggard(self, src: str, r: int) -> None:
        """Answer a member still running round r with the certified outcome of r, once."""
        kept = self.history.get(r)
        if kept is None or (src, r) in self.helped:
            return
        config, batches = kept
        if src not in config.clusters[self.cluster]:
            return
        self.helped.add((src, r))
        self.send(src, Catchup(r, self.cluster, batches))

    def _ask_for_help(self, force: bool = False) -> None:
        """Ask every member for the certified outcome of this round, once per member and round.

        Without `force` only a member stuck after a leader change asks; the
        "behind" timer forces it once peers have been seen in a later round
        for a whole round's worth of timeouts.
        """
        if self.tob_k == 0 and not force:
            return
        others = [x for x in self.members if x != self.id and (x, self.r) not in self.requested]
        for x in others:
            self.requested.add((x, self.r))
        self.broadcast(others, CatchupRequest(self.r, self.cluster))

    def _on_catchup(self, src: str, m: Catchup) -> None:
        if m.round != self.r or m.cluster != self.cluster:
            return
        if src not in self.config.clusters[self.cluster]:
            return
        got = {}
        for item in m.batches:
            try:
                j, ops, proofs = item
            except (TypeError, ValueError):
                return
            if j in got or not validate_operations(self.config, j, self.r, ops, proofs, self.params.batch_size):
                return
            got[j] = (ops, proofs)
        if set(got) != set(self.config.cluster_ids):
            return
        self.trace("catchup", r=self.r, sender=src, adopted_own=not self.stage1_done)
        if not self.stage1_done:
            self._adopt_stage1(*got[self.cluster])
        for j, batch in got.items():
            if j not in self.inter.operations:
                self.inter.operations[j] = batch
        self.try_execute()

    def _adopt_stage1(self, ops, proofs) -> None:
        self.stage1_done = True
        self.inter.operations[self.cluster] = (ops, proofs)
        if self.recs_op is not None:
            return
        proof = proofs[-1]
        self.trace("brd_deliver", r=self.r, cluster=self.cluster, bundle=proof.bundle.digest[:16],
                   senders=proof.bundle.senders(), q=self.config.q(self.cluster),
                   reqs=sorted(f"{x.kind}:{x.subject}" for x in ops[-1].recs),
                   contribs={c.sender: digest(c.recs)[:16] for c in proof.bundle.contributions}, via="certificate")

    def _on_txrequest(self, src: str, m: TxRequest) -> None:
        if m.cluster != self.cluster or src != m.origin:
            return
        if src not in self.config.clusters[self.cluster]:
            # a member that left in the round just executed may have taken a transaction meanwhile
            prev = self.history.get(self.r - 1)
            if prev is None or src not in prev[0].clusters[self.cluster]:
                return
        tid = m.txn.tid
        if tid in self.app.executed or tid in self.pool:
            return
        self.pool[tid] = Trans(m.origin, m.txn)
        self.activate()
        if self.is_leader:
            self.tob.try_propose()

    def on_timer(self, tag) -> None:
        kind = tag[0]
        if kind == "adv":
            if self.interceptor is not None:
                self.interceptor.on_timer(self, tag)
            return
        if kind == "client":
            if self.requester is not None:
                self.requester.on_timer()
            return
        if self.status != "member":
            return
        if kind == "remote":
            self.inter.on_timer(tag[1], tag[2])
            return
        if tag[1] != self.r:
            return
        if kind == "tob":
            if not self.tob.done:
                self.election.complain(self.leader, "tob-timeout")
                self._ask_for_help()
        elif kind == "brd":
            if not self.brd.delivered:
                self.election.complain(self.leader, "brd-timeout")
                self._ask_for_help()
        elif kind == "fill":
            self.tob.try_propose(pad=True)
        elif kind == "behind":
            self._ask_for_help(force=True)

    # -- leader change --------------------------------------------------------

    def on_new_leader(self, leader: str, ts: int) -> None:
        if self.status != "member":
            return
        self.leader = leader
        self.last_leader_change = self.ctx.now
        self.tob_k += 1
        self.tob.on_new_leader(leader, ts)
        self.brd.on_new_leader(leader, ts)
        self.ctx.cancel_timer(("tob", self.r))
        self.ctx.cancel_timer(("brd", self.r))
        self._arm_tob_timer()
        self._arm_brd_timer()
        if leader == self.id:
            self.inter.on_new_leader()
        inter = self.inter
        if inter.prev_round == self.r - 1 and ts > inter.prev_ts and inter.prev_config is not None:
            # the previous round changed leader after this replica left it; members not yet
            # heard from in this round may be stuck there
            for x in sorted(inter.prev_config.clusters[self.cluster] - self.peers_here - {self.id}):
                self._help_laggard(x, inter.prev_round)
        members = self.config.clusters[self.cluster]
        if any(src in members for msgs in self.future.values() for src, _ in msgs):
            # peers already left this round, so the new leader may never gather a quorum here
            self._ask_for_help()
        if self.interceptor is not None:
            self.interceptor.on_new_leader(self, leader, ts)

    # -- stage completion ---------------------------------------------------

    def on_tob_deliver(self, inst: TobInstance, seq: int, op: Trans, cert) -> None:
        if inst is not self.tob:
            return
        if not valid_op_cert(self.cluster, self.r, seq, op, cert, self.config.clusters[self.cluster],
                             self.config.q(self.cluster)):
            self.trace("tob_reject", r=self.r, seq=seq)
            return
        self.trans_log.append((op, cert))
        self.trace("tob_deliver", r=self.r, seq=seq, tid=op.txn.tid, origin=op.origin)
        if len(self.trans_log) == self.params.recs_threshold and not self.sent_recs:
            self.sent_recs = True
            self.brd.broadcast(self.collection.snapshot())
            self._arm_brd_timer()
        if self.tob.done:
            self.ctx.cancel_timer(("tob", self.r))
        self._check_stage1()

    def on_brd_deliver(self, inst: BrdInstance, bundle, ts: int, sigs) -> None:
        if inst is not self.brd:
            return
        rc = normalize_recs(bundle, self.cluster, self.config, self.r)
        cert = Certificate(brd_ready_subject(self.cluster, self.r, ts, bundle.digest), sigs)
        self.recs_op = (rc, RecsProof(bundle, ts, cert))
        self.ctx.cancel_timer(("brd", self.r))
        self.trace("brd_deliver", r=self.r, cluster=self.cluster, bundle=bundle.digest[:16], senders=bundle.senders(),
                   q=self.config.q(self.cluster), reqs=sorted(f"{x.kind}:{x.subject}" for x in rc.recs),
                   contribs={c.sender: digest(c.recs)[:16] for c in bundle.contributions})
        self._check_stage1()

    def _check_stage1(self) -> None:
        if self.stage1_done or not self.tob.done or self.recs_op is None:
            return
        self.stage1_done = True
        ops = tuple(op for op, _ in self.trans_log) + (self.recs_op[0],)
        proofs = tuple(c for _, c in self.trans_log) + (self.recs_op[1],)
        self.trace("stage1", r=self.r, cluster=self.cluster, ops=digest(ops)[:16])
        if self.interceptor is not None:
            self.interceptor.on_stage1(self, ops, proofs)
        self.inter.on_local_complete(ops, proofs)
        self.try_execute()

    # -- execution ----------------------------------------------------------

    def try_execute(self) -> None:
        if self.status != "member" or not self.stage1_done or not self.inter.complete:
            return
        r = self.r
        cfg = self.config
        new_cfg = cfg
        applied_here = []
        executed_tids = []
        returned = []
        op_digests = []
        for j in cfg.cluster_ids:
            ops, _ = self.inter.operations[j]
            op_digests.append(digest(ops)[:16])
            for op in ops:
                if isinstance(op, Trans):
                    if op.txn.tid in self.app.executed:
                        continue
                    res = self.app.apply(op.txn)
                    executed_tids.append(op.txn.tid)
                    self.pool.pop(op.txn.tid, None)
                    if op.origin == self.id and op.txn.tid in self.mine:
                        self.mine.discard(op.txn.tid)
                        self.results[op.txn.tid] = res
                        returned.append(op.txn.tid)
                else:
                    before = new_cfg
                    new_cfg = new_cfg.apply(j, op.recs)
                    for req in sorted(op.recs, key=lambda x: (x.kind, x.subject)):
                        changed = (req.subject in new_cfg.clusters[j]) != (req.subject in before.clusters[j])
                        if changed:
                            self.trace("reconfig_applied", r=r, kind=req.kind, subject=req.subject, cluster=j,
                                       tagged=req.round)
                            if j == self.cluster:
                                applied_here.append(req)
        for tid in returned:
            self.trace("txn_return", tid=tid, r=r)
        # pool entries whose transaction went through under another origin are stale too
        for tid in [t for t in self.pool if t in self.app.executed]:
            del self.pool[tid]
            self.mine.discard(tid)
        self.config = new_cfg.at_round(r + 1)
        state = self.app.snapshot()
        self.trace("execute", r=r, cluster=self.cluster, config=self.config.digest[:16], state=state.digest[:16],
                   ops=op_digests, n=len(executed_tids), f=self.config.f(self.cluster),
                   sizes=[len(m) for m in self.config.clusters], ts=self.election.ts)
        for req in applied_here:
            if req.kind == "join":
                self.send(req.subject, CurrState(state, self.config, r, self.election.ts))
        own_recs = self.inter.operations[self.cluster][0][-1].recs
        self.collection.prune(own_recs, self.config)
        self.inter.archive(cfg, self.election.ts)
        self.history[r] = (cfg, tuple((j, ops, proofs) for j, (ops, proofs) in sorted(self.inter.prev.items())))
        self.history.pop(r - HISTORY, None)
        for tag in (("tob", r), ("brd", r), ("fill", r)):
            self.ctx.cancel_timer(tag)
        for j in cfg.cluster_ids:
            self.ctx.cancel_timer(("remote", r, j))
        if self.id not in self.config.clusters[self.cluster]:
            self.status = "left"
            self.ctx.cancel_timer(("client",))
            self.requester = None
            self.trace("left", r=r)
            return
        self._begin_round(r + 1)

    # -- joining ------------------------------------------------------------

    def _maybe_transfer(self) -> None:
        if self.status != "joining" or self.requester is None or self.requester.acked_members is None:
            return
        if self.transfer is None:
            self.transfer = StateTransfer(self, self.requester.acked_members)
        pending, self.pending_states = self.pending_states, []
        for src, m in pending:
            done = self.transfer.on_state(src, m)
            if done is not None:
                self._install(done)
                return

    def _install(self, st: CurrState) -> None:
        self.app.restore(st.state)
        self.config = st.config.at_round(st.round + 1)
        self.cluster = self.config.cluster_of(self.id)
        self.status = "member"
        self.election = Election(self, st.ts)
        self.ctx.cancel_timer(("client",))
        self.trace("joined", r=st.round + 1, cluster=self.cluster, ts=st.ts, state=st.state.digest[:16])
        self._begin_round(st.round + 1)
        for src, m in self.transfer.seen.items():
            if src in self.config.clusters[self.cluster]:
                self.election.observe(src, m.ts)
        buffered, self.pre_join = self.pre_join, []
        for src, msg in buffered:
            if self.status != "member":
                break
            self.on_message(src, msg)

    # -- inspection ---------------------------------------------------------

    def summary(self) -> dict:
        return {
            "status": self.status,
            "cluster": self.cluster,
            "round": self.r,
            "ts": self.election.ts if self.status == "member" else None,
            "leader": self.leader if self.status == "member" else None,
            "state": self.app.state_digest()[:16],
            "config": self.config.digest[:16],
            "pool": len(self.pool),
        }


_TOB_SET = frozenset(TOB_KINDS)
_INSTANCE_KINDS = frozenset(TOB_KINDS + BRD_KINDS)
_ACTIVATING = frozenset(ACTIVATING)
_ROUTES = {
    Inter: lambda self, src, m: self.inter.on_inter(src, m),
    Local: lambda self, src, m: self.inter.on_local(src, m),
    LComplaint: lambda self, src, m: self.inter.on_lcomplaint(src, m),
    RComplaint: lambda self, src, m: self.inter.on_rcomplaint(src, m),
    RemoteComplaint: lambda self, src, m: self.inter.on_remote_complaint(src, m),
    Catchup: Replica._on_catchup,
    CatchupRequest: Replica._on_catchup_request,
}


def initial_leader(config: Configuration, cluster: int, ts: int = 1) -> str:
    return leader_of(config.members(cluster), ts)
