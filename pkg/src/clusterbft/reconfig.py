"""Membership change requests: collection at members, client side of joiners and leavers."""

from __future__ import annotations

from .core import Configuration, ReconfigRequest, Reconfig, fault_threshold, quorum_size
from .messages import Ack, Bundle, CurrState, ReconfigMsg, RoundHint


def normalize_recs(bundle: Bundle, cluster: int, config: Configuration, r: int) -> Reconfig:
    """The Reconfig operation a delivered bundle stands for.

    Union of all contributed requests, keeping only well-signed requests for
    this cluster whose round tag is not in the future and which would still
    change membership. Duplicates by (kind, subject) keep the earliest tag.
    """
    chosen: dict[tuple, ReconfigRequest] = {}
    for contribution in bundle.contributions:
        for req in contribution.recs:
            if not isinstance(req, ReconfigRequest) or req.cluster != cluster or req.round > r:
                continue
            if not config.admissible(req) or not req.well_signed():
                continue
            key = (req.kind, req.subject)
            cur = chosen.get(key)
            if cur is None or (req.round, req.digest) < (cur.round, cur.digest):
                chosen[key] = req
    return Reconfig(frozenset(chosen.values()))


class Collection:
    """Requests a member has accepted and not yet seen executed."""

    def __init__(self, host):
        self.host = host
        self.recs: dict[tuple, ReconfigRequest] = {}

    def on_request(self, src: str, req: ReconfigRequest) -> None:
        host = self.host
        if req.cluster != host.cluster or src != req.subject or not req.well_signed():
            return
        if req.round > host.r or req.round < host.r - 1:
            host.send(src, RoundHint(host.cluster, host.r, host.id))
            return
        if not host.config.admissible(req):
            return
        key = (req.kind, req.subject)
        if key not in self.recs:
            self.recs[key] = req
            host.trace("rec_accept", kind=req.kind, subject=req.subject, r=host.r)
        host.send(src, Ack(host.cluster, host.config.clusters[host.cluster], req.round, host.id))
        host.activate()

    def snapshot(self) -> frozenset:
        return frozenset(self.recs.values())

    def prune(self, executed, config: Configuration) -> None:
        for req in executed:
            self.recs.pop((req.kind, req.subject), None)
        for key in [k for k, v in self.recs.items() if not config.admissible(v)]:
            del self.recs[key]

    def __bool__(self):
        return bool(self.recs)


class Requester:
    """Client side of a join or leave: submit, retry with backoff, wait for an ack quorum."""

    def __init__(self, host, kind: str, cluster: int, contacts, round_hint: int, base_timeout: int,
                 backoff: int = 2):
        self.host = host
        self.kind = kind
        self.cluster = cluster
        self.contacts = tuple(sorted(contacts))
        self.round = max(1, round_hint)
        self.base_timeout = base_timeout
        self.backoff = backoff
        self.attempt = 0
        self.acks: dict[str, Ack] = {}
        self.hints: dict[str, int] = {}
        self.acked_members: frozenset | None = None
        self.req: ReconfigRequest | None = None

    @property
    def f_contacts(self) -> int:
        return fault_threshold(len(self.contacts))

    def _targets(self):
        if self.acks:
            latest = max(self.acks.values(), key=lambda a: (a.round, len(a.members)))
            return sorted(set(self.contacts) | set(latest.members))
        return list(self.contacts)

    def submit(self) -> None:
        host = self.host
        stmt = ReconfigRequest(self.kind, host.id, self.cluster, self.round)
        self.req = ReconfigRequest(self.kind, host.id, self.cluster, self.round, host.ctx.sign(stmt.statement()))
        if self.attempt == 0:
            host.trace("reconfig_request", kind=self.kind, cluster=self.cluster, r=self.round)
        else:
            host.trace("reconfig_retry", kind=self.kind, cluster=self.cluster, r=self.round, attempt=self.attempt)
        self.acks = {}
        host.broadcast(self._targets(), ReconfigMsg(self.req))
        host.ctx.set_timer(("client",), self.base_timeout * self.backoff ** min(self.attempt, 10))
        self.attempt += 1

    def on_timer(self) -> None:
        if self.acked_members is None:
            self.submit()

    def on_hint(self, src: str, m: RoundHint) -> None:
        if self.acked_members is not None or m.cluster != self.cluster:
            return
        self.hints[src] = m.round
        vals = sorted(self.hints.values(), reverse=True)
        k = self.f_contacts + 1
        if len(vals) >= k and vals[k - 1] > self.round:
            self.round = vals[k - 1]
            self.submit()

    def on_ack(self, src: str, m: Ack) -> None:
        if self.acked_members is not None or self.req is None or m.sender != src:
            return
        if m.cluster != self.cluster or m.round != self.req.round or src not in m.members:
            return
        self.acks[src] = m
        same = [s for s, a in self.acks.items() if a.members == m.members]
        from_contacts = sum(1 for s in same if s in self.contacts)
        if len(same) >= quorum_size(len(m.members)) and from_contacts >= self.f_contacts + 1:
            self.acked_members = m.members
            self.host.ctx.cancel_timer(("client",))
            self.host.trace("ack_quorum", kind=self.kind, cluster=self.cluster, r=self.req.round)


class StateTransfer:
    """Joiner side: wait for enough matching CurrState messages."""

    def __init__(self, host, acked_members):
        self.host = host
        self.acked = frozenset(acked_members)
        self.seen: dict[str, CurrState] = {}

    def on_state(self, src: str, m: CurrState) -> CurrState | None:
        cluster = m.config.cluster_of(self.host.id)
        if cluster is None or src not in m.config.clusters[cluster] or src not in self.acked:
            return None
        self.seen[src] = m
        key = (m.state.digest, m.config.digest, m.round)
        group = [s for s, v in self.seen.items() if (v.state.digest, v.config.digest, v.round) == key]
        need = fault_threshold(len(self.acked)) + 1
        if len(group) < need:
            return None
        ts_values = sorted((self.seen[s].ts for s in group), reverse=True)
        chosen = ts_values[need - 1]
        return CurrState(m.state, m.config, m.round, chosen)

