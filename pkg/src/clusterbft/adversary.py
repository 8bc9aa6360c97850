"""Byzantine behaviour as interceptors wrapped around otherwise correct replicas.

A strategy sees every message its node sends and receives and may drop,
rewrite or add messages. Nodes in the same coalition may sign with each
other's keys (they collude), but never with a correct node's key.
"""

from __future__ import annotations

from dataclasses import replace

from .core import Certificate, Trans, Txn
from .messages import (Agg, BrdEcho, BrdReady, Catchup, Inter, Local, NewView, OpCert, Propose, RComplaint,
                       RemoteComplaint)
from .tob import commit_subject


class Coalition:
    """Shared knowledge among the Byzantine nodes of one run."""

    def __init__(self):
        self.contexts: dict[str, object] = {}

    def join(self, ctx) -> None:
        self.contexts[ctx.id] = ctx

    def sign_as(self, rid: str, d: str):
        return self.contexts[rid].sign(d)

    def members_in(self, ids) -> list[str]:
        return sorted(x for x in ids if x in self.contexts)


class Strategy:
    name = "none"

    def __init__(self, coalition: Coalition | None = None, **options):
        self.coalition = coalition or Coalition()
        self.options = options
        self.node = None

    def attach(self, replica) -> None:
        self.node = replica
        self.coalition.join(replica.ctx)

    def outgoing(self, replica, dst: str, msg):
        return [(dst, msg)]

    def incoming(self, replica, src: str, msg) -> bool:
        return True

    def on_new_leader(self, replica, leader: str, ts: int) -> None:
        pass

    def on_stage1(self, replica, ops, proofs) -> None:
        pass

    def on_timer(self, replica, tag) -> None:
        pass


class Mute(Strategy):
    """Sends nothing at all."""

    name = "mute"

    def outgoing(self, replica, dst, msg):
        return []


class SilentLeader(Strategy):
    """Never forwards its cluster's operations to other clusters.

    With `drop_local` it also swallows relays it should make as a receiver.
    """

    name = "silent_leader"

    def outgoing(self, replica, dst, msg):
        if isinstance(msg, Inter):
            return []
        if isinstance(msg, Local) and self.options.get("drop_local", True):
            return []
        return [(dst, msg)]


class BrdPartialLeader(Strategy):
    """Sends dissemination messages only to chosen subsets of its cluster.

    Options `agg_to`, `echo_to`, `ready_to` are id lists; "half" picks the
    lower half of the sorted membership. `only_ts` limits the effect to one
    leader timestamp.
    """

    name = "brd_partial_leader"

    def _allowed(self, replica, key):
        sel = self.options.get(key, "half" if key == "agg_to" else None)
        if sel is None:
            return None
        if sel == "half":
            members = replica.members
            return set(members[: (len(members) + 1) // 2])
        return set(sel)

    def outgoing(self, replica, dst, msg):
        if isinstance(msg, Catchup):
            # the certified outcome is withheld like a Ready
            allowed = self._allowed(replica, "ready_to")
            return [] if allowed is not None and dst not in allowed else [(dst, msg)]
        only = self.options.get("only_ts")
        if only is not None and getattr(msg, "ts", None) != only:
            return [(dst, msg)]
        for cls, key in ((Agg, "agg_to"), (BrdEcho, "echo_to"), (BrdReady, "ready_to")):
            if isinstance(msg, cls):
                allowed = self._allowed(replica, key)
                if allowed is not None and dst not in allowed:
                    return []
        return [(dst, msg)]


class ComplaintReplay(Strategy):
    """Keeps valid remote complaints and re-sends them after every new leader.

    Replays wait until the freshness window has passed so that they would
    trigger a change if the complaint-number check were absent.
    """

    name = "complaint_replay"

    def attach(self, replica):
        super().attach(replica)
        self.stash: dict[tuple, RemoteComplaint] = {}
        self.replays = 0

    def incoming(self, replica, src, msg):
        if isinstance(msg, RComplaint):
            key = (msg.cluster, msg.round, msg.cn)
            self.stash.setdefault(key, RemoteComplaint(msg.round, msg.cn, msg.cluster, msg.sigs))
        elif isinstance(msg, RemoteComplaint):
            self.stash.setdefault((msg.cluster, msg.round, msg.cn), msg)
        return True

    def on_new_leader(self, replica, leader, ts):
        if self.stash and self.replays < self.options.get("max_replays", 6):
            replica.ctx.set_timer(("adv", "replay"), replica.params.epsilon + 1)

    def on_timer(self, replica, tag):
        if tag[1] != "replay" or replica.status != "member":
            return
        self.replays += 1
        live = [m for m in self.stash.values() if m.round >= replica.r - 1]
        for m in sorted(live, key=lambda x: (x.round, x.cluster, x.cn)):
            replica.trace("adv_replay", r=m.round, origin=m.cluster, cn=m.cn)
            replica.ctx.broadcast(replica.members, m)


class StaleViewForgery(Strategy):
    """Sends other clusters certificates that only satisfy an outdated quorum.

    Two variants go out every round once the node has its cluster's
    operations: the genuine operations with every certificate cut down to
    `keep` signatures, and a batch with a forged first transaction carried
    by coalition signatures only.
    """

    name = "stale_view_forgery"

    def on_stage1(self, replica, ops, proofs):
        cfg = replica.config
        i = replica.cluster
        keep = self.options.get("keep", cfg.q(i) - 1)
        cut = []
        for p in proofs:
            sigs = sorted(p.cert.signatures, key=lambda s: s.signer)[:keep]
            cut.append(replace(p, cert=Certificate(p.cert.subject, frozenset(sigs))))
        forged_txn = Txn(f"forged:{replica.id}:{replica.r}", "write", "k0", "forged")
        forged_op = Trans(replica.id, forged_txn)
        subj = commit_subject(i, replica.r, 1, 0, forged_op.digest)
        signers = self.coalition.members_in(cfg.clusters[i])
        forged_cert = OpCert(1, Certificate(subj, frozenset(self.coalition.sign_as(s, subj) for s in signers)))
        forged_ops = (forged_op,) + tuple(ops[1:])
        forged_proofs = (forged_cert,) + tuple(proofs[1:])
        variants = [Inter(replica.r, i, tuple(ops), tuple(cut)), Inter(replica.r, i, forged_ops, forged_proofs)]
        replica.trace("adv_forge", r=replica.r, keep=keep, signers=len(signers))
        for j in cfg.cluster_ids:
            if j == i:
                continue
            for dst in cfg.members(j):
                for v in variants:
                    replica.ctx.send(dst, v)


class TobWithhold(Strategy):
    """As leader, never starts the epoch or proposes."""

    name = "tob_withhold"

    def outgoing(self, replica, dst, msg):
        if isinstance(msg, (NewView, Propose)):
            return []
        return [(dst, msg)]


class TobEquivocate(Strategy):
    """As leader, proposes different transactions to the two halves of the cluster."""

    name = "tob_equivocate"

    def outgoing(self, replica, dst, msg):
        if isinstance(msg, Propose):
            members = replica.members
            if dst in members[len(members) // 2:]:
                alt = Txn(f"equiv:{msg.cluster}:{msg.round}:{msg.ts}:{msg.seq}", "write", "k1", "equivocated")
                return [(dst, replace(msg, origin=replica.id, txn=alt))]
        return [(dst, msg)]


STRATEGIES: dict[str, type[Strategy]] = {
    cls.name: cls for cls in (Mute, SilentLeader, BrdPartialLeader, ComplaintReplay, StaleViewForgery,
                              TobWithhold, TobEquivocate)
}

# the strategies every safety and liveness sweep runs
SHIPPED = ("silent_leader", "brd_partial_leader", "complaint_replay", "stale_view_forgery", "tob_withhold",
           "tob_equivocate", "mute")


def make_strategy(name: str, coalition: Coalition, options: dict | None = None) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown adversary strategy {name!r}; known: {sorted(STRATEGIES)}") from None
    return cls(coalition, **(options or {}))
