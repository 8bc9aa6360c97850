"""Exchange of per-round operations between clusters and remote leader change.

The leader of each cluster sends its certified operations to f+1 members of
every other cluster, which relay them locally. When a cluster waits too long
for another cluster's operations its members complain; a quorum of such
complaints is forwarded to the slow cluster, whose members then complain
about their own leader. Complaint numbers stop a forwarded complaint from
being accepted more than once.
"""

from __future__ import annotations

from .brd import brd_ready_subject, bundle_integrity
from .core import Reconfig, Trans, count_valid, digest, sender_set, subject
from .messages import Inter, LComplaint, Local, RComplaint, RecsProof, RemoteComplaint
from .reconfig import normalize_recs
from .tob import valid_op_cert


def lcomplaint_subject(complainer: int, about: int, cn: int, r: int) -> str:
    return subject("lcomplaint", complainer, about, cn, r)


def validate_operations(config, cluster: int, r: int, ops, proofs, batch_size: int) -> bool:
    """Check a cluster's operations for round r against its membership in `config`."""
    if not 0 <= cluster < len(config.clusters):
        return False
    if len(ops) != batch_size + 1 or len(proofs) != len(ops):
        return False
    members = config.clusters[cluster]
    q = config.q(cluster)
    tids = set()
    for seq in range(batch_size):
        op = ops[seq]
        if not isinstance(op, Trans) or op.txn.tid in tids:
            return False
        tids.add(op.txn.tid)
        if not valid_op_cert(cluster, r, seq, op, proofs[seq], members, q):
            return False
    rc, proof = ops[-1], proofs[-1]
    if not isinstance(rc, Reconfig) or not isinstance(proof, RecsProof):
        return False
    subj = brd_ready_subject(cluster, r, proof.ts, proof.bundle.digest)
    if proof.cert.subject != subj or count_valid(proof.cert.signatures, subj, members) < q:
        return False
    if not bundle_integrity(proof.bundle, cluster, r, members, q):
        return False
    return normalize_recs(proof.bundle, cluster, config, r) == rc


class InterCluster:
    def __init__(self, host):
        self.host = host
        self.rcn: dict[tuple[int, int], int] = {}
        self.accepted_remote: set[tuple[int, int, int]] = set()
        self.prev_round = 0
        self.prev: dict[int, tuple] = {}
        self.prev_config = None
        self.prev_ts = 0
        self.prev_relayed: set[int] = set()
        self.round_start(0)

    # -- round lifecycle ----------------------------------------------------

    def round_start(self, r: int) -> None:
        self.r = r
        self.operations: dict[int, tuple] = {}
        self.relayed: set[int] = set()
        self.cn: dict[int, int] = {}
        self.cs: dict[tuple[int, int], dict] = {}
        self.complained: set[tuple[int, int]] = set()
        self.expiries: dict[int, int] = {}
        self.forwarded: set[tuple[int, int, int]] = set()
        for key in [k for k in self.rcn if k[1] < r - 1]:
            del self.rcn[key]
        self.accepted_remote = {k for k in self.accepted_remote if k[1] >= r - 1}

    def archive(self, config, ts: int) -> None:
        self.prev_round = self.r
        self.prev_ts = ts
        self.prev = dict(self.operations)
        self.prev_config = config
        self.prev_relayed = set(self.relayed)

    @property
    def complete(self) -> bool:
        return all(j in self.operations for j in self.host.config.cluster_ids)

    def _remote_clusters(self):
        return [j for j in self.host.config.cluster_ids if j != self.host.cluster]

    def _timeout(self, j: int) -> int:
        p = self.host.params
        return p.remote_timeout * p.backoff ** min(self.expiries.get(j, 0), p.max_backoff_exp)

    # -- sending ------------------------------------------------------------

    def on_local_complete(self, ops, proofs) -> None:
        host = self.host
        self.operations[host.cluster] = (ops, proofs)
        if host.is_leader:
            self.inter_broadcast(self.r, ops, proofs)
        for j in self._remote_clusters():
            if j not in self.operations:
                host.ctx.set_timer(("remote", self.r, j), self._timeout(j))

    def inter_broadcast(self, r: int, ops, proofs) -> None:
        host = self.host
        cfg = host.config
        msg = Inter(r, host.cluster, ops, proofs)
        for j in self._remote_clusters():
            for dst in sender_set(cfg.clusters[j], cfg.f(j)):
                host.send(dst, msg)

    def on_new_leader(self) -> None:
        own = self.operations.get(self.host.cluster)
        if own is not None:
            self.inter_broadcast(self.r, *own)
        prev = self.prev.get(self.host.cluster)
        if prev is not None and self.prev_round == self.r - 1:
            self.inter_broadcast(self.prev_round, *prev)

    # -- receiving operations -----------------------------------------------

    def on_inter(self, src: str, m: Inter) -> None:
        """Relay verified operations to the own cluster, once per round and origin.

        An Inter for the round just executed is still relayed: this replica
        may have been served by a relay that did not reach everyone.
        """
        host = self.host
        if m.cluster == host.cluster:
            return
        if m.round == self.r:
            cfg, relayed = host.config, self.relayed
        elif m.round == self.prev_round and m.round == self.r - 1 and self.prev_config is not None:
            cfg, relayed = self.prev_config, self.prev_relayed
        else:
            return
        if m.cluster in relayed:
            return
        if not validate_operations(cfg, m.cluster, m.round, m.ops, m.proofs, host.params.batch_size):
            host.trace("inter_reject", r=m.round, cluster=m.cluster, sender=src)
            return
        relayed.add(m.cluster)
        if m.round == self.r:
            host.activate()
        host.broadcast(cfg.members(host.cluster), Local(m.round, m.cluster, m.ops, m.proofs))

    def on_local(self, src: str, m: Local) -> None:
        host = self.host
        if src not in host.config.clusters[host.cluster]:
            return
        if m.round != self.r or m.cluster == host.cluster or m.cluster in self.operations:
            return
        if not validate_operations(host.config, m.cluster, m.round, m.ops, m.proofs, host.params.batch_size):
            host.trace("inter_reject", r=m.round, cluster=m.cluster, sender=src)
            return
        self.operations[m.cluster] = (m.ops, m.proofs)
        host.ctx.cancel_timer(("remote", self.r, m.cluster))
        host.trace("ops_accept", r=m.round, cluster=m.cluster, ops=_ops_digest(m.ops), at=host.cluster,
                   sigs=min(len(p.cert.signatures) for p in m.proofs))
        host.activate()
        host.try_execute()

    # -- complaints about a remote cluster ------------------------------------

    def on_timer(self, r: int, j: int) -> None:
        if r != self.r or j in self.operations:
            return
        self.expiries[j] = self.expiries.get(j, 0) + 1
        self._send_lcomplaint(j, self.cn.get(j, 0))

    def _send_lcomplaint(self, j: int, c: int) -> None:
        host = self.host
        if (j, c) in self.complained:
            return
        self.complained.add((j, c))
        sig = host.ctx.sign(lcomplaint_subject(host.cluster, j, c, self.r))
        host.trace("lcomplaint", r=self.r, about=j, cn=c)
        host.broadcast(host.config.members(host.cluster), LComplaint(self.r, host.cluster, j, c, sig))

    def on_lcomplaint(self, src: str, m: LComplaint) -> None:
        host = self.host
        cfg = host.config
        if m.cluster != host.cluster or src not in cfg.clusters[host.cluster]:
            return
        if m.round == self.r - 1 or (m.round == self.r and m.about in self.operations):
            self._help(src, m)
            return
        if m.round != self.r or m.about == host.cluster or not 0 <= m.about < len(cfg.clusters):
            return
        s = m.sig
        if s is None or s.signer != src or s.digest != lcomplaint_subject(host.cluster, m.about, m.cn, m.round):
            return
        if not host.ctx.keyring.verify(s):
            return
        c = self.cn.get(m.about, 0)
        if m.cn < c:
            return
        self.cs.setdefault((m.about, m.cn), {}).setdefault(src, s)
        host.activate()
        self._check_complaints(m.about)

    def _help(self, src: str, m: LComplaint) -> None:
        """A member complains about operations this replica already holds: send them over."""
        if m.round == self.r:
            held = self.operations.get(m.about)
        elif m.round == self.prev_round:
            held = self.prev.get(m.about)
        else:
            held = None
        if held is not None and src != self.host.id:
            self.host.send(src, Local(m.round, m.about, *held))

    def _check_complaints(self, j: int) -> None:
        host = self.host
        cfg = host.config
        i = host.cluster
        while j not in self.operations:
            c = self.cn.get(j, 0)
            sigs = self.cs.get((j, c), {})
            if len(sigs) >= cfg.f(i) + 1 and (j, c) not in self.complained:
                self._send_lcomplaint(j, c)
            if len(sigs) < cfg.q(i):
                return
            if host.id in sender_set(cfg.clusters[i], cfg.f(i)):
                msg = RComplaint(self.r, c, i, frozenset(sigs.values()))
                for dst in sender_set(cfg.clusters[j], cfg.f(j)):
                    host.send(dst, msg)
            host.trace("remote_complaint_sent", r=self.r, about=j, cn=c)
            self.cn[j] = c + 1
            self.cs.pop((j, c), None)
            host.ctx.set_timer(("remote", self.r, j), self._timeout(j))

    # -- complaints about this cluster ----------------------------------------

    def _config_for(self, r: int):
        if r == self.r:
            return self.host.config
        if r == self.r - 1 and r == self.prev_round and self.prev_config is not None:
            return self.prev_config
        return None

    def _remote_complaint_ok(self, m) -> bool:
        host = self.host
        cfg = self._config_for(m.round)
        if cfg is None:
            return False
        jp = m.cluster
        if jp == host.cluster or not 0 <= jp < len(cfg.clusters):
            return False
        if host.params.replay_defense and m.cn != self.rcn.get((jp, m.round), 0):
            return False
        subj = lcomplaint_subject(jp, host.cluster, m.cn, m.round)
        return count_valid(m.sigs, subj, cfg.clusters[jp]) >= cfg.q(jp)

    def on_rcomplaint(self, src: str, m: RComplaint) -> None:
        host = self.host
        cfg = self._config_for(m.round)
        if cfg is None or not 0 <= m.cluster < len(cfg.clusters) or src not in cfg.clusters[m.cluster]:
            return
        key = (m.cluster, m.round, m.cn)
        if key in self.forwarded and host.params.replay_defense:
            return
        if not self._remote_complaint_ok(m):
            return
        self.forwarded.add(key)
        host.broadcast(host.config.members(host.cluster), RemoteComplaint(m.round, m.cn, m.cluster, m.sigs))

    def on_remote_complaint(self, src: str, m: RemoteComplaint) -> None:
        host = self.host
        if src not in host.config.clusters[host.cluster]:
            return
        if not self._remote_complaint_ok(m):
            return
        key = (m.cluster, m.round, m.cn)
        fresh = key not in self.accepted_remote
        self.accepted_remote.add(key)
        self.rcn[(m.cluster, m.round)] = m.cn + 1
        elapsed = host.ctx.now - host.last_leader_change
        acted = elapsed > host.params.epsilon
        host.trace("remote_complaint", r=m.round, origin=m.cluster, cn=m.cn, fresh=fresh, acted=acted)
        if m.round == self.r:
            # another cluster is waiting on this round even if this cluster had nothing to order
            host.activate()
        if acted:
            host.election.complain(host.election.leader, f"remote:{m.cluster}:{m.round}:{m.cn}")


def _ops_digest(ops) -> str:
    return digest(tuple(ops))[:16]
