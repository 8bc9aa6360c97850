"""Per-cluster leader election driven by complaints.

Members complain about the leader of their current timestamp. f+1
complaints for a timestamp make every correct member join in, and a quorum
moves the cluster to the next timestamp, whose leader is picked round-robin
over the sorted membership. Seeing f+1 complaints for a later timestamp means
at least one correct member already got there, so a lagging member jumps
forward instead of staying behind forever. The same holds for f+1 members
already running the protocol at a later timestamp, which is how a member
that joined with a stale timestamp catches up.
"""

from __future__ import annotations

from typing import Sequence

from .messages import LeComplaint


def leader_of(members: Sequence[str], ts: int) -> str:
    ordered = sorted(members)
    return ordered[ts % len(ordered)]


class Election:
    def __init__(self, host, ts: int = 1):
        self.host = host
        self.ts = ts
        self.complained = False
        self.complaints: dict[int, set[str]] = {}
        self.seen: dict[str, int] = {}

    @property
    def leader(self) -> str:
        return leader_of(self.host.config.members(self.host.cluster), self.ts)

    def complain(self, suspect: str, cause: str) -> None:
        """Complain about `suspect` if it is still the leader; one complaint per timestamp."""
        if suspect != self.leader or self.complained:
            return
        self.complained = True
        self.host.trace("le_complain", ts=self.ts, leader=suspect, cause=cause)
        self.host.broadcast(self.host.config.members(self.host.cluster), LeComplaint(self.host.cluster, self.ts))

    def on_complaint(self, src: str, m: LeComplaint) -> None:
        cfg = self.host.config
        if m.cluster != self.host.cluster or src not in cfg.clusters[self.host.cluster] or m.ts < self.ts:
            return
        self.complaints.setdefault(m.ts, set()).add(src)
        self._evaluate()

    def observe(self, src: str, ts: int) -> None:
        """Note that member `src` sent protocol traffic for timestamp `ts`."""
        if ts <= self.ts or ts <= self.seen.get(src, 0):
            return
        self.seen[src] = ts
        members = self.host.config.clusters[self.host.cluster]
        f = self.host.config.f(self.host.cluster)
        ahead = sorted((t for who, t in self.seen.items() if t > self.ts and who in members), reverse=True)
        if len(ahead) >= f + 1:
            self._move(ahead[f], "observe")

    def _evaluate(self) -> None:
        cfg = self.host.config
        f = cfg.f(self.host.cluster)
        q = cfg.q(self.host.cluster)
        ahead = [t for t, who in self.complaints.items() if t > self.ts and len(who) >= f + 1]
        if ahead:
            self._move(max(ahead), "sync")
            return
        who = self.complaints.get(self.ts, ())
        if len(who) >= f + 1 and not self.complained:
            self.complain(self.leader, "amplify")
        if len(who) >= q:
            self._move(self.ts + 1, "quorum")

    def _move(self, ts: int, how: str) -> None:
        old = self.ts
        self.ts = ts
        self.complained = False
        for t in [t for t in self.complaints if t < ts]:
            del self.complaints[t]
        leader = self.leader
        self.host.trace("le_change", old=old, ts=ts, leader=leader, how=how)
        self.host.on_new_leader(leader, ts)
        self._evaluate()
