"""Seeded discrete-event network simulator with partial synchrony.

Time is an integer tick counter. Every scheduled event is ordered by
(time, class, seeded priority, insertion sequence) so a run is a pure
function of the scenario and the seed.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .core import KEYRING, Keyring, SignatureToken, digest

DELIVERY, TIMER, ACTION = 0, 1, 2


class ImpersonationError(RuntimeError):
    """A node tried to send with another node's id."""


class TruncatedRun(RuntimeError):
    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


class Record:
    """One trace line. `data` must hold JSON-safe values only."""

    __slots__ = ("time", "node", "kind", "data", "obj")

    def __init__(self, time: int, node: str, kind: str, data: dict, obj: Any = None):
        self.time = time
        self.node = node
        self.kind = kind
        self.data = data
        self.obj = obj

    @property
    def digest(self) -> str:
        if self.obj is not None:
            return digest(self.obj)[:16]
        return hashlib.sha256(self.summary().encode()).hexdigest()[:16]

    def summary(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def render(self) -> str:
        return f"{self.time} | {self.node} | {self.kind} | {self.digest} | {self.summary()}"

    @classmethod
    def parse(cls, line: str) -> "Record":
        time, node, kind, dg, summary = line.rstrip("\n").split(" | ", 4)
        rec = cls(int(time), node, kind, json.loads(summary))
        rec.obj = None
        return rec

    def __repr__(self):
        return f"Record({self.render()})"


class Trace:
    def __init__(self, records: list[Record] | None = None):
        self.records: list[Record] = records if records is not None else []

    def add(self, time: int, node: str, kind: str, data: dict, obj: Any = None) -> Record:
        rec = Record(time, node, kind, data, obj)
        self.records.append(rec)
        return rec

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def of_kind(self, *kinds: str) -> list[Record]:
        ks = set(kinds)
        return [r for r in self.records if r.kind in ks]

    def lines(self) -> Iterable[str]:
        for r in self.records:
            yield r.render()

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def read(cls, path) -> "Trace":
        with open(path) as fh:
            return cls([Record.parse(line) for line in fh if line.strip()])


@dataclass
class LinkOverride:
    """Extra delay for matching messages sent before GST."""

    src: str | None
    dst: str | None
    kind: str | None
    delay: int

    def matches(self, src: str, dst: str, kind: str) -> bool:
        return ((self.src is None or self.src == src) and (self.dst is None or self.dst == dst)
                and (self.kind is None or self.kind == kind))


@dataclass
class TimingModel:
    gst: int = 0
    delta: int = 10
    pre_gst_max: int = 60
    overrides: list[LinkOverride] = field(default_factory=list)

    def __post_init__(self):
        if self.delta < 1 or self.pre_gst_max < 1 or self.gst < 0:
            raise ValueError("timing bounds must be positive")

    def delay(self, rng: random.Random, src: str, dst: str, kind: str, now: int) -> int:
        """Uniform integer delay in [1, bound]."""
        if now >= self.gst:
            return 1 + int(rng.random() * self.delta)
        d = 1 + int(rng.random() * self.pre_gst_max)
        for ov in self.overrides:
            if ov.matches(src, dst, kind):
                d = max(d, ov.delay)
        return d


class Envelope:
    __slots__ = ("seq", "src", "dst", "msg", "sent_at", "deliver_at")

    def __init__(self, seq: int, src: str, dst: str, msg: Any, sent_at: int, deliver_at: int):
        self.seq = seq
        self.src = src
        self.dst = dst
        self.msg = msg
        self.sent_at = sent_at
        self.deliver_at = deliver_at

    @property
    def token(self) -> SignatureToken:
        """Authentication of the sender over the payload, computed on demand."""
        return KEYRING.sign(self.src, digest(self.msg))


class NodeContext:
    """The only handle a node has on the outside world."""

    __slots__ = ("sim", "id")

    def __init__(self, sim: "Simulator", node_id: str):
        self.sim = sim
        self.id = node_id

    @property
    def now(self) -> int:
        return self.sim.now

    @property
    def keyring(self) -> Keyring:
        return self.sim.keyring

    def send(self, dst: str, msg) -> None:
        self.sim.send(self.id, dst, msg)

    def broadcast(self, dsts: Iterable[str], msg) -> None:
        for d in dsts:
            self.sim.send(self.id, d, msg)

    def set_timer(self, tag, duration: int) -> None:
        self.sim.set_timer(self.id, tag, duration)

    def cancel_timer(self, tag) -> None:
        self.sim.cancel_timer(self.id, tag)

    def timer_active(self, tag) -> bool:
        return (self.id, tag) in self.sim._timers

    def sign(self, d: str) -> SignatureToken:
        return self.sim.keyring.sign(self.id, d)

    def trace(self, kind: str, /, **data) -> None:
        self.sim.trace.add(self.sim.now, self.id, kind, data)


class Simulator:
    def __init__(self, seed: int = 0, timing: TimingModel | None = None, keyring: Keyring = KEYRING,
                 byzantine: Iterable[str] = (), record_messages: bool = True):
        self.seed = seed
        self.rng = random.Random(seed)
        self.timing = timing or TimingModel()
        self.keyring = keyring
        self.byzantine = set(byzantine)
        self.now = 0
        self.trace = Trace()
        self.nodes: dict[str, Any] = {}
        self.parked: dict[str, list[Envelope]] = {}
        self.record_messages = record_messages
        self.delay_hook: Callable[[Envelope], int | None] | None = None
        self.events_processed = 0
        self._queue: list = []
        self._seq = 0
        self._msg_seq = 0
        self._timers: dict[tuple, int] = {}
        self._timer_gen = 0
        self._current: str | None = None
        self._started: set[str] = set()

    # -- registration ------------------------------------------------------

    def context(self, node_id: str) -> NodeContext:
        return NodeContext(self, node_id)

    def register(self, node_id: str, node) -> None:
        if node_id in self.nodes:
            raise ValueError(f"node {node_id} already registered")
        self.nodes[node_id] = node
        for env in self.parked.pop(node_id, []):
            self._push(max(env.deliver_at, self.now), DELIVERY, ("deliver", env))

    def start(self) -> None:
        for nid in list(self.nodes):
            if nid not in self._started:
                self._started.add(nid)
                self._dispatch(nid, lambda n=self.nodes[nid]: n.start())

    # -- scheduling --------------------------------------------------------

    def _push(self, time: int, cls: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, cls, self.rng.random(), self._seq, payload))

    def send(self, src: str, dst: str, msg) -> None:
        if self._current is not None and src != self._current:
            raise ImpersonationError(f"{self._current} attempted to send as {src}")
        kind = type(msg).__name__
        if dst == src:
            d = 0
        else:
            d = self.timing.delay(self.rng, src, dst, kind, self.now)
        self._msg_seq += 1
        env = Envelope(self._msg_seq, src, dst, msg, self.now, self.now + d)
        if self.delay_hook is not None and (src in self.byzantine or dst in self.byzantine):
            extra = self.delay_hook(env)
            if extra:
                env.deliver_at += int(extra)
        if self.now >= self.timing.gst:
            env.deliver_at = min(env.deliver_at, self.now + self.timing.delta)
        if self.record_messages:
            self.trace.add(self.now, src, "send",
                           {"to": dst, "msg": kind, "r": getattr(msg, "round", None),
                            "scope": getattr(msg, "scope", "local"), "id": env.seq},
                           msg)
        if dst not in self.nodes:
            self.parked.setdefault(dst, []).append(env)
            return
        self._push(env.deliver_at, DELIVERY, ("deliver", env))

    def set_timer(self, node_id: str, tag, duration: int) -> None:
        self._timer_gen += 1
        self._timers[(node_id, tag)] = self._timer_gen
        self._push(self.now + max(1, int(duration)), TIMER, ("timer", node_id, tag, self._timer_gen))

    def cancel_timer(self, node_id: str, tag) -> None:
        self._timers.pop((node_id, tag), None)

    def schedule(self, time: int, node_id: str, fn: Callable[[], None], label: str = "action") -> None:
        """Run `fn` as node `node_id` at `time` (used by the harness for external inputs)."""
        self._push(max(time, self.now), ACTION, ("action", node_id, fn, label))

    # -- running -----------------------------------------------------------

    def _dispatch(self, node_id: str, fn) -> None:
        prev = self._current
        self._current = node_id
        try:
            fn()
        finally:
            self._current = prev

    def step(self) -> bool:
        if not self._queue:
            return False
        time, _cls, _prio, _seq, payload = heapq.heappop(self._queue)
        self.now = time
        tag = payload[0]
        if tag == "deliver":
            env = payload[1]
            node = self.nodes[env.dst]
            if self.record_messages:
                self.trace.add(time, env.dst, "recv", {"from": env.src, "msg": type(env.msg).__name__,
                                                        "id": env.seq}, env.msg)
            prev, self._current = self._current, env.dst
            try:
                node.on_message(env.src, env.msg)
            finally:
                self._current = prev
        elif tag == "timer":
            _, node_id, ttag, gen = payload
            if self._timers.get((node_id, ttag)) != gen:
                return True
            del self._timers[(node_id, ttag)]
            node = self.nodes[node_id]
            self.trace.add(time, node_id, "timer", {"tag": _tag_text(ttag)})
            self._dispatch(node_id, lambda: node.on_timer(ttag))
        else:
            _, node_id, fn, _label = payload
            self._dispatch(node_id, fn)
        self.events_processed += 1
        return True

    def run(self, until: int | None = None, max_events: int | None = None) -> str:
        """Run to quiescence. Returns "quiescent" or "horizon"; raises TruncatedRun."""
        self.start()
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                return "horizon"
            if max_events is not None and self.events_processed >= max_events:
                raise TruncatedRun(f"event budget of {max_events} exhausted at t={self.now}", self.trace)
            self.step()
        return "quiescent"


def _tag_text(tag) -> str:
    if isinstance(tag, tuple):
        return ":".join(str(x) for x in tag)
    return str(tag)
