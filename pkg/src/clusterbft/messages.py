"""Wire messages exchanged between replicas.

Every message is a frozen dataclass; `round` scopes it to a protocol round and
`cluster` names the cluster whose instance it belongs to where relevant.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Certificate, Configuration, Digestible, ReconfigRequest, SignatureToken, Txn

GLOBAL_KINDS = frozenset({"Inter", "RComplaint"})


class Message(Digestible):
    scope = "local"

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        cls.scope = "global" if cls.__name__ in GLOBAL_KINDS else "local"

    @property
    def kind(self) -> str:
        return type(self).__name__


# -- client traffic ---------------------------------------------------------


@dataclass(frozen=True)
class TxRequest(Message):
    cluster: int
    origin: str
    txn: Txn
    round: int = 0


# -- total order broadcast --------------------------------------------------


@dataclass(frozen=True)
class PreparedEntry(Digestible):
    seq: int
    ts: int
    origin: str
    txn: Txn
    echoes: frozenset  # echo signatures certifying the entry


@dataclass(frozen=True)
class EpochStart(Message):
    cluster: int
    round: int
    ts: int
    prepared: tuple  # tuple[PreparedEntry, ...]
    pending: tuple  # tuple[(origin, Txn), ...] the sender still wants ordered
    sig: SignatureToken


@dataclass(frozen=True)
class NewView(Message):
    cluster: int
    round: int
    ts: int
    starts: tuple  # tuple[EpochStart, ...]


@dataclass(frozen=True)
class Propose(Message):
    cluster: int
    round: int
    ts: int
    seq: int
    origin: str
    txn: Txn


@dataclass(frozen=True)
class Echo(Message):
    cluster: int
    round: int
    ts: int
    seq: int
    op: str  # digest of the proposed Trans
    sig: SignatureToken


@dataclass(frozen=True)
class Commit(Message):
    cluster: int
    round: int
    ts: int
    seq: int
    origin: str
    txn: Txn
    sig: SignatureToken


# -- reconfiguration request dissemination ----------------------------------


@dataclass(frozen=True)
class Contribution(Message):
    """A member's signed set of collected requests for one leader epoch."""

    cluster: int
    round: int
    ts: int
    sender: str
    recs: frozenset
    sig: SignatureToken


@dataclass(frozen=True)
class Bundle(Digestible):
    """The aggregate a leader proposes: contributions sorted by sender."""

    contributions: tuple

    def senders(self) -> list[str]:
        return [c.sender for c in self.contributions]


@dataclass(frozen=True)
class Attestation(Digestible):
    kind: str  # "origin" | "echo" | "ready"
    ts: int
    sigs: frozenset


@dataclass(frozen=True)
class Agg(Message):
    cluster: int
    round: int
    ts: int
    bundle: Bundle
    att: Attestation


@dataclass(frozen=True)
class BrdEcho(Message):
    cluster: int
    round: int
    ts: int
    bundle: Bundle
    sig: SignatureToken


@dataclass(frozen=True)
class BrdReady(Message):
    cluster: int
    round: int
    ts: int
    bundle: Bundle
    sig: SignatureToken


@dataclass(frozen=True)
class Valid(Message):
    cluster: int
    round: int
    ts: int
    sender: str
    bundle: Bundle
    att: Attestation


# -- leader election --------------------------------------------------------


@dataclass(frozen=True)
class LeComplaint(Message):
    cluster: int
    ts: int


# -- inter-cluster exchange -------------------------------------------------


@dataclass(frozen=True)
class OpCert(Digestible):
    ts: int
    cert: Certificate


@dataclass(frozen=True)
class RecsProof(Digestible):
    bundle: Bundle
    ts: int
    cert: Certificate


@dataclass(frozen=True)
class Inter(Message):
    round: int
    cluster: int  # origin cluster of the operations
    ops: tuple
    proofs: tuple


@dataclass(frozen=True)
class Local(Message):
    round: int
    cluster: int
    ops: tuple
    proofs: tuple


@dataclass(frozen=True)
class Catchup(Message):
    """Certified operations of every cluster for a round the receiver is still in."""

    round: int
    cluster: int
    batches: tuple  # ((cluster, ops, proofs), ...)


@dataclass(frozen=True)
class CatchupRequest(Message):
    """Sent by a member still in `round` to a member already past it."""

    round: int
    cluster: int


@dataclass(frozen=True)
class LComplaint(Message):
    round: int
    cluster: int  # complaining cluster
    about: int  # cluster whose operations are missing
    cn: int
    sig: SignatureToken


@dataclass(frozen=True)
class RComplaint(Message):
    round: int
    cn: int
    cluster: int  # complaining cluster
    sigs: frozenset


@dataclass(frozen=True)
class RemoteComplaint(Message):
    """Relay of a verified remote complaint inside the accused cluster."""

    round: int
    cn: int
    cluster: int
    sigs: frozenset


# -- membership changes -----------------------------------------------------


@dataclass(frozen=True)
class ReconfigMsg(Message):
    req: ReconfigRequest

    @property
    def round(self) -> int:
        return self.req.round


@dataclass(frozen=True)
class Ack(Message):
    cluster: int
    members: frozenset
    round: int
    sender: str


@dataclass(frozen=True)
class RoundHint(Message):
    cluster: int
    round: int
    sender: str


@dataclass(frozen=True)
class AppSnapshot(Digestible):
    store: tuple  # sorted (key, value) pairs
    chain: str
    executed: tuple  # sorted ids of executed transactions


@dataclass(frozen=True)
class CurrState(Message):
    state: AppSnapshot
    config: Configuration
    round: int
    ts: int


def round_of(msg) -> int | None:
    return getattr(msg, "round", None)
