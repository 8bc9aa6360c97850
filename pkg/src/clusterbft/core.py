"""Shared protocol values: identities, quorum arithmetic, digests, signatures and operations."""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from dataclasses import dataclass, fields, is_dataclass
from typing import Iterable, Mapping

ReplicaId = str
ClusterId = int


class InvalidConfiguration(ValueError):
    """Raised when a membership layout or size breaks a protocol precondition."""


# ---------------------------------------------------------------------------
# quorum arithmetic


def fault_threshold(cluster_size: int) -> int:
    """Largest number of Byzantine members a cluster of this size tolerates."""
    if cluster_size < 1:
        raise InvalidConfiguration(f"cluster size must be positive, got {cluster_size}")
    return (cluster_size - 1) // 3


def quorum_size(cluster_size: int) -> int:
    """Smallest quorum such that any two quorums share at least f+1 members.

    Equals 2f+1 whenever the size is exactly 3f+1 and grows with the size
    otherwise, which keeps the intersection guarantee for every n.
    """
    f = fault_threshold(cluster_size)
    return (cluster_size + f + 2) // 2


def sender_set(cluster: Iterable[ReplicaId], f: int) -> tuple[ReplicaId, ...]:
    """The f+1 smallest member ids, used for deterministic fan-out."""
    members = sorted(cluster)
    if f < 0 or len(members) < f + 1:
        raise InvalidConfiguration(f"need at least {f + 1} members, have {len(members)}")
    return tuple(members[: f + 1])


# ---------------------------------------------------------------------------
# canonical encoding and digests


class Digestible:
    """Mixin for frozen dataclasses whose digest is computed once and cached."""

    @property
    def digest(self) -> str:
        d = self.__dict__.get("_dg")
        if d is None:
            d = hashlib.sha256(_encode_fields(self).encode()).hexdigest()
            object.__setattr__(self, "_dg", d)
        return d


def _encode_fields(obj) -> str:
    parts = [encode(getattr(obj, f.name)) for f in fields(obj)]
    return type(obj).__name__ + "(" + ",".join(parts) + ")"


_str_cache: dict[str, str] = {}


def _encode_str(s: str) -> str:
    out = _str_cache.get(s)
    if out is None:
        out = json.dumps(s)
        if len(_str_cache) >= 100_000:
            _str_cache.clear()
        _str_cache[s] = out
    return out


def encode(obj) -> str:
    """Deterministic text encoding; nested digestible values contribute their digest."""
    t = type(obj)
    if t is int:
        return str(obj)
    if t is str:
        return _encode_str(obj)
    if t is tuple:
        return "[" + ",".join([encode(x) for x in obj]) + "]"
    if obj is None:
        return "~"
    if isinstance(obj, bool):
        return "T" if obj else "F"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return _encode_str(obj)
    if isinstance(obj, float):
        return "f" + repr(obj)
    if isinstance(obj, bytes):
        return "x" + obj.hex()
    if isinstance(obj, Digestible):
        return "#" + obj.digest
    if is_dataclass(obj):
        return _encode_fields(obj)
    if isinstance(obj, (tuple, list)):
        return "[" + ",".join(encode(x) for x in obj) + "]"
    if isinstance(obj, (set, frozenset)):
        return "{" + ",".join(sorted(encode(x) for x in obj)) + "}"
    if isinstance(obj, Mapping):
        items = sorted(encode(k) + ":" + encode(v) for k, v in obj.items())
        return "<" + ",".join(items) + ">"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def digest(obj) -> str:
    if isinstance(obj, Digestible):
        return obj.digest
    return hashlib.sha256(encode(obj).encode()).hexdigest()


# ---------------------------------------------------------------------------
# signatures


@dataclass(frozen=True)
class SignatureToken:
    signer: ReplicaId
    digest: str
    tag: str


class Keyring:
    """Simulated signing keys.

    Tags are keyed hashes over a secret the nodes never see directly; the
    simulator only hands each node a signer bound to its own id, so a token
    naming another signer cannot be produced by protocol code.
    """

    def __init__(self, secret: bytes = b"simulated-keyring"):
        self._secret = secret
        self._verified: dict[SignatureToken, bool] = {}

    def _tag(self, signer: ReplicaId, d: str) -> str:
        return hashlib.sha256(self._secret + b"|" + signer.encode() + b"|" + d.encode()).hexdigest()[:24]

    def sign(self, signer: ReplicaId, d: str) -> SignatureToken:
        return SignatureToken(signer, d, self._tag(signer, d))

    def verify(self, token: SignatureToken) -> bool:
        ok = self._verified.get(token)
        if ok is None:
            ok = isinstance(token, SignatureToken) and token.tag == self._tag(token.signer, token.digest)
            if len(self._verified) > 10_000:
                self._verified.clear()
            self._verified[token] = ok
        return ok


KEYRING = Keyring()


def subject(*parts) -> str:
    """Digest of a signed statement built from plain values."""
    return _subject(parts)


@lru_cache(maxsize=4096)
def _subject(parts: tuple) -> str:
    return digest(parts)


@dataclass(frozen=True)
class Certificate:
    subject: str
    signatures: frozenset

    def signers(self) -> frozenset:
        return frozenset(s.signer for s in self.signatures)


def validate_certificate(cert: Certificate, cluster: Iterable[ReplicaId], required: int,
                         keyring: Keyring = KEYRING) -> bool:
    """True iff at least `required` distinct members signed the certificate subject."""
    members = set(cluster)
    good = set()
    for tok in cert.signatures:
        if not isinstance(tok, SignatureToken) or tok.digest != cert.subject:
            continue
        if tok.signer in members and keyring.verify(tok):
            good.add(tok.signer)
    return len(good) >= required


def count_valid(tokens: Iterable[SignatureToken], subj: str, members: Iterable[ReplicaId],
                keyring: Keyring = KEYRING) -> int:
    return sum(1 for _ in _valid_signers(tokens, subj, members, keyring))


def _valid_signers(tokens, subj, members, keyring):
    members = set(members)
    seen = set()
    for tok in tokens:
        if not isinstance(tok, SignatureToken) or tok.digest != subj or tok.signer in seen:
            continue
        if tok.signer in members and keyring.verify(tok):
            seen.add(tok.signer)
            yield tok.signer


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class Txn(Digestible):
    tid: str
    op: str  # "read" | "write" | "noop"
    key: str = ""
    value: str = ""


@dataclass(frozen=True)
class ReconfigRequest(Digestible):
    kind: str  # "join" | "leave"
    subject: ReplicaId
    cluster: ClusterId
    round: int
    sig: SignatureToken | None = None

    def statement(self) -> str:
        return subject("reconfig", self.kind, self.subject, self.cluster, self.round)

    def well_signed(self, keyring: Keyring = KEYRING) -> bool:
        s = self.sig
        return (s is not None and s.signer == self.subject and s.digest == self.statement()
                and keyring.verify(s))


@dataclass(frozen=True)
class Trans(Digestible):
    origin: ReplicaId
    txn: Txn


@dataclass(frozen=True)
class Reconfig(Digestible):
    recs: frozenset  # frozenset[ReconfigRequest]


Operation = Trans | Reconfig


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Configuration(Digestible):
    """Membership of every cluster, effective from `round` on."""

    clusters: tuple  # tuple[frozenset[ReplicaId], ...] indexed by ClusterId
    departed: frozenset = frozenset()
    round: int = 1

    def __post_init__(self):
        seen: set[str] = set()
        for j, members in enumerate(self.clusters):
            if not members:
                raise InvalidConfiguration(f"cluster {j} has no members")
            dup = seen.intersection(members)
            if dup:
                raise InvalidConfiguration(f"replica ids in more than one cluster: {sorted(dup)}")
            seen.update(members)
        back = seen.intersection(self.departed)
        if back:
            raise InvalidConfiguration(f"departed ids still present: {sorted(back)}")

    @classmethod
    def build(cls, layout: Mapping[int, Iterable[str]] | Iterable[Iterable[str]], round: int = 1):
        if isinstance(layout, Mapping):
            groups = [layout[k] for k in sorted(layout)]
        else:
            groups = list(layout)
        return cls(tuple(frozenset(g) for g in groups), frozenset(), round)

    @property
    def cluster_ids(self) -> range:
        return range(len(self.clusters))

    def members(self, j: ClusterId) -> tuple[ReplicaId, ...]:
        return tuple(sorted(self.clusters[j]))

    def size(self, j: ClusterId) -> int:
        return len(self.clusters[j])

    def f(self, j: ClusterId) -> int:
        return fault_threshold(len(self.clusters[j]))

    def q(self, j: ClusterId) -> int:
        return quorum_size(len(self.clusters[j]))

    def cluster_of(self, rid: ReplicaId) -> ClusterId | None:
        for j, members in enumerate(self.clusters):
            if rid in members:
                return j
        return None

    def all_members(self) -> list[ReplicaId]:
        return sorted(x for m in self.clusters for x in m)

    def admissible(self, req: ReconfigRequest) -> bool:
        """Whether the request would change membership if applied now."""
        if req.cluster < 0 or req.cluster >= len(self.clusters):
            return False
        if req.kind == "join":
            return req.subject not in self.departed and self.cluster_of(req.subject) is None
        if req.kind == "leave":
            return req.subject in self.clusters[req.cluster] and len(self.clusters[req.cluster]) > 1
        return False

    def apply(self, j: ClusterId, recs: Iterable[ReconfigRequest]) -> "Configuration":
        """New configuration after applying cluster j's requests; joins before leaves."""
        clusters = list(self.clusters)
        departed = set(self.departed)
        cur = set(clusters[j])
        ordered = sorted(recs, key=lambda x: (0 if x.kind == "join" else 1, x.subject))
        for req in ordered:
            if req.cluster != j:
                continue
            if req.kind == "join":
                if req.subject in departed or any(req.subject in m for m in clusters) or req.subject in cur:
                    continue
                cur.add(req.subject)
            elif req.kind == "leave":
                if req.subject in cur and len(cur) > 1:
                    cur.discard(req.subject)
                    departed.add(req.subject)
        clusters[j] = frozenset(cur)
        return Configuration(tuple(clusters), frozenset(departed), self.round)

    def at_round(self, r: int) -> "Configuration":
        return Configuration(self.clusters, self.departed, r)
