"""Scenario files: topology, faults, timing, workload and membership schedule.

Scenarios are YAML (or JSON, which YAML also reads) documents tagged with a
schema version. Loading validates everything that can be checked before a
run: id uniqueness, dangling references, cluster sizes and the Byzantine
budget of every cluster at every step of the membership schedule.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..adversary import STRATEGIES
from ..core import fault_threshold
from ..netsim import LinkOverride, TimingModel
from ..replica import ProtocolParams

SCHEMA = "clusterbft/scenario/v1"
SCENARIO_DIR_ENV = "CLUSTERBFT_SCENARIO_DIR"
PACKAGED_DIR = Path(__file__).resolve().parent.parent / "scenarios"


class ScenarioError(ValueError):
    pass


@dataclass
class Fault:
    node: str
    strategy: str
    options: dict = field(default_factory=dict)


@dataclass
class MembershipChange:
    subject: str
    kind: str  # "join" | "leave"
    cluster: int
    at_round: int | None = None
    at_time: int | None = None


@dataclass
class WorkloadSpec:
    txns: int = 0
    read_ratio: float = 0.85
    keys: int = 16
    skew: float = 1.0
    start: int = 0
    window: int = 100
    submitters: list[str] | None = None


@dataclass
class StaleView:
    """Test-only: one replica keeps an outdated view of a remote cluster from some round on."""

    node: str
    cluster: int
    members: list[str]
    from_round: int


@dataclass
class Scenario:
    name: str
    clusters: list[list[str]]
    faults: list[Fault] = field(default_factory=list)
    timing: TimingModel = field(default_factory=TimingModel)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    membership: list[MembershipChange] = field(default_factory=list)
    horizon: int = 200_000
    max_events: int = 2_000_000
    seeds: list[int] = field(default_factory=lambda: [0])
    stale_view: StaleView | None = None
    source: str | None = None

    @property
    def byzantine(self) -> set[str]:
        return {f.node for f in self.faults}

    @property
    def joiners(self) -> list[str]:
        return sorted({m.subject for m in self.membership if m.kind == "join"})

    def all_nodes(self) -> list[str]:
        return sorted({x for c in self.clusters for x in c} | set(self.joiners))

    def to_dict(self) -> dict:
        t = self.timing
        d = {
            "schema": SCHEMA,
            "name": self.name,
            "clusters": [{"members": list(c)} for c in self.clusters],
            "faults": [{"node": f.node, "strategy": f.strategy, "options": dict(f.options)} for f in self.faults],
            "timing": {"gst": t.gst, "delta": t.delta, "pre_gst_max": t.pre_gst_max,
                       "link_overrides": [{"src": o.src, "dst": o.dst, "kind": o.kind, "delay": o.delay}
                                          for o in t.overrides]},
            "protocol": dict(vars(self.protocol)),
            "workload": dict(vars(self.workload)),
            "membership": [{k: v for k, v in vars(m).items() if v is not None} for m in self.membership],
            "horizon": self.horizon,
            "max_events": self.max_events,
            "seeds": list(self.seeds),
        }
        if self.stale_view is not None:
            d["stale_view"] = dict(vars(self.stale_view))
        return d


def default_ids(cluster: int, size: int) -> list[str]:
    return [f"c{cluster}n{k:02d}" for k in range(size)]


def _seeds(v) -> list[int]:
    if v is None:
        return [0]
    if isinstance(v, int):
        return [v]
    if isinstance(v, str):
        return parse_seed_range(v)
    return [int(x) for x in v]


def parse_seed_range(text: str) -> list[int]:
    """'3' -> [3]; '0..4' -> [0, 1, 2, 3, 4]."""
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ScenarioError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def from_dict(doc: dict, source: str | None = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    if doc.get("schema") != SCHEMA:
        raise ScenarioError(f"unsupported or missing schema tag {doc.get('schema')!r}; expected {SCHEMA!r}")
    raw_clusters = doc.get("clusters") or []
    if not raw_clusters:
        raise ScenarioError("a scenario needs at least one cluster")
    clusters = []
    for j, c in enumerate(raw_clusters):
        if isinstance(c, int):
            c = {"size": c}
        members = c.get("members")
        if members is None:
            size = int(c.get("size", 0))
            if size < 1:
                raise ScenarioError(f"cluster {j} must have at least one member")
            members = default_ids(j, size)
        members = [str(x) for x in members]
        if not members:
            raise ScenarioError(f"cluster {j} must have at least one member")
        clusters.append(members)
    t = doc.get("timing") or {}
    overrides = [LinkOverride(o.get("src"), o.get("dst"), o.get("kind"), int(o["delay"]))
                 for o in t.get("link_overrides") or []]
    try:
        timing = TimingModel(int(t.get("gst", 0)), int(t.get("delta", 10)), int(t.get("pre_gst_max", 60)),
                             overrides)
        protocol = ProtocolParams.from_dict(doc.get("protocol"))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None
    try:
        workload = WorkloadSpec(**dict(doc.get("workload") or {}))
        faults = [Fault(str(f["node"]), str(f["strategy"]), dict(f.get("options") or {}))
                  for f in doc.get("faults") or []]
        membership = []
        for m in doc.get("membership") or []:
            membership.append(MembershipChange(str(m["subject"]), str(m["kind"]), int(m["cluster"]),
                                               m.get("at_round"), m.get("at_time")))
        sv = doc.get("stale_view")
        stale = StaleView(str(sv["node"]), int(sv["cluster"]), [str(x) for x in sv["members"]],
                          int(sv.get("from_round", 1))) if sv else None
    except KeyError as exc:
        raise ScenarioError(f"missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None
    sc = Scenario(
        name=str(doc.get("name", "unnamed")),
        clusters=clusters,
        faults=faults,
        timing=timing,
        protocol=protocol,
        workload=workload,
        membership=membership,
        horizon=int(doc.get("horizon", 200_000)),
        max_events=int(doc.get("max_events", 2_000_000)),
        seeds=_seeds(doc.get("seeds")),
        stale_view=stale,
        source=source,
    )
    validate(sc)
    return sc


def validate(sc: Scenario) -> None:
    seen: set[str] = set()
    for j, members in enumerate(sc.clusters):
        for x in members:
            if x in seen:
                raise ScenarioError(f"replica id {x} appears more than once")
            seen.add(x)
    known = set(seen)
    for m in sc.membership:
        if m.kind not in ("join", "leave"):
            raise ScenarioError(f"membership change kind must be join or leave, got {m.kind!r}")
        if not 0 <= m.cluster < len(sc.clusters):
            raise ScenarioError(f"membership change for {m.subject} targets unknown cluster {m.cluster}")
        if (m.at_round is None) == (m.at_time is None):
            raise ScenarioError(f"membership change for {m.subject} needs exactly one of at_round, at_time")
        if m.kind == "join":
            if m.subject in seen:
                raise ScenarioError(f"joiner {m.subject} is already an initial member")
            known.add(m.subject)
    for f in sc.faults:
        if f.node not in known:
            raise ScenarioError(f"fault refers to unknown node {f.node}")
        if f.strategy not in STRATEGIES:
            raise ScenarioError(f"unknown adversary strategy {f.strategy!r}")
    if len({f.node for f in sc.faults}) != len(sc.faults):
        raise ScenarioError("a node may carry at most one fault")
    for o in sc.timing.overrides:
        for x in (o.src, o.dst):
            if x is not None and x not in known:
                raise ScenarioError(f"link override refers to unknown node {x}")
    subs = sc.workload.submitters
    if subs:
        for x in subs:
            if x not in seen:
                raise ScenarioError(f"workload submitter {x} is not an initial member")
    if sc.stale_view is not None and sc.stale_view.node not in known:
        raise ScenarioError(f"stale view refers to unknown node {sc.stale_view.node}")
    _check_schedule(sc)


def _check_schedule(sc: Scenario) -> None:
    """Replay the membership schedule in order and check sizes and budgets at each step."""
    layout = [set(c) for c in sc.clusters]
    byz = sc.byzantine
    departed: set[str] = set()

    def check(step: str):
        for j, members in enumerate(layout):
            if not members:
                raise ScenarioError(f"{step}: cluster {j} would have no members")
            bad = len(members & byz)
            if bad > fault_threshold(len(members)):
                raise ScenarioError(f"{step}: cluster {j} has {bad} Byzantine of {len(members)}, "
                                    f"tolerates {fault_threshold(len(members))}")

    check("initially")
    order = sorted(sc.membership, key=lambda m: (m.at_round if m.at_round is not None else 0,
                                                 m.at_time if m.at_time is not None else 0,
                                                 0 if m.kind == "join" else 1, m.subject))
    for m in order:
        if m.kind == "join":
            if any(m.subject in c for c in layout) or m.subject in departed:
                raise ScenarioError(f"{m.subject} cannot join twice")
            layout[m.cluster].add(m.subject)
        else:
            if m.subject not in layout[m.cluster]:
                raise ScenarioError(f"{m.subject} cannot leave cluster {m.cluster}: not a member")
            layout[m.cluster].discard(m.subject)
            departed.add(m.subject)
        check(f"after {m.kind} of {m.subject}")


def resolve_path(name: str | os.PathLike) -> Path:
    p = Path(name)
    if p.exists():
        return p
    candidates = []
    env = os.environ.get(SCENARIO_DIR_ENV)
    if env:
        candidates.append(Path(env))
    candidates.append(PACKAGED_DIR)
    for base in candidates:
        for suffix in ("", ".yaml", ".yml", ".json"):
            q = base / f"{name}{suffix}"
            if q.exists():
                return q
    raise ScenarioError(f"scenario {name!r} not found (looked in cwd, ${SCENARIO_DIR_ENV}, packaged scenarios)")


def load_scenario(path: str | os.PathLike) -> Scenario:
    p = resolve_path(path)
    with open(p) as fh:
        doc = yaml.safe_load(fh)
    return from_dict(doc, source=str(p))


def packaged_scenarios() -> list[str]:
    return sorted(p.stem for p in PACKAGED_DIR.glob("*.yaml"))
