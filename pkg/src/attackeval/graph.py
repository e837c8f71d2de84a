"""Causal-relationship attack graphs built from annotated scenarios.

Nodes are the causal steps of a scenario. A control edge joins the step that
created a process to the later steps that process (or a descendant of it)
performs; a data edge joins a file write to a later read of the same file.
Edges never cross hosts and network activity never creates an edge.
"""

from __future__ import annotations

import ntpath
import posixpath
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import registry
from .errors import ConfigError, ParseError
from .ingest import iter_records
from .normalize import NormalizedDetection, Outcome, ProtectionResult
from .steps import is_step_id, step_key

ACTIONS = ("process-create", "file-write", "file-read", "load", "execute", "modify-config", "network", "other")
ENTITY_ACTIONS = frozenset(ACTIONS[:6])
READ_ACTIONS = frozenset({"file-read", "load", "execute"})
ENTITY_KINDS = ("process", "actor", "file", "registry", "network")
CONTROL, DATA = "control", "data"


def parse_entity(ref: str | None) -> tuple[str, str] | None:
    """Split ``"file:C:\\x.dll"`` into ``("file", "C:\\x.dll")``."""
    if ref is None:
        return None
    kind, sep, value = ref.partition(":")
    if not sep or kind not in ENTITY_KINDS or not value:
        raise ValueError(f"entity reference must look like '<kind>:<name>' with kind in {ENTITY_KINDS}: {ref!r}")
    return kind, value


def file_identity(path: str, platform: str) -> str:
    if platform == "windows":
        return ntpath.normpath(path.replace("/", "\\")).casefold()
    return posixpath.normpath(path)


@dataclass(frozen=True)
class ScenarioStep:
    step: str
    technique_id: str
    action: str
    host: str
    ordinal: int
    subject: str | None = None
    object: str | None = None
    image: str | None = None  # file a created process runs from
    kind: str | None = None  # descriptive | causal; None means classify
    technique_name: str = ""


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    hosts: dict[str, str]  # host -> platform
    steps: tuple[ScenarioStep, ...]
    processes: tuple[tuple[str, str, str | None], ...] = ()  # (host, process, parent)
    round_id: str | None = None


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    flow: str


@dataclass(frozen=True)
class NodeAnnotation:
    seen: int
    applicable: int
    blocks: int | None = None

    @property
    def visibility(self) -> Fraction | None:
        return Fraction(self.seen, self.applicable) if self.applicable else None


@dataclass(frozen=True)
class CausalAttackGraph:
    nodes: tuple[ScenarioStep, ...]
    edges: tuple[Edge, ...]
    annotations: dict[str, NodeAnnotation] = field(default_factory=dict)
    notices: tuple[str, ...] = field(default=(), compare=False)

    def node_ids(self) -> list[str]:
        return [n.step for n in self.nodes]

    def node(self, step: str) -> ScenarioStep:
        for n in self.nodes:
            if n.step == step:
                return n
        raise KeyError(step)

    def hosts(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for n in self.nodes:
            out[n.host].append(n.step)
        return dict(out)


# -- loading -----------------------------------------------------------------

def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(lines, source=path.name, default_id=path.stem)


def parse_scenario(lines: Iterable[str], source: str = "<memory>", default_id: str = "scenario") -> Scenario:
    scenario_id, round_id = default_id, None
    hosts: dict[str, str] = {}
    steps: list[ScenarioStep] = []
    processes = []
    for index, obj in iter_records(lines, source):
        kind = obj["record"]
        try:
            if kind == "scenario":
                scenario_id = obj.get("scenario", scenario_id)
                if obj.get("round"):
                    round_id = registry.resolve_round(obj["round"])
            elif kind == "host":
                if obj["platform"] not in ("windows", "linux"):
                    raise ParseError(f"bad platform {obj['platform']!r}", source, index)
                hosts[obj["host"]] = obj["platform"]
            elif kind == "process":
                processes.append((obj["host"], obj["process"], obj.get("parent")))
            elif kind == "step":
                if not is_step_id(obj["step"]):
                    raise ParseError(f"malformed step id {obj['step']!r}", source, index)
                if obj["action"] not in ACTIONS:
                    raise ParseError(f"unknown action {obj['action']!r}", source, index)
                for key in ("subject", "object", "image"):
                    parse_entity(obj.get(key))
                steps.append(ScenarioStep(
                    step=obj["step"], technique_id=obj["technique_id"], action=obj["action"],
                    host=obj["host"], ordinal=int(obj["ordinal"]), subject=obj.get("subject"),
                    object=obj.get("object"), image=obj.get("image"), kind=obj.get("kind"),
                    technique_name=obj.get("technique_name", ""),
                ))
            else:
                raise ParseError(f"unknown record type {kind!r}", source, index)
        except KeyError as exc:
            raise ParseError(f"missing required field {exc.args[0]!r}", source, index) from None
        except ValueError as exc:
            raise ParseError(str(exc), source, index) from None
    for s in steps:
        if s.host not in hosts:
            raise ParseError(f"step {s.step} uses undeclared host {s.host!r}", source)
    return Scenario(scenario_id, hosts, tuple(steps), tuple(processes), round_id)


# -- construction ------------------------------------------------------------

def classify_step(step: ScenarioStep, table: registry.ClassificationTable | None = None) -> str:
    """Descriptive or causal. An explicit kind wins, then an entity action, then the table."""
    if step.kind in ("descriptive", "causal"):
        return step.kind
    if step.action in ENTITY_ACTIONS:
        return "causal"
    found = (table or registry.default_classification()).lookup(step.technique_id)
    if found is None:
        from .errors import UnclassifiedStepError
        raise UnclassifiedStepError(step.step, step.technique_id)
    return found


def _check_causal(step: ScenarioStep) -> None:
    if step.subject is None:
        raise ValueError(f"causal step {step.step} has no subject")
    if step.action in ("process-create", "file-write", "file-read") and step.object is None:
        raise ValueError(f"step {step.step}: action {step.action} needs an object")


def build_graph(scenario: Scenario | Sequence[ScenarioStep], hosts: Mapping[str, str] | None = None,
                table: registry.ClassificationTable | None = None) -> CausalAttackGraph:
    if isinstance(scenario, Scenario):
        steps, hosts, seeds = scenario.steps, scenario.hosts, scenario.processes
    else:
        steps, seeds = tuple(scenario), ()
        hosts = dict(hosts or {})
    ordinals = [s.ordinal for s in steps]
    if len(set(ordinals)) != len(ordinals):
        raise ValueError("step ordinals must be unique; repeated ordinals leave execution order undefined")
    if len({s.step for s in steps}) != len(steps):
        raise ValueError("step ids must be unique within a scenario")
    steps = sorted(steps, key=lambda s: s.ordinal)

    created_at: dict[tuple[str, str], str] = {}
    parent: dict[tuple[str, str], str | None] = {}
    writer: dict[tuple[str, str], str] = {}
    for host, proc, par in seeds:
        parent[(host, proc)] = par

    nodes, edges, notices = [], set(), []
    for s in steps:
        if classify_step(s, table) != "causal":
            continue
        _check_causal(s)
        nodes.append(s)
        platform = hosts.get(s.host, "windows")
        subj_kind, subj = parse_entity(s.subject)

        if subj_kind == "process":
            seen, proc = set(), subj
            while proc is not None and proc not in seen:
                seen.add(proc)
                origin = created_at.get((s.host, proc))
                if origin is not None:
                    edges.add(Edge(origin, s.step, CONTROL))
                    break
                proc = parent.get((s.host, proc))

        reads = []
        obj = parse_entity(s.object)
        if s.action in READ_ACTIONS and obj and obj[0] == "file":
            reads.append(obj[1])
        if s.action == "process-create" and s.image:
            img = parse_entity(s.image)
            if img[0] == "file":
                reads.append(img[1])
        for path in reads:
            key = (s.host, file_identity(path, platform))
            w = writer.get(key)
            if w is None:
                notices.append(f"step {s.step} reads {path} with no earlier writer")
            elif w != s.step:
                edges.add(Edge(w, s.step, DATA))

        if s.action == "process-create" and obj and obj[0] == "process":
            created_at[(s.host, obj[1])] = s.step
            parent[(s.host, obj[1])] = subj if subj_kind == "process" else None
        if s.action == "file-write" and obj and obj[0] == "file":
            writer[(s.host, file_identity(obj[1], platform))] = s.step

    order = {n.step: n.ordinal for n in nodes}
    return CausalAttackGraph(
        nodes=tuple(nodes),
        edges=tuple(sorted(edges, key=lambda e: (order[e.src], order[e.dst], e.flow))),
        notices=tuple(notices),
    )


def induced_subgraph(graph: CausalAttackGraph, keep: Iterable[str]) -> CausalAttackGraph:
    keep = set(keep)
    return CausalAttackGraph(
        nodes=tuple(n for n in graph.nodes if n.step in keep),
        edges=tuple(e for e in graph.edges if e.src in keep and e.dst in keep),
        annotations={k: v for k, v in graph.annotations.items() if k in keep},
        notices=graph.notices,
    )


def visible_subgraph(graph: CausalAttackGraph, detections: Iterable[NormalizedDetection]) -> CausalAttackGraph:
    """Restrict to steps this vendor saw at Telemetry or above."""
    seen = {d.step for d in detections if d.category.visible}
    return induced_subgraph(graph, seen)


def connected_components(graph: CausalAttackGraph) -> tuple[int, list[frozenset[str]]]:
    """Weakly connected components, ordered by their smallest step id."""
    adj: dict[str, set[str]] = {n.step: set() for n in graph.nodes}
    for e in graph.edges:
        adj[e.src].add(e.dst)
        adj[e.dst].add(e.src)
    seen: set[str] = set()
    comps = []
    for start in adj:
        if start in seen:
            continue
        comp, queue = {start}, deque([start])
        seen.add(start)
        while queue:
            for nxt in adj[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    comp.add(nxt)
                    queue.append(nxt)
        comps.append(frozenset(comp))
    comps.sort(key=lambda c: min(step_key(s) for s in c))
    return len(comps), comps


# -- ground truth and verdicts -----------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    scenario_id: str
    expected_segments: int
    host_steps: dict[str, tuple[str, ...]]
    host_platforms: dict[str, str] = field(default_factory=dict)
    baselines: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.host_steps and self.expected_segments != sum(1 for s in self.host_steps.values() if s):
            raise ValueError("expected segments must equal the number of hosts carrying causal steps")

    def expected_for(self, platforms: Iterable[str]) -> int:
        """Segments expected for a vendor that supports ``platforms``."""
        platforms = set(platforms)
        return sum(1 for h, steps in self.host_steps.items()
                   if steps and self.host_platforms.get(h, "windows") in platforms)


def load_truth(path: str | Path) -> GroundTruth:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read truth file {path}: {exc}") from exc
    scenario_id, expected = path.stem, None
    host_steps, host_platforms, baselines = {}, {}, {}
    for index, obj in iter_records(lines, path.name):
        try:
            kind = obj["record"]
            if kind == "truth":
                scenario_id = obj.get("scenario", scenario_id)
                expected = obj.get("expected_segments")
            elif kind == "host":
                host_steps[obj["host"]] = tuple(sorted(obj.get("steps", ()), key=step_key))
                host_platforms[obj["host"]] = obj.get("platform", "windows")
            elif kind == "baseline":
                baselines[int(obj["test"])] = obj["step"]
            else:
                raise ParseError(f"unknown record type {kind!r}", path.name, index)
        except KeyError as exc:
            raise ParseError(f"missing required field {exc.args[0]!r}", path.name, index) from None
    if expected is None:
        expected = sum(1 for s in host_steps.values() if s)
    try:
        return GroundTruth(scenario_id, int(expected), host_steps, host_platforms, baselines)
    except ValueError as exc:
        raise ParseError(str(exc), path.name) from None


def check_truth(truth: GroundTruth, graph: CausalAttackGraph) -> None:
    """Raise if the truth's host partition disagrees with the graph's nodes."""
    actual = {h: set(s) for h, s in graph.hosts().items()}
    claimed = {h: set(s) for h, s in truth.host_steps.items() if s}
    if actual != claimed:
        raise ConfigError(f"ground truth {truth.scenario_id} does not match the scenario's causal steps per host")


VERDICTS = ("matched", "fragmented", "missing-chain", "mixed")


def connectivity_verdict(components: int | Sequence[frozenset[str]], truth: GroundTruth,
                         expected: int | None = None) -> str:
    """Compare a component count (or the components themselves) with the truth.

    With the component sets available, an equal count is only ``matched``
    when every component falls inside a different host's steps.
    """
    if isinstance(components, int):
        count, sets = components, None
    else:
        sets = [frozenset(c) for c in components]
        count = len(sets)
    want = truth.expected_segments if expected is None else expected
    if count > want:
        return "fragmented"
    if count < want:
        return "missing-chain"
    if sets is None:
        return "matched"
    owners = []
    for comp in sets:
        hosts = [h for h, steps in truth.host_steps.items() if comp <= set(steps)]
        if len(hosts) != 1:
            return "mixed"
        owners.append(hosts[0])
    return "matched" if len(set(owners)) == len(owners) else "mixed"


EFFECTIVENESS = ("blocked-early", "blocked-on-time", "blocked-late", "not-blocked", "not-applicable")


def effectiveness_verdict(protections: Sequence[ProtectionResult], baseline: str,
                          order: Mapping[str, int] | None = None) -> str:
    """Where one vendor's first block in one test falls relative to the baseline step.

    ``order`` maps step ids to execution ordinals; without it step ids are
    compared by their hierarchy.
    """
    steps = {p.step for p in protections}
    if baseline not in steps and (order is None or baseline not in order):
        raise ConfigError(f"baseline step {baseline} is not part of the test's step sequence")

    def key(step):
        return (order[step],) if order is not None and step in order else step_key(step)

    if protections and all(p.outcome is Outcome.NOT_APPLICABLE for p in protections):
        return "not-applicable"
    blocks = [p.step for p in protections if p.outcome is Outcome.BLOCKED]
    if not blocks:
        return "not-blocked"
    first, base = min(map(key, blocks)), key(baseline)
    if first < base:
        return "blocked-early"
    if first == base:
        return "blocked-on-time"
    return "blocked-late"


# -- DOT ---------------------------------------------------------------------

def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def node_label(node: ScenarioStep, ann: NodeAnnotation | None) -> str:
    parts = [node.step, node.technique_id]
    if ann is not None:
        vis = ann.visibility
        if vis is not None:
            from .metrics import round_half_up
            parts.append(f"visibility {round_half_up(vis * 100, 2)}%")
        if ann.blocks is not None:
            parts.append(f"blocked by {ann.blocks}")
    return "\\n".join(p.replace("\\", "\\\\").replace('"', '\\"') for p in parts)


def export_dot(graph: CausalAttackGraph, name: str = "attack_graph") -> str:
    """Graphviz text: control edges solid, data edges dashed."""
    lines = [f"digraph {_quote(name)} {{", "  rankdir=LR;", "  node [shape=box];"]
    for n in graph.nodes:
        label = node_label(n, graph.annotations.get(n.step))
        lines.append(f'  {_quote(n.step)} [label="{label}"];')
    for e in graph.edges:
        style = "solid" if e.flow == CONTROL else "dashed"
        lines.append(f"  {_quote(e.src)} -> {_quote(e.dst)} [style={style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def with_annotations(graph: CausalAttackGraph, annotations: Mapping[str, NodeAnnotation]) -> CausalAttackGraph:
    return replace(graph, annotations=dict(annotations))
