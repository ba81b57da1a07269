from __future__ import annotations

import json
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable

import networkx as nx

from errors import ConfigError, EmptyPattern, KindConflict, MalformedDocument, UnknownNode

logger = logging.getLogger(__name__)


class NodeKind(str, Enum):
    ELEMENT = "Element"
    TASK = "Task"
    ACTION = "Action"
    EVENT = "Event"
    SCENE = "Scene"


class Category(str, Enum):
    GAME_ELEMENT_INTERACTION = "GameElementInteraction"
    TASK_DEPENDENCY = "TaskDependency"
    CAUSAL_TRANSITION = "CausalTransition"
    UI_ACTION_MAPPING = "UiActionMapping"
    SCENE_TRANSITION = "SceneTransition"
    EVENT_ELEMENT_RELATION = "EventElementRelation"
    ACTION_ELEMENT_RELATION = "ActionElementRelation"


class Direction(str, Enum):
    FORWARD = "forward"
    REVERSE = "reverse"
    BOTH = "both"


def normalize_name(name: str) -> str:
    return " ".join(str(name).casefold().split())


def normalize_relation(label: str) -> str:
    return "_".join(str(label).casefold().split())


@dataclass(frozen=True)
class Triple:
    """A (head, relation, tail) fact; equality ignores the category tag."""

    head: str
    relation: str
    tail: str
    category: Category = field(default=Category.GAME_ELEMENT_INTERACTION, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "head", normalize_name(self.head))
        object.__setattr__(self, "relation", normalize_relation(self.relation))
        object.__setattr__(self, "tail", normalize_name(self.tail))
        object.__setattr__(self, "category", Category(self.category))
        if not self.head or not self.relation or not self.tail:
            raise ValueError(f"incomplete triple {self.key}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head, self.relation, self.tail)

    def render(self) -> str:
        return f"{self.head} —{self.relation}→ {self.tail}"

    def to_dict(self) -> dict:
        return {"head": self.head, "relation": self.relation,
                "category": self.category.value, "tail": self.tail}


@dataclass(frozen=True)
class TraversalPolicy:
    max_hops: int = 3
    direction: Direction = Direction.BOTH
    relation_filter: frozenset[str] = frozenset()

    def __post_init__(self):
        if int(self.max_hops) < 1:
            raise ConfigError(f"max_hops must be >= 1, got {self.max_hops}")
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(
            self, "relation_filter", frozenset(normalize_relation(r) for r in self.relation_filter)
        )

    def allows(self, relation: str) -> bool:
        return not self.relation_filter or relation in self.relation_filter


class KnowledgeGraph:
    """Directed labelled multigraph over a networkx MultiDiGraph.

    Edges are keyed by relation label, so one (head, relation, tail) exists at
    most once. networkx keeps successor and predecessor maps, which serve as the
    forward and reverse adjacency indexes. Writers hold ``lock``.
    """

    def __init__(self, version_tag: str = ""):
        self.version_tag = version_tag
        self.lock = threading.RLock()
        self._g = nx.MultiDiGraph()

    # ---------- nodes ----------
    def has_node(self, name: str) -> bool:
        return normalize_name(name) in self._g

    def kind_of(self, name: str) -> NodeKind:
        key = normalize_name(name)
        if key not in self._g:
            raise UnknownNode(key)
        return self._g.nodes[key]["kind"]

    def nodes(self, kind: NodeKind | None = None) -> list[str]:
        return sorted(n for n, k in self._g.nodes(data="kind") if kind is None or k == kind)

    def node_count(self) -> int:
        return self._g.number_of_nodes()

    def edge_count(self) -> int:
        return self._g.number_of_edges()

    # ---------- edges ----------
    def triples(self) -> list[Triple]:
        return sorted(
            (Triple(h, r, t, c) for h, t, r, c in self._g.edges(keys=True, data="category")),
            key=lambda tr: tr.key,
        )

    def out_triples(self, name: str) -> list[Triple]:
        key = normalize_name(name)
        if key not in self._g:
            return []
        return [Triple(h, r, t, c) for h, t, r, c in self._g.out_edges(key, keys=True, data="category")]

    def in_triples(self, name: str) -> list[Triple]:
        key = normalize_name(name)
        if key not in self._g:
            return []
        return [Triple(h, r, t, c) for h, t, r, c in self._g.in_edges(key, keys=True, data="category")]

    def indexes_agree(self) -> bool:
        forward = sorted((h, r, t) for h in self._g for _, t, r in self._g.out_edges(h, keys=True))
        reverse = sorted((h, r, t) for t in self._g for h, _, r in self._g.in_edges(t, keys=True))
        return forward == reverse

    def copy(self) -> "KnowledgeGraph":
        other = KnowledgeGraph(self.version_tag)
        other._g = self._g.copy()
        return other

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.version_tag == other.version_tag
            and dict(self._g.nodes(data="kind")) == dict(other._g.nodes(data="kind"))
            and self.triples() == other.triples()
        )

    def __repr__(self) -> str:
        return f"KnowledgeGraph({self.version_tag!r}, nodes={self.node_count()}, edges={self.edge_count()})"


# ---------- symbolic operations ----------
def insert_triple(graph: KnowledgeGraph, triple: Triple, head_kind, tail_kind) -> bool:
    head_kind, tail_kind = NodeKind(head_kind), NodeKind(tail_kind)
    with graph.lock:
        g = graph._g
        for name, kind in ((triple.head, head_kind), (triple.tail, tail_kind)):
            if name in g and g.nodes[name]["kind"] != kind:
                raise KindConflict(name, g.nodes[name]["kind"].value, kind.value)
        if triple.head == triple.tail and head_kind != tail_kind:
            raise KindConflict(triple.head, head_kind.value, tail_kind.value)
        for name, kind in ((triple.head, head_kind), (triple.tail, tail_kind)):
            if name not in g:
                g.add_node(name, kind=kind)
        if g.has_edge(triple.head, triple.tail, key=triple.relation):
            return False
        g.add_edge(triple.head, triple.tail, key=triple.relation, category=triple.category)
        return True


def remove_triple(graph: KnowledgeGraph, triple: Triple) -> bool:
    with graph.lock:
        g = graph._g
        if not g.has_edge(triple.head, triple.tail, key=triple.relation):
            return False
        g.remove_edge(triple.head, triple.tail, key=triple.relation)
        return True


def query(graph: KnowledgeGraph, head: str | None = None, relation: str | None = None,
          tail: str | None = None) -> list[Triple]:
    if head is None and relation is None and tail is None:
        raise EmptyPattern("query needs at least one of head, relation, tail")
    head = normalize_name(head) if head is not None else None
    relation = normalize_relation(relation) if relation is not None else None
    tail = normalize_name(tail) if tail is not None else None

    if head is not None:
        candidates = graph.out_triples(head)
    elif tail is not None:
        candidates = graph.in_triples(tail)
    else:
        candidates = graph.triples()
    hits = [
        tr for tr in candidates
        if (head is None or tr.head == head)
        and (relation is None or tr.relation == relation)
        and (tail is None or tr.tail == tail)
    ]
    return sorted(hits, key=lambda tr: tr.key)


def neighbours(graph: KnowledgeGraph, node: str, policy: TraversalPolicy) -> list[str]:
    found: set[str] = set()
    if policy.direction in (Direction.FORWARD, Direction.BOTH):
        found.update(tr.tail for tr in graph.out_triples(node) if policy.allows(tr.relation))
    if policy.direction in (Direction.REVERSE, Direction.BOTH):
        found.update(tr.head for tr in graph.in_triples(node) if policy.allows(tr.relation))
    return sorted(found)


def impact_hops(graph: KnowledgeGraph, u: str, policy: TraversalPolicy) -> dict[str, int]:
    """Breadth-first minimum hop count for every node within ``max_hops`` of ``u``."""
    start = normalize_name(u)
    if not graph.has_node(start):
        raise UnknownNode(start)
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if dist[node] == policy.max_hops:
            continue
        for nxt in neighbours(graph, node, policy):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    del dist[start]
    return dist


def impact_set(graph: KnowledgeGraph, u: str, policy: TraversalPolicy) -> set[str]:
    return set(impact_hops(graph, u, policy))


def brute_force_impact(graph: KnowledgeGraph, u: str, policy: TraversalPolicy) -> set[str]:
    """Endpoints of every simple path of length 1..K from ``u``; slow reference."""
    start = normalize_name(u)
    if not graph.has_node(start):
        raise UnknownNode(start)
    reached: set[str] = set()

    def walk(path: list[str]):
        if len(path) > policy.max_hops:
            return
        for nxt in neighbours(graph, path[-1], policy):
            if nxt in path:
                continue
            reached.add(nxt)
            walk(path + [nxt])

    walk([start])
    reached.discard(start)
    return reached


# ---------- derived views ----------
def neighbourhood(graph: KnowledgeGraph, nodes: Iterable[str]) -> list[Triple]:
    """Every triple with an endpoint in ``nodes`` (the 1-hop subgraph)."""
    found: set[Triple] = set()
    for name in nodes:
        found.update(graph.out_triples(name))
        found.update(graph.in_triples(name))
    return sorted(found, key=lambda tr: tr.key)


def task_dependencies(graph: KnowledgeGraph, task: str) -> list[str]:
    return sorted({
        tr.tail for tr in graph.out_triples(task) if tr.category == Category.TASK_DEPENDENCY
    })


def graph_stats(graph: KnowledgeGraph) -> dict:
    kinds: dict[str, int] = {}
    for name in graph.nodes():
        kind = graph.kind_of(name).value
        kinds[kind] = kinds.get(kind, 0) + 1
    categories: dict[str, int] = {}
    for tr in graph.triples():
        categories[tr.category.value] = categories.get(tr.category.value, 0) + 1
    return {
        "version_tag": graph.version_tag,
        "nodes": graph.node_count(),
        "triples": graph.edge_count(),
        "kinds": dict(sorted(kinds.items())),
        "categories": dict(sorted(categories.items())),
    }


# ---------- documents ----------
def graph_document(graph: KnowledgeGraph) -> dict:
    return {
        "version_tag": graph.version_tag,
        "manifest": {"nodes": graph.node_count(), "triples": graph.edge_count()},
        "nodes": [{"name": n, "kind": graph.kind_of(n).value} for n in graph.nodes()],
        "triples": [tr.to_dict() for tr in graph.triples()],
    }


def save_graph(graph: KnowledgeGraph, sink: str | Path | IO[str]) -> None:
    text = json.dumps(graph_document(graph), indent=2, ensure_ascii=False) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def _require(obj: dict, key: str, where: str, kind=str):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedDocument("missing field", field=f"{where}.{key}" if where else key)
    value = obj[key]
    if not isinstance(value, kind):
        raise MalformedDocument(f"expected {kind.__name__}", field=f"{where}.{key}" if where else key)
    return value


def load_graph(source: str | Path | IO[str]) -> KnowledgeGraph:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(exc.msg, line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise MalformedDocument("graph document must be an object", line=1)

    graph = KnowledgeGraph(_require(doc, "version_tag", ""))
    declared: dict[str, NodeKind] = {}
    for i, node in enumerate(_require(doc, "nodes", "", list)):
        where = f"nodes[{i}]"
        name = normalize_name(_require(node, "name", where))
        try:
            kind = NodeKind(_require(node, "kind", where))
        except ValueError as exc:
            raise MalformedDocument("unknown node kind", field=f"{where}.kind") from exc
        if declared.get(name, kind) != kind:
            raise MalformedDocument(f"node {name!r} already declared as {declared[name].value}", field=f"{where}.kind")
        declared[name] = kind
        graph._g.add_node(name, kind=declared[name])

    for i, raw in enumerate(_require(doc, "triples", "", list)):
        where = f"triples[{i}]"
        parts = {k: _require(raw, k, where) for k in ("head", "relation", "category", "tail")}
        for end in ("head", "tail"):
            if normalize_name(parts[end]) not in declared:
                raise MalformedDocument(f"undeclared node {parts[end]!r}", field=f"{where}.{end}")
        try:
            triple = Triple(parts["head"], parts["relation"], parts["tail"], Category(parts["category"]))
        except ValueError as exc:
            raise MalformedDocument(str(exc), field=where) from exc
        insert_triple(graph, triple, declared[triple.head], declared[triple.tail])

    manifest = doc.get("manifest")
    if manifest is not None:
        for key, actual in (("nodes", graph.node_count()), ("triples", graph.edge_count())):
            if _require(manifest, key, "manifest", int) != actual:
                raise MalformedDocument(
                    f"manifest declares {manifest[key]} {key}, document has {actual}",
                    field=f"manifest.{key}",
                )
    logger.debug("loaded %r", graph)
    return graph
