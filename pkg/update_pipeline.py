from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from errors import (
    DeltaInconsistent, ImpactMismatch, MalformedLog, PlaytestError, UnknownNode, VocabularyViolation, error_record,
)
from extractors import CATEGORY_KINDS
from game_envs.base import canonical_action
from kg_core import (
    Category, KnowledgeGraph, NodeKind, TraversalPolicy, Triple, impact_hops, insert_triple,
    neighbourhood, normalize_name, remove_triple, task_dependencies,
)
from llm_gateway import Gateway, TemplateId, graph_update_tool, impact_set_tool

logger = logging.getLogger(__name__)

_HEADER = re.compile(r"^##\s*(\S+)\s*->\s*(\S+)\s*$")
_SECTION = re.compile(r"^###\s*(.+?)\s*$")
_BULLET = re.compile(r"^\s*[-*]\s+(.+?)\s*$")


class EntryCategory(str, Enum):
    FEATURE = "Feature"
    BUG_FIX = "BugFix"
    IMPROVEMENT = "Improvement"


SECTIONS = {
    "features": EntryCategory.FEATURE,
    "feature": EntryCategory.FEATURE,
    "bug fixes": EntryCategory.BUG_FIX,
    "bug fix": EntryCategory.BUG_FIX,
    "bugfixes": EntryCategory.BUG_FIX,
    "fixes": EntryCategory.BUG_FIX,
    "improvements": EntryCategory.IMPROVEMENT,
    "improvement": EntryCategory.IMPROVEMENT,
}
SECTION_TITLES = {
    EntryCategory.FEATURE: "Features",
    EntryCategory.BUG_FIX: "Bug Fixes",
    EntryCategory.IMPROVEMENT: "Improvements",
}


# ---------- update logs ----------
@dataclass(frozen=True)
class LogEntry:
    category: EntryCategory
    text: str


@dataclass(frozen=True)
class UpdateLog:
    from_version: str
    to_version: str
    entries: tuple[LogEntry, ...] = ()

    def render(self, entries: Iterable[LogEntry] | None = None) -> str:
        """Markdown for ``entries`` (default all) in the shipped log layout."""
        entries = self.entries if entries is None else tuple(entries)
        lines = ["# Game Update Log", f"## {self.from_version} -> {self.to_version}"]
        for category in EntryCategory:
            texts = [e.text for e in entries if e.category == category]
            if texts:
                lines += ["", f"### {SECTION_TITLES[category]}"] + [f"- {t}" for t in texts]
        return "\n".join(lines) + "\n"


def parse_update_log(text: str) -> UpdateLog:
    versions = None
    section = None
    entries: list[LogEntry] = []
    for lineno, line in enumerate(str(text).splitlines(), 1):
        stripped = line.strip()
        if versions is None:
            m = _HEADER.match(stripped)
            if m:
                versions = m.group(1), m.group(2)
            continue
        m = _SECTION.match(stripped)
        if m:
            title = " ".join(m.group(1).casefold().split())
            section = SECTIONS.get(title)
            if section is None:
                logger.warning("line %d: unknown section %r read as Improvement", lineno, m.group(1))
                section = EntryCategory.IMPROVEMENT
            continue
        m = _BULLET.match(line)
        if m:
            if section is None:
                logger.warning("line %d: entry outside any section read as Improvement", lineno)
            entries.append(LogEntry(section or EntryCategory.IMPROVEMENT, m.group(1)))
    if versions is None:
        raise MalformedLog("update log has no '## vA -> vB' header")
    return UpdateLog(versions[0], versions[1], tuple(entries))


# ---------- delta ----------
@dataclass(frozen=True)
class DeltaOp:
    op: str
    triple: Triple
    head_kind: NodeKind
    tail_kind: NodeKind
    entry: int

    def to_dict(self) -> dict:
        return {"op": self.op, "entry": self.entry, "head_kind": self.head_kind.value,
                "tail_kind": self.tail_kind.value, **self.triple.to_dict()}


@dataclass(frozen=True)
class UpdateDelta:
    to_version: str
    ops: tuple[DeltaOp, ...]
    related_items: tuple[str, ...]
    entry_items: tuple[tuple[str, ...], ...]
    tool_invocations: tuple = ()

    @property
    def triples(self) -> list[Triple]:
        """New or modified triples, i.e. everything the delta inserts."""
        return [op.triple for op in self.ops if op.op == "insert"]

    def to_dict(self) -> dict:
        return {
            "to_version": self.to_version,
            "new_or_modified_triples": [op.to_dict() for op in self.ops],
            "related_items": list(self.related_items),
            "entry_items": [list(items) for items in self.entry_items],
        }


def _kind(value, graph: KnowledgeGraph, name: str, default: NodeKind) -> NodeKind:
    if value:
        return NodeKind(value)
    if graph.has_node(name):
        return graph.kind_of(name)
    return default


def derive_delta(gateway: Gateway, graph: KnowledgeGraph, update_log: UpdateLog,
                 env_name: str | None = None) -> UpdateDelta:
    """One parser session per entry, each against its own scratch copy of ``graph``."""
    ops: list[DeltaOp] = []
    per_entry: list[list[str]] = []
    invocations = []
    for index, entry in enumerate(update_log.entries):
        scratch = graph.copy()
        answer = gateway.ask(
            TemplateId.UPDATE_PARSER,
            {"update_log": update_log.render([entry])},
            tools=[graph_update_tool(scratch)],
            context={"env": env_name, "version": update_log.to_version, "entry": entry.text},
        )
        returned = set()
        for item in answer.payload.triples:
            category = Category(item.category or Category.GAME_ELEMENT_INTERACTION.value)
            triple = Triple(item.head, item.relation, item.tail, category)
            default_head, default_tail = CATEGORY_KINDS[category]
            ops.append(DeltaOp(
                item.op, triple,
                _kind(item.head_kind, graph, triple.head, default_head),
                _kind(item.tail_kind, graph, triple.tail, default_tail),
                index,
            ))
            returned.add((item.op, triple.key))
        for inv in answer.tool_invocations:
            if inv.name != "graph_update":
                continue
            args = inv.arguments
            try:
                key = (args["op"], Triple(args["head"], args["relation"], args["tail"]).key)
            except ValueError:
                continue
            if key not in returned:
                raise DeltaInconsistent(
                    f"entry {index}: tool call {args['op']} {key} is missing from new_or_modified_triples"
                )
        invocations.extend(answer.tool_invocations)
        per_entry.append([normalize_name(x) for x in answer.payload.related_items])

    mentioned = {n for op in ops for n in (op.triple.head, op.triple.tail)}
    related: list[str] = []
    entry_items: list[tuple[str, ...]] = []
    for index, items in enumerate(per_entry):
        kept = []
        for name in items:
            if name not in mentioned and not graph.has_node(name):
                logger.warning("entry %d: dropping related item %r, absent from delta and graph", index, name)
                continue
            if name not in kept:
                kept.append(name)
            if name not in related:
                related.append(name)
        entry_items.append(tuple(kept))
    return UpdateDelta(update_log.to_version, tuple(ops), tuple(related), tuple(entry_items), tuple(invocations))


def sync_graph(graph: KnowledgeGraph, delta: UpdateDelta, errors: list | None = None) -> list[dict]:
    """Apply ``delta`` in order; returns the ops that changed the graph."""
    applied = []
    with graph.lock:
        for op in delta.ops:
            try:
                if op.op == "remove":
                    changed = remove_triple(graph, op.triple)
                else:
                    changed = insert_triple(graph, op.triple, op.head_kind, op.tail_kind)
            except PlaytestError as exc:
                logger.warning("sync %s %s failed: %s", op.op, op.triple.key, exc)
                if errors is not None:
                    errors.append(error_record(f"sync:{op.entry}", exc))
                continue
            if changed:
                applied.append({"op": op.op, "triple": op.triple.to_dict()})
        graph.version_tag = delta.to_version
    logger.info("synced graph to %s: %d ops applied", delta.to_version, len(applied))
    return applied


# ---------- impact ----------
@dataclass(frozen=True)
class ImpactReport:
    input_item: str
    inferred_related_items: tuple[str, ...]
    hop_distance: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "input_item": self.input_item,
            "inferred_related_items": list(self.inferred_related_items),
            "hop_distance": dict(sorted(self.hop_distance.items())),
        }


def infer_impact(graph: KnowledgeGraph, items: Sequence[str], policy: TraversalPolicy,
                 gateway: Gateway | None = None, calls: list | None = None,
                 errors: list | None = None) -> list[ImpactReport]:
    """One report per item. ``calls`` gets one entry per traversal the answers rest on; an
    inferencer answer that disagrees with the traversal goes to ``errors``."""
    calls = [] if calls is None else calls
    reports = []
    for raw in items:
        item = normalize_name(raw)
        try:
            hops = impact_hops(graph, item, policy)
        except UnknownNode:
            logger.warning("impact item %r is not in the graph", item)
            reports.append(ImpactReport(item, ()))
            continue
        if gateway is None:
            calls.append(item)
        else:
            answer = gateway.ask(
                TemplateId.IMPACT_INFERENCER,
                {"input_item": item},
                tools=[impact_set_tool(graph, policy, calls)],
            )
            inferred = {normalize_name(x) for x in answer.payload.inferred_related_items}
            if inferred != set(hops):
                exc = ImpactMismatch(item, sorted(set(hops) - inferred), sorted(inferred - set(hops)))
                logger.warning("%s; using the traversal", exc)
                if errors is not None:
                    errors.append(error_record(f"impact:{item}", exc))
        reports.append(ImpactReport(item, tuple(sorted(hops)), hops))
    return reports


@dataclass(frozen=True)
class TaskSelection:
    task: str
    impacted_elements: tuple[str, ...]
    dependencies: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"task": self.task, "impacted_elements": list(self.impacted_elements)}


def select_tasks(graph: KnowledgeGraph, reports: Sequence[ImpactReport]) -> list[TaskSelection]:
    impacted: set[str] = set()
    for report in reports:
        impacted.update(report.inferred_related_items)
        if graph.has_node(report.input_item):
            impacted.add(report.input_item)
    selected = []
    for task in graph.nodes(NodeKind.TASK):
        deps = task_dependencies(graph, task)
        hits = sorted(impacted.intersection(deps))
        if hits or task in impacted:
            selected.append(TaskSelection(task, tuple(hits), tuple(deps)))
    if not selected:
        logger.info("no task touches the impacted elements")
    return selected


# ---------- test cases ----------
@dataclass(frozen=True)
class TestCase:
    test_objective: str
    action_steps: tuple[str, ...]
    target_elements: tuple[str, ...] = ()
    source_update_entry: int = 0
    task: str | None = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.action_steps:
            raise ValueError("a test case needs at least one action step")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "source_update_entry": self.source_update_entry,
            "target_elements": list(self.target_elements),
            "Test_Objective": self.test_objective,
            "Action_Steps": list(self.action_steps),
        }


def _vocabulary_check(available: set[str]):
    def check(payload):
        bad = [s for s in payload.action_steps if canonical_action(s) not in available]
        if bad:
            raise VocabularyViolation(bad)

    return check


def impact_description(task: str | None, impacted: Sequence[str], available_actions: Sequence[str],
                       graph: KnowledgeGraph | None = None) -> str:
    lines = [f"Task: {task or 'none selected'}", f"Impacted elements: {', '.join(impacted) or 'none'}"]
    if graph is not None:
        known = [n for n in impacted if graph.has_node(n)]
        lines.append("Relevant knowledge:")
        lines += [f"  {tr.render()}" for tr in neighbourhood(graph, known)]
    lines.append(f"Available actions: {', '.join(available_actions)}")
    return "\n".join(lines)


def generate_test_case(gateway: Gateway, task: str | None, impacted_elements: Sequence[str],
                       available_actions: Sequence[str], graph: KnowledgeGraph | None = None,
                       context: Mapping | None = None, source_update_entry: int = 0) -> TestCase:
    available = {canonical_action(a) for a in available_actions}
    answer = gateway.ask(
        TemplateId.TEST_GENERATOR,
        {"impact_description": impact_description(task, impacted_elements, available_actions, graph)},
        context={"task": task, "targets": list(impacted_elements), "mode": "kg", **(context or {})},
        validate=_vocabulary_check(available),
        retry_on=(VocabularyViolation,),
    )
    return TestCase(
        answer.payload.test_objective,
        tuple(canonical_action(s) for s in answer.payload.action_steps),
        tuple(impacted_elements),
        source_update_entry,
        task,
    )


def generate_from_log(gateway: Gateway, update_log: UpdateLog, index: int,
                      available_actions: Sequence[str], context: Mapping | None = None) -> TestCase:
    """Graph-free generation straight from one log entry."""
    entry = update_log.entries[index]
    description = "\n".join([
        f"Update {update_log.from_version} -> {update_log.to_version}",
        f"Changed: {entry.text}",
        f"Available actions: {', '.join(available_actions)}",
    ])
    answer = gateway.ask(
        TemplateId.TEST_GENERATOR,
        {"impact_description": description},
        context={"mode": "no_kg", "entry": entry.text, **(context or {})},
        validate=_vocabulary_check({canonical_action(a) for a in available_actions}),
        retry_on=(VocabularyViolation,),
    )
    return TestCase(
        answer.payload.test_objective,
        tuple(canonical_action(s) for s in answer.payload.action_steps),
        (),
        index,
        None,
    )


# ---------- composition ----------
@dataclass
class PipelineResult:
    update_log: UpdateLog
    delta: UpdateDelta | None
    applied: list[dict]
    reports: list[ImpactReport]
    selections: list[TaskSelection]
    test_cases: list[TestCase]
    audit: dict


def _new_audit(env_name: str, update_log: UpdateLog, variant: str) -> dict:
    return {
        "env": env_name,
        "variant": variant,
        "from_version": update_log.from_version,
        "to_version": update_log.to_version,
        "stages": ["parse"],
        "tool_invocations": [],
        "applied": [],
        "reports": [],
        "selections": [],
        "test_cases": [],
        "errors": [],
        "traversal_calls": 0,
    }


def _wanted(entry: LogEntry, test_improvements: bool) -> bool:
    return test_improvements or entry.category != EntryCategory.IMPROVEMENT


def rank_candidates(selections: Sequence[TaskSelection], entry_items: Sequence[str],
                    related: Sequence[str]) -> list[TaskSelection]:
    entry_set, related_set = set(entry_items), set(related)
    return sorted(selections, key=lambda s: (
        -len(entry_set.intersection(s.dependencies)),
        -len(related_set.intersection(s.dependencies)),
        s.task,
    ))


def run_pipeline(gateway: Gateway, graph: KnowledgeGraph, document: str, env, policy: TraversalPolicy,
                 max_cases_per_entry: int = 1, test_improvements: bool = False) -> PipelineResult:
    """Parse, derive, sync, infer, select, generate. ``graph`` is updated in place."""
    update_log = parse_update_log(document)
    audit = _new_audit(env.name, update_log, "klpeg")
    errors = audit["errors"]

    delta = derive_delta(gateway, graph, update_log, env.name)
    audit["stages"].append("derive_delta")
    audit["tool_invocations"] = [inv.to_dict() for inv in delta.tool_invocations]

    applied = sync_graph(graph, delta, errors)
    audit["stages"].append("sync_graph")
    audit["applied"] = applied

    calls: list[str] = []
    reports = infer_impact(graph, delta.related_items, policy, gateway, calls, errors)
    audit["stages"].append("infer_impact")
    audit["reports"] = [r.to_dict() for r in sorted(reports, key=lambda r: r.input_item)]
    audit["traversal_calls"] = len(calls)

    selections = select_tasks(graph, reports)
    audit["stages"].append("select_tasks")
    audit["selections"] = [s.to_dict() for s in selections]

    vocabulary = env.vocabulary()
    cases: list[TestCase] = []
    for index, entry in enumerate(update_log.entries):
        items = delta.entry_items[index]
        if not _wanted(entry, test_improvements) or not items:
            continue
        ranked = rank_candidates(selections, items, delta.related_items)[:max_cases_per_entry] or [None]
        for choice in ranked:
            task = choice.task if choice else None
            try:
                cases.append(generate_test_case(
                    gateway, task, items, vocabulary, graph,
                    context={"env": env.name, "version": update_log.to_version},
                    source_update_entry=index,
                ))
            except PlaytestError as exc:
                logger.warning("entry %d, task %s: %s", index, task, exc)
                errors.append(error_record(f"generate:{index}", exc))
    audit["stages"].append("generate")
    audit["test_cases"] = [c.to_dict() for c in cases]
    return PipelineResult(update_log, delta, applied, reports, selections, cases, audit)


def run_pipeline_no_kg(gateway: Gateway, document: str, env, test_improvements: bool = False) -> PipelineResult:
    """Ablation: no graph sync and no traversal, cases come straight from the log text."""
    update_log = parse_update_log(document)
    audit = _new_audit(env.name, update_log, "klpeg_no_kg")
    cases: list[TestCase] = []
    vocabulary = env.vocabulary()
    for index, entry in enumerate(update_log.entries):
        if not _wanted(entry, test_improvements):
            continue
        try:
            cases.append(generate_from_log(
                gateway, update_log, index, vocabulary,
                context={"env": env.name, "version": update_log.to_version},
            ))
        except PlaytestError as exc:
            logger.warning("entry %d: %s", index, exc)
            audit["errors"].append(error_record(f"generate:{index}", exc))
    audit["stages"].append("generate")
    audit["test_cases"] = [c.to_dict() for c in cases]
    return PipelineResult(update_log, None, [], [], [], cases, audit)
