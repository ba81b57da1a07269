from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from errors import MalformedDocument, PlaytestError, SchemaError, ScriptFailure, error_record
from kg_core import Category, KnowledgeGraph, NodeKind, Triple, insert_triple, normalize_relation

logger = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\$(\d)")


class SourceKind(str, Enum):
    GAME_LOG = "GameLog"
    TASK_NAME = "TaskName"
    UI_PROMPT = "UiPrompt"
    STATE_DIFF = "StateDiff"


class ExtractorKind(str, Enum):
    RULE = "Rule"
    SCRIPT = "Script"
    LLM = "Llm"


# default endpoint kinds for triples that arrive without explicit kinds
CATEGORY_KINDS: dict[Category, tuple[NodeKind, NodeKind]] = {
    Category.GAME_ELEMENT_INTERACTION: (NodeKind.ELEMENT, NodeKind.ELEMENT),
    Category.TASK_DEPENDENCY: (NodeKind.TASK, NodeKind.ELEMENT),
    Category.CAUSAL_TRANSITION: (NodeKind.ELEMENT, NodeKind.ELEMENT),
    Category.UI_ACTION_MAPPING: (NodeKind.ACTION, NodeKind.EVENT),
    Category.SCENE_TRANSITION: (NodeKind.SCENE, NodeKind.SCENE),
    Category.EVENT_ELEMENT_RELATION: (NodeKind.EVENT, NodeKind.ELEMENT),
    Category.ACTION_ELEMENT_RELATION: (NodeKind.ACTION, NodeKind.ELEMENT),
}


@dataclass(frozen=True)
class LogEvent:
    source_kind: SourceKind
    text: str
    step_index: int = 0
    before: Mapping | None = None
    after: Mapping | None = None

    def __post_init__(self):
        object.__setattr__(self, "source_kind", SourceKind(self.source_kind))
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")
        if self.source_kind == SourceKind.STATE_DIFF:
            if self.before is None or self.after is None:
                raise ValueError("a state diff needs before and after states")
        elif not str(self.text).strip():
            raise ValueError(f"{self.source_kind.value} event needs text")

    def to_dict(self) -> dict:
        doc = {"source_kind": self.source_kind.value, "text": self.text, "step_index": self.step_index}
        if self.source_kind == SourceKind.STATE_DIFF:
            doc["before"] = self.before
            doc["after"] = self.after
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LogEvent":
        return cls(SourceKind(doc["source_kind"]), doc.get("text", ""), int(doc.get("step_index", 0)),
                   doc.get("before"), doc.get("after"))


# ---------- rule config ----------
@dataclass(frozen=True)
class Rule:
    pattern: re.Pattern
    head: str
    relation: str
    tail: str
    category: Category
    head_kind: NodeKind
    tail_kind: NodeKind


@dataclass(frozen=True)
class VocabEntry:
    category: Category
    head_kind: NodeKind
    tail_kind: NodeKind


@dataclass(frozen=True)
class RuleConfig:
    rules: Mapping[SourceKind, tuple[Rule, ...]]
    vocabulary: Mapping[str, VocabEntry] = field(default_factory=dict)


def parse_rule_config(doc: Mapping, where: str = "rule config") -> RuleConfig:
    """Validate and compile a rule-config document; every problem raises MalformedDocument."""
    sources = doc.get("sources")
    if not isinstance(sources, dict) or not sources:
        raise MalformedDocument(f"{where}: no sources declared", field="sources")
    rules: dict[SourceKind, tuple[Rule, ...]] = {}
    for name, raw_rules in sources.items():
        try:
            kind = SourceKind(name)
        except ValueError:
            raise MalformedDocument(f"{where}: unknown source kind {name!r}", field=f"sources.{name}") from None
        if not raw_rules:
            raise MalformedDocument(f"{where}: source {name} has no rules", field=f"sources.{name}")
        compiled = []
        for i, raw in enumerate(raw_rules):
            at = f"sources.{name}[{i}]"
            try:
                pattern = re.compile(raw["pattern"], re.IGNORECASE)
                category = Category(raw["category"])
                head_kind, tail_kind = NodeKind(raw["head_kind"]), NodeKind(raw["tail_kind"])
                head, relation, tail = raw["head"], raw["relation"], raw["tail"]
            except KeyError as exc:
                raise MalformedDocument(f"{where}: missing key {exc}", field=at) from None
            except (re.error, ValueError) as exc:
                raise MalformedDocument(f"{where}: {exc}", field=at) from None
            if pattern.groups < 1:
                raise MalformedDocument(f"{where}: pattern has no capture group", field=f"{at}.pattern")
            for part in (head, relation, tail):
                for ref in _PLACEHOLDER.findall(part):
                    if int(ref) > pattern.groups:
                        raise MalformedDocument(f"{where}: ${ref} exceeds {pattern.groups} groups", field=at)
            compiled.append(Rule(pattern, head, relation, tail, category, head_kind, tail_kind))
        rules[kind] = tuple(compiled)

    vocabulary = {}
    for label, raw in (doc.get("llm_relations") or {}).items():
        try:
            vocabulary[normalize_relation(label)] = VocabEntry(
                Category(raw["category"]), NodeKind(raw["head_kind"]), NodeKind(raw["tail_kind"])
            )
        except (KeyError, ValueError) as exc:
            raise MalformedDocument(f"{where}: bad relation {label!r}: {exc}", field=f"llm_relations.{label}") from None
    return RuleConfig(rules=rules, vocabulary=vocabulary)


def load_rule_config(path: str | Path) -> RuleConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc.msg}", line=exc.lineno) from exc
    return parse_rule_config(doc, where=str(path))


# ---------- extraction results ----------
@dataclass(frozen=True)
class ExtractedTriple:
    triple: Triple
    head_kind: NodeKind
    tail_kind: NodeKind
    extractor: ExtractorKind
    event_index: int

    def to_dict(self) -> dict:
        return {
            **self.triple.to_dict(),
            "head_kind": self.head_kind.value,
            "tail_kind": self.tail_kind.value,
            "extractor": self.extractor.value,
            "event_index": self.event_index,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExtractedTriple":
        return cls(
            Triple(doc["head"], doc["relation"], doc["tail"], Category(doc["category"])),
            NodeKind(doc["head_kind"]),
            NodeKind(doc["tail_kind"]),
            ExtractorKind(doc["extractor"]),
            int(doc["event_index"]),
        )


@dataclass(frozen=True)
class ExtractionBatch:
    items: tuple[ExtractedTriple, ...] = ()
    errors: tuple[dict, ...] = ()

    @property
    def triples(self) -> list[Triple]:
        return [item.triple for item in self.items]

    def categories(self) -> set[Category]:
        return {item.triple.category for item in self.items}

    def to_dict(self) -> dict:
        return {"triples": [item.to_dict() for item in self.items], "errors": list(self.errors)}


def dump_batch(batch: ExtractionBatch, path: str | Path):
    Path(path).write_text(json.dumps(batch.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_batch(path: str | Path) -> ExtractionBatch:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExtractionBatch(
        items=tuple(ExtractedTriple.from_dict(d) for d in doc["triples"]),
        errors=tuple(doc.get("errors", ())),
    )


def dump_events(events: Iterable[LogEvent], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for event in events:
            fh.write(json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def load_events(path: str | Path) -> list[LogEvent]:
    events = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(LogEvent.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MalformedDocument(f"{path}: {exc}", line=lineno) from exc
    return events


# ---------- extractors ----------
def _fill(template: str, match: re.Match) -> str:
    return _PLACEHOLDER.sub(lambda m: match.group(int(m.group(1))) or "", template)


def _rule_hits(config: RuleConfig, event: LogEvent) -> list[tuple[Triple, Rule]]:
    hits = []
    for rule in config.rules.get(event.source_kind, ()):
        for match in rule.pattern.finditer(event.text):
            try:
                triple = Triple(_fill(rule.head, match), _fill(rule.relation, match),
                                _fill(rule.tail, match), rule.category)
            except ValueError:
                # an optional group matched empty
                continue
            hits.append((triple, rule))
    return hits


def rule_extract(config: RuleConfig, event: LogEvent) -> list[Triple]:
    return [triple for triple, _ in _rule_hits(config, event)]


@dataclass(frozen=True)
class ScriptHooks:
    on_event: Callable[[LogEvent], list[Triple]]
    on_state_change: Callable[[Mapping, Mapping], list[Triple]]


def script_extract(hooks: ScriptHooks, event: LogEvent) -> list[Triple]:
    try:
        if event.source_kind == SourceKind.GAME_LOG:
            return list(hooks.on_event(event))
        if event.source_kind == SourceKind.STATE_DIFF:
            return list(hooks.on_state_change(event.before, event.after))
    except Exception as exc:
        raise ScriptFailure(f"script hook failed on {event.source_kind.value} event: {exc}") from exc
    return []


def _vocab_map(relation_vocab) -> dict[str, VocabEntry]:
    if isinstance(relation_vocab, Mapping):
        return {normalize_relation(k): v for k, v in relation_vocab.items()}
    default = VocabEntry(Category.GAME_ELEMENT_INTERACTION, NodeKind.ELEMENT, NodeKind.ELEMENT)
    return {normalize_relation(label): default for label in relation_vocab}


def _llm_items(gateway, event: LogEvent, relation_vocab) -> tuple[list[tuple[Triple, VocabEntry]], list[str]]:
    from llm_gateway import TemplateId

    vocab = _vocab_map(relation_vocab)
    answer = gateway.ask(
        TemplateId.EXTRACTOR,
        {"input_text": event.text, "relations": ", ".join(sorted(vocab))},
    )
    kept, dropped = [], []
    for i, item in enumerate(answer.payload):
        label = normalize_relation(item.relation)
        entry = vocab.get(label)
        if entry is None:
            logger.warning("dropping extracted triple %d: relation %r is outside the vocabulary", i, item.relation)
            dropped.append(f"knowledge_triples[{i}].Relation")
            continue
        try:
            kept.append((Triple(item.head, label, item.tail, entry.category), entry))
        except ValueError:
            dropped.append(f"knowledge_triples[{i}]")
    return kept, dropped


def llm_extract(gateway, event: LogEvent, relation_vocab) -> list[Triple]:
    kept, _ = _llm_items(gateway, event, relation_vocab)
    return [triple for triple, _ in kept]


def extract_all(config: RuleConfig | None, hooks: ScriptHooks | None, gateway,
                events: Sequence[LogEvent]) -> ExtractionBatch:
    """Run every applicable extractor over ``events`` in order, collecting per-event errors."""
    items: list[ExtractedTriple] = []
    errors: list[dict] = []
    for index, event in enumerate(events):
        if config is not None:
            for triple, rule in _rule_hits(config, event):
                items.append(ExtractedTriple(triple, rule.head_kind, rule.tail_kind, ExtractorKind.RULE, index))
        if hooks is not None and event.source_kind in (SourceKind.GAME_LOG, SourceKind.STATE_DIFF):
            try:
                for triple in script_extract(hooks, event):
                    head_kind, tail_kind = CATEGORY_KINDS[triple.category]
                    items.append(ExtractedTriple(triple, head_kind, tail_kind, ExtractorKind.SCRIPT, index))
            except ScriptFailure as exc:
                logger.warning("event %d: %s", index, exc)
                errors.append(error_record(index, exc))
        if gateway is not None and config is not None and event.source_kind == SourceKind.UI_PROMPT:
            try:
                kept, dropped = _llm_items(gateway, event, config.vocabulary)
            except PlaytestError as exc:
                errors.append(error_record(index, exc))
                continue
            for triple, entry in kept:
                items.append(ExtractedTriple(triple, entry.head_kind, entry.tail_kind, ExtractorKind.LLM, index))
            for path in dropped:
                errors.append(error_record(index, SchemaError(path, "relation outside the vocabulary")))
    return ExtractionBatch(tuple(items), tuple(errors))


def build_graph(batch: ExtractionBatch, version_tag: str = "") -> tuple[KnowledgeGraph, list[dict]]:
    """Insert every batch triple into a fresh graph; kind conflicts are collected, not raised."""
    graph = KnowledgeGraph(version_tag)
    errors = []
    for item in batch.items:
        try:
            insert_triple(graph, item.triple, item.head_kind, item.tail_kind)
        except PlaytestError as exc:
            errors.append(error_record(item.event_index, exc))
    return graph, errors
