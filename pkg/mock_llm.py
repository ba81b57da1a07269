"""Deterministic offline chat provider.

Answers come from canned fixtures first, then from a rule-backed responder per
template: entry books for update parsing, the ``impact_set`` tool for impact
inference and the environment planner for test generation.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Mapping, Sequence

from errors import PlanningError
from game_envs import DATA_DIR, Goal, load_env
from game_envs.rules import entry_key
from llm_gateway import MAIN_BINDING, ChatReply, TemplateId, Tool, ToolCall

logger = logging.getLogger(__name__)

CANNED_PATH = DATA_DIR / "mock" / "canned.json"


def binding_digest(text: str) -> str:
    return hashlib.sha256(str(text).encode("utf-8")).hexdigest()


def load_canned(path: str | Path = CANNED_PATH) -> dict[tuple[str, str], str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    canned = {}
    for item in doc["responses"]:
        template = TemplateId(item["template"]).value
        response = item["response"]
        text = response if isinstance(response, str) else json.dumps(response, ensure_ascii=False)
        canned[(template, binding_digest(item["input"]))] = text
    return canned


def load_entry_book(env_name: str) -> dict[str, dict]:
    path = DATA_DIR / env_name / "entry_book.json"
    doc = json.loads(path.read_text(encoding="utf-8"))
    return {entry_key(e["entry"]): e for e in doc["entries"]}


def _dump(doc) -> str:
    return json.dumps(doc, ensure_ascii=False)


def _tool_results(messages: Sequence[Mapping]) -> list:
    return [json.loads(m["content"]) for m in messages if m.get("role") == "tool"]


class MockProvider:
    """Stateless per call; safe to share between threads."""

    name = "mock"

    def __init__(self, canned: Mapping[tuple[str, str], str] | None = None,
                 entry_books: Mapping[str, Mapping[str, dict]] | None = None):
        self.canned = dict(load_canned() if canned is None else canned)
        self._books = dict(entry_books or {})

    def entry_book(self, env_name: str) -> Mapping[str, dict]:
        if env_name not in self._books:
            self._books[env_name] = load_entry_book(env_name)
        return self._books[env_name]

    def chat(self, messages: list[dict], tools: Sequence[Tool] = (), context: Mapping | None = None) -> ChatReply:
        context = context or {}
        template = TemplateId(context["template"])
        bindings = context.get("bindings", {})
        canned = self.canned.get((template.value, binding_digest(bindings.get(MAIN_BINDING[template], ""))))
        if canned is not None:
            return ChatReply(canned)
        names = {t.name for t in tools}
        if template == TemplateId.EXTRACTOR:
            return ChatReply(_dump({"knowledge_triples": []}))
        if template == TemplateId.UPDATE_PARSER:
            return self._parse_update(messages, names, context)
        if template == TemplateId.IMPACT_INFERENCER:
            return self._infer_impact(messages, names, bindings["input_item"])
        return ChatReply(_dump(self._generate(context)))

    # ---------- update parser ----------
    def _book_entries(self, context: Mapping) -> list[dict]:
        from update_pipeline import parse_update_log

        book = self.entry_book(context["env"])
        found = []
        for entry in parse_update_log(context["bindings"]["update_log"]).entries:
            hit = book.get(entry_key(entry.text))
            if hit is None:
                logger.warning("mock has no entry-book record for %r", entry.text)
                continue
            found.append(hit)
        return found

    def _parse_update(self, messages, tools: set[str], context: Mapping) -> ChatReply:
        entries = self._book_entries(context)
        ops = [op for e in entries for op in e["ops"]]
        if ops and "graph_update" in tools and not _tool_results(messages):
            return ChatReply("", tuple(
                ToolCall("graph_update", dict(op), f"call_{i}") for i, op in enumerate(ops)
            ))
        related: list[str] = []
        for e in entries:
            related.extend(item for item in e["related_items"] if item not in related)
        return ChatReply(_dump({
            "new_or_modified_triples": [
                {"Op": op["op"], "Head": op["head"], "Relation": op["relation"], "Tail": op["tail"],
                 "Category": op["category"], "HeadKind": op["head_kind"], "TailKind": op["tail_kind"]}
                for op in ops
            ],
            "related_items": related,
        }))

    # ---------- impact inferencer ----------
    def _infer_impact(self, messages, tools: set[str], item: str) -> ChatReply:
        results = _tool_results(messages)
        if "impact_set" in tools and not results:
            return ChatReply("", (ToolCall("impact_set", {"item": item}, "call_0"),))
        inferred = results[-1] if results else []
        return ChatReply(_dump({"input_item": item, "inferred_related_items": inferred}))

    # ---------- test generator ----------
    def _generate(self, context: Mapping) -> dict:
        env = load_env(context["env"])
        version = context["version"]
        if context.get("mode") == "no_kg":
            targets, task = self._read_entry(env, context["entry"])
        else:
            targets, task = list(context.get("targets", ())), context.get("task")

        goals = [g for g in (env.element_goal(t) for t in targets) if g is not None]
        if task:
            goals.append(Goal("task", task))
        state = env.reset(version, 0)
        steps: list[str] = []
        for goal in goals:
            try:
                planned = env.plan(state, [goal])
            except PlanningError as exc:
                logger.debug("mock skipped %s %s: %s", goal.kind, goal.target, exc)
                continue
            for token in planned:
                state = env.step(state, token).state
            steps.extend(planned)
        if not steps:
            steps = [env.vocabulary()[0]]

        aim = task or (targets[0] if targets else "the update")
        objective = f"Verify that the player can complete {aim}"
        if targets:
            objective += f" while exercising {', '.join(targets)}"
        return {"Test_Objective": objective + " after the update.", "Action_Steps": steps}

    @staticmethod
    def _read_entry(env, text: str) -> tuple[list[str], str]:
        """Without a graph: cataloged names in the entry text, and a task guessed from them."""
        folded = " ".join(text.casefold().split())
        hits = []
        for name in env.elements:
            for m in re.finditer(rf"\b{re.escape(name)}s?\b", folded):
                hits.append((m.start(), -len(name), m.end(), name))
        targets, taken = [], []
        for start, _, end, name in sorted(hits):
            if any(s <= start and end <= e for s, e in taken):
                continue
            taken.append((start, end))
            if name not in targets:
                targets.append(name)
        task = env.tasks[0].name
        for candidate in env.tasks:
            items = list(candidate.goal.get("have", {})) + list(candidate.goal.get("kills", {}))
            if "served" in candidate.goal:
                items.append(candidate.goal["served"])
            if any(re.search(rf"\b{re.escape(item)}\b", folded) for item in items):
                task = candidate.name
                break
        return targets, task
