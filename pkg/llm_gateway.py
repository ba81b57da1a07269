from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import requests

from errors import (
    ConfigError, PlaytestError, ProviderError, ProviderTimeout, SchemaError, ToolRoundsExceeded,
    UnboundPlaceholder, UnregisteredTool,
)
from kg_core import (
    Category, Direction, KnowledgeGraph, NodeKind, TraversalPolicy, Triple, impact_hops,
    insert_triple, normalize_name, remove_triple,
)

logger = logging.getLogger(__name__)

PROMPT_DIR = Path(__file__).resolve().parent / "data" / "prompts"
REMINDER = "\n\nOutput valid JSON only, exactly in the structure given above."
_SLOT = re.compile(r"\{([a-z_]+)\}")
_FENCE = re.compile(r"^```[A-Za-z]*\n(.*)\n```$", re.DOTALL)
_TOOL_FENCE = re.compile(r"```tool_call\n(.*?)\n```", re.DOTALL)


class TemplateId(str, Enum):
    EXTRACTOR = "extractor"
    UPDATE_PARSER = "update_parser"
    IMPACT_INFERENCER = "impact_inferencer"
    TEST_GENERATOR = "test_generator"


# binding whose digest keys canned mock responses
MAIN_BINDING = {
    TemplateId.EXTRACTOR: "input_text",
    TemplateId.UPDATE_PARSER: "update_log",
    TemplateId.IMPACT_INFERENCER: "input_item",
    TemplateId.TEST_GENERATOR: "impact_description",
}


# ---------- templates ----------
@dataclass(frozen=True)
class PromptTemplate:
    id: TemplateId
    body: str

    @property
    def placeholders(self) -> list[str]:
        return sorted(set(_SLOT.findall(self.body)))

    def render(self, bindings: Mapping[str, Any]) -> str:
        def fill(m: re.Match) -> str:
            if m.group(1) not in bindings:
                raise UnboundPlaceholder(m.group(1))
            return str(bindings[m.group(1)])

        return _SLOT.sub(fill, self.body)


@lru_cache(maxsize=None)
def load_template(template_id: TemplateId) -> PromptTemplate:
    template_id = TemplateId(template_id)
    body = (PROMPT_DIR / f"{template_id.value}.txt").read_text(encoding="utf-8")
    return PromptTemplate(template_id, body)


def render(template_id: TemplateId, bindings: Mapping[str, Any]) -> str:
    return load_template(template_id).render(bindings)


# ---------- output contracts ----------
@dataclass(frozen=True)
class TriplePayload:
    head: str
    relation: str
    tail: str
    op: str = "insert"
    category: str | None = None
    head_kind: str | None = None
    tail_kind: str | None = None


@dataclass(frozen=True)
class DeltaPayload:
    triples: tuple[TriplePayload, ...]
    related_items: tuple[str, ...]


@dataclass(frozen=True)
class ImpactPayload:
    input_item: str
    inferred_related_items: tuple[str, ...]


@dataclass(frozen=True)
class CasePayload:
    test_objective: str
    action_steps: tuple[str, ...]


def _strip_fence(text: str) -> str:
    body = text.strip()
    m = _FENCE.match(body)
    return m.group(1).strip() if m else body


def _obj(value, path: str, required: Sequence[str], optional: Sequence[str] = ()) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(path or "$", "expected an object")
    for key in required:
        if key not in value:
            raise SchemaError(f"{path}.{key}" if path else key, "missing")
    extra = sorted(set(value) - set(required) - set(optional))
    if extra:
        raise SchemaError(f"{path}.{extra[0]}" if path else extra[0], "unexpected key")
    return value


def _text(value, path: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise SchemaError(path, "expected a non-empty string")
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(path, "expected an array")
    return value


def _triples(value, path: str, extended: bool) -> tuple[TriplePayload, ...]:
    optional = ("Op", "Category", "HeadKind", "TailKind") if extended else ()
    out = []
    for i, raw in enumerate(_list(value, path)):
        at = f"{path}[{i}]"
        raw = _obj(raw, at, ("Head", "Relation", "Tail"), optional)
        op = raw.get("Op", "insert")
        if op not in ("insert", "remove"):
            raise SchemaError(f"{at}.Op", "expected insert or remove")
        for key, enum in (("Category", Category), ("HeadKind", NodeKind), ("TailKind", NodeKind)):
            if key in raw:
                try:
                    enum(raw[key])
                except ValueError:
                    raise SchemaError(f"{at}.{key}", f"unknown value {raw[key]!r}") from None
        out.append(TriplePayload(
            _text(raw["Head"], f"{at}.Head"),
            _text(raw["Relation"], f"{at}.Relation"),
            _text(raw["Tail"], f"{at}.Tail"),
            op, raw.get("Category"), raw.get("HeadKind"), raw.get("TailKind"),
        ))
    return tuple(out)


def parse_contract(template_id: TemplateId, text: str):
    """Strictly parse a model reply into the payload for ``template_id``; raises SchemaError."""
    template_id = TemplateId(template_id)
    if not isinstance(text, str):
        raise SchemaError("$", "reply is not text")
    try:
        doc = json.loads(_strip_fence(text))
    except (ValueError, RecursionError) as exc:
        raise SchemaError("$", f"not a single JSON document: {exc}") from None

    if template_id == TemplateId.EXTRACTOR:
        doc = _obj(doc, "", ("knowledge_triples",))
        return list(_triples(doc["knowledge_triples"], "knowledge_triples", extended=False))
    if template_id == TemplateId.UPDATE_PARSER:
        doc = _obj(doc, "", ("new_or_modified_triples", "related_items"))
        items = tuple(_text(v, f"related_items[{i}]") for i, v in enumerate(_list(doc["related_items"], "related_items")))
        return DeltaPayload(_triples(doc["new_or_modified_triples"], "new_or_modified_triples", extended=True), items)
    if template_id == TemplateId.IMPACT_INFERENCER:
        doc = _obj(doc, "", ("input_item", "inferred_related_items"))
        items = _list(doc["inferred_related_items"], "inferred_related_items")
        return ImpactPayload(
            _text(doc["input_item"], "input_item"),
            tuple(_text(v, f"inferred_related_items[{i}]") for i, v in enumerate(items)),
        )
    doc = _obj(doc, "", ("Test_Objective", "Action_Steps"))
    steps = _list(doc["Action_Steps"], "Action_Steps")
    if not steps:
        raise SchemaError("Action_Steps", "must not be empty")
    return CasePayload(
        _text(doc["Test_Objective"], "Test_Objective"),
        tuple(_text(v, f"Action_Steps[{i}]") for i, v in enumerate(steps)),
    )


# ---------- tools ----------
@dataclass(frozen=True)
class Tool:
    name: str
    description: str
    parameters: Mapping[str, type]
    handler: Callable[[dict], Any]
    required: tuple[str, ...] = ()

    def schema(self) -> dict:
        kinds = {str: "string", int: "integer", float: "number", bool: "boolean"}
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": {k: {"type": kinds[t]} for k, t in self.parameters.items()},
                    "required": list(self.required),
                },
            },
        }

    def validate(self, arguments: Mapping) -> dict:
        if not isinstance(arguments, Mapping):
            raise SchemaError(self.name, "tool arguments must be an object")
        for key in self.required:
            if key not in arguments:
                raise SchemaError(f"{self.name}.{key}", "missing")
        for key, value in arguments.items():
            if key not in self.parameters:
                raise SchemaError(f"{self.name}.{key}", "unexpected argument")
            if not isinstance(value, self.parameters[key]):
                raise SchemaError(f"{self.name}.{key}", f"expected {self.parameters[key].__name__}")
        return dict(arguments)


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Mapping
    id: str = ""


@dataclass(frozen=True)
class ToolInvocation:
    name: str
    arguments: Mapping
    result: Any

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": dict(self.arguments), "result": self.result}


def graph_update_tool(graph: KnowledgeGraph) -> Tool:
    """Symbolic insert/remove on ``graph``; hand it a scratch copy when only recording."""

    def handle(args: dict) -> dict:
        if args["op"] not in ("insert", "remove"):
            raise SchemaError("graph_update.op", "expected insert or remove")
        try:
            triple = Triple(args["head"], args["relation"], args["tail"],
                            Category(args.get("category", Category.GAME_ELEMENT_INTERACTION.value)))
            if args["op"] == "remove":
                return {"changed": remove_triple(graph, triple)}
            changed = insert_triple(graph, triple, args.get("head_kind", NodeKind.ELEMENT.value),
                                    args.get("tail_kind", NodeKind.ELEMENT.value))
        except (ValueError, PlaytestError) as exc:
            # reported back to the model; the session goes on
            return {"changed": False, "error": str(exc)}
        return {"changed": changed}

    return Tool(
        name="graph_update",
        description="Insert or remove one (head, relation, tail) triple in the game knowledge graph.",
        parameters={"op": str, "head": str, "relation": str, "tail": str, "category": str,
                    "head_kind": str, "tail_kind": str},
        handler=handle,
        required=("op", "head", "relation", "tail"),
    )


def impact_set_tool(graph: KnowledgeGraph, policy: TraversalPolicy, counter: list | None = None) -> Tool:
    def handle(args: dict) -> list[str]:
        local = TraversalPolicy(
            max_hops=int(args.get("max_hops", policy.max_hops)),
            direction=Direction(args.get("direction", policy.direction.value)),
            relation_filter=policy.relation_filter,
        )
        if counter is not None:
            counter.append(normalize_name(args["item"]))
        return sorted(impact_hops(graph, args["item"], local))

    return Tool(
        name="impact_set",
        description="Nodes reachable from an item within max_hops along the given direction.",
        parameters={"item": str, "max_hops": int, "direction": str},
        handler=handle,
        required=("item",),
    )


# ---------- providers ----------
@dataclass(frozen=True)
class ChatReply:
    text: str
    tool_calls: tuple[ToolCall, ...] = ()


class Provider(Protocol):
    name: str

    def chat(self, messages: list[dict], tools: Sequence[Tool] = (), context: Mapping | None = None) -> ChatReply:
        ...


def _tool_prompt(tools: Sequence[Tool]) -> str:
    specs = json.dumps([t.schema()["function"] for t in tools], indent=2)
    return (
        "You can call these tools. To call one, reply with a fenced block\n"
        "```tool_call\n{\"name\": \"...\", \"arguments\": {...}}\n```\n"
        "one block per call, and nothing else. After the tool results arrive, give your final answer.\n"
        f"Tools:\n{specs}"
    )


class HttpProvider:
    """OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(self, config, session: requests.Session | None = None, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.name = config.model
        self.session = session or requests.Session()
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))

    def _token(self) -> str:
        token = os.environ.get(self.config.token_env)
        if not token:
            raise ConfigError(f"environment variable {self.config.token_env} is not set")
        return token

    def chat(self, messages: list[dict], tools: Sequence[Tool] = (), context: Mapping | None = None) -> ChatReply:
        payload: dict[str, Any] = {
            "model": self.config.model,
            "messages": list(messages),
            "temperature": self.config.temperature,
        }
        if tools and self.config.native_tools:
            payload["tools"] = [t.schema() for t in tools]
            payload["tool_choice"] = "auto"
        elif tools:
            payload["messages"] = [{"role": "system", "content": _tool_prompt(tools)}] + payload["messages"]
        body = self._post(payload)
        return self._reply(body)

    def _post(self, payload: dict) -> str:
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json", "Authorization": f"Bearer {self._token()}"}
        last: ProviderError | None = None
        for attempt in range(1 + self.config.max_retries):
            if attempt:
                self.sleep(2 ** attempt)
            try:
                with self._slots:
                    resp = self.session.post(url, headers=headers, json=payload, timeout=self.config.timeout)
            except requests.Timeout:
                last = ProviderTimeout(f"{self.config.model} timed out after {self.config.timeout}s")
                logger.warning("attempt %d to %s: timeout", attempt + 1, self.config.endpoint)
                continue
            except requests.ConnectionError as exc:
                last = ProviderError(f"cannot reach {self.config.endpoint}: {exc}")
                logger.warning("attempt %d to %s: connection error", attempt + 1, self.config.endpoint)
                continue
            if resp.status_code >= 500:
                last = ProviderError(f"{self.config.endpoint} answered {resp.status_code}", raw_body=resp.text)
                logger.warning("attempt %d to %s: HTTP %d", attempt + 1, self.config.endpoint, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"{self.config.endpoint} answered {resp.status_code}", raw_body=resp.text)
            return resp.text
        raise last

    def _reply(self, body: str) -> ChatReply:
        try:
            message = json.loads(body)["choices"][0]["message"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProviderError("malformed chat-completion payload", raw_body=body) from None
        text = message.get("content") or ""
        calls = []
        for raw in message.get("tool_calls") or ():
            try:
                calls.append(ToolCall(raw["function"]["name"], json.loads(raw["function"].get("arguments") or "{}"),
                                      raw.get("id", "")))
            except (ValueError, KeyError, TypeError):
                raise ProviderError("malformed tool call", raw_body=body) from None
        if not calls:
            for block in _TOOL_FENCE.findall(text):
                try:
                    raw = json.loads(block)
                    calls.append(ToolCall(raw["name"], raw.get("arguments", {})))
                except (ValueError, KeyError, TypeError):
                    raise ProviderError("malformed emulated tool call", raw_body=body) from None
            if calls:
                text = ""
        return ChatReply(text, tuple(calls))


# ---------- sessions ----------
@dataclass(frozen=True)
class Completion:
    text: str
    tool_invocations: tuple[ToolInvocation, ...] = ()


def complete(provider: Provider, prompt: str, tools: Sequence[Tool] = (), context: Mapping | None = None,
             max_tool_rounds: int = 8) -> Completion:
    """One chat session; tool calls are executed and fed back until the model answers in text."""
    registry = {t.name: t for t in tools}
    messages: list[dict] = [{"role": "user", "content": prompt}]
    invocations: list[ToolInvocation] = []
    rounds = 0
    while True:
        reply = provider.chat(messages, tools, context)
        if not reply.tool_calls:
            return Completion(reply.text, tuple(invocations))
        rounds += 1
        if rounds > max_tool_rounds:
            raise ToolRoundsExceeded(f"model kept calling tools after {max_tool_rounds} rounds")
        messages.append({
            "role": "assistant",
            "content": reply.text,
            "tool_calls": [
                {"id": c.id or f"call_{rounds}_{i}", "type": "function",
                 "function": {"name": c.name, "arguments": json.dumps(dict(c.arguments), sort_keys=True)}}
                for i, c in enumerate(reply.tool_calls)
            ],
        })
        for i, call in enumerate(reply.tool_calls):
            tool = registry.get(call.name)
            if tool is None:
                raise UnregisteredTool(f"model called unregistered tool {call.name!r}")
            args = tool.validate(call.arguments)
            result = tool.handler(args)
            invocations.append(ToolInvocation(call.name, args, result))
            messages.append({"role": "tool", "tool_call_id": call.id or f"call_{rounds}_{i}",
                             "content": json.dumps(result, sort_keys=True)})


@dataclass(frozen=True)
class Answer:
    payload: Any
    tool_invocations: tuple[ToolInvocation, ...]
    prompt: str
    text: str


@dataclass
class Gateway:
    provider: Provider
    max_tool_rounds: int = 8
    label: str = "mock"
    calls: list = field(default_factory=list, repr=False)

    def ask(self, template_id: TemplateId, bindings: Mapping[str, Any], tools: Sequence[Tool] = (),
            context: Mapping | None = None, validate: Callable[[Any], None] | None = None,
            retry_on: tuple[type[Exception], ...] = ()) -> Answer:
        """Render, complete and parse; one re-ask on a SchemaError or a ``retry_on`` error from ``validate``."""
        template_id = TemplateId(template_id)
        prompt = render(template_id, bindings)
        ctx = {"template": template_id.value, "bindings": dict(bindings), **(context or {})}
        last_error: Exception | None = None
        for attempt in range(2):
            text_prompt = prompt if attempt == 0 else prompt + REMINDER
            done = complete(self.provider, text_prompt, tools, {**ctx, "attempt": attempt}, self.max_tool_rounds)
            self.calls.append(template_id.value)
            try:
                payload = parse_contract(template_id, done.text)
                if validate is not None:
                    validate(payload)
            except (SchemaError, *retry_on) as exc:
                logger.warning("%s reply rejected (attempt %d): %s", template_id.value, attempt + 1, exc)
                last_error = exc
                continue
            return Answer(payload, done.tool_invocations, text_prompt, done.text)
        raise last_error


def make_gateway(provider: str = "mock", providers: Mapping | None = None, max_tool_rounds: int = 8) -> Gateway:
    if provider == "mock":
        from mock_llm import MockProvider

        return Gateway(MockProvider(), max_tool_rounds, "mock")
    try:
        config = (providers or {})[provider]
    except KeyError:
        raise ConfigError(f"no provider configured under {provider!r}") from None
    logger.info("using provider %s (%s at %s)", provider, config.model, config.endpoint)
    return Gateway(HttpProvider(config), max_tool_rounds, config.model)
