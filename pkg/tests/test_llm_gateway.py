import json

import numpy as np
import pytest
import requests

from config import ProviderConfig
from errors import ConfigError, ProviderError, ProviderTimeout, SchemaError, ToolRoundsExceeded, UnboundPlaceholder, UnregisteredTool
from kg_core import KnowledgeGraph, TraversalPolicy, query
from llm_gateway import (
    REMINDER, CasePayload, ChatReply, DeltaPayload, Gateway, HttpProvider, TemplateId, ToolCall, complete,
    graph_update_tool, impact_set_tool, load_template, parse_contract, render,
)

VALID = {
    TemplateId.EXTRACTOR: {"knowledge_triples": [{"Head": "a", "Relation": "r", "Tail": "b"}]},
    TemplateId.UPDATE_PARSER: {"new_or_modified_triples": [{"Head": "a", "Relation": "r", "Tail": "b"}],
                               "related_items": ["a"]},
    TemplateId.IMPACT_INFERENCER: {"input_item": "a", "inferred_related_items": ["b", "c"]},
    TemplateId.TEST_GENERATOR: {"Test_Objective": "serve soup", "Action_Steps": ["pick tomato", "submit"]},
}


class Scripted:
    """Provider replaying a fixed list of replies."""

    name = "scripted"

    def __init__(self, replies):
        self.replies = list(replies)
        self.seen = []

    def chat(self, messages, tools=(), context=None):
        self.seen.append([dict(m) for m in messages])
        return self.replies.pop(0)


# ---------- templates ----------
def test_templates_render_their_slots():
    for template_id in TemplateId:
        assert len(load_template(template_id).placeholders) >= 1
    prompt = render(TemplateId.TEST_GENERATOR, {"impact_description": "steak was added"})
    assert prompt.endswith("Input: steak was added")
    assert '"Action_Steps": ["...",]' in prompt


def test_unbound_placeholder():
    with pytest.raises(UnboundPlaceholder) as info:
        render(TemplateId.EXTRACTOR, {"input_text": "x"})
    assert info.value.name == "relations"


# ---------- contracts ----------
def test_parse_contract_accepts_each_shape():
    for template_id, doc in VALID.items():
        parse_contract(template_id, json.dumps(doc))
    case = parse_contract(TemplateId.TEST_GENERATOR, "```json\n" + json.dumps(VALID[TemplateId.TEST_GENERATOR]) + "\n```")
    assert case == CasePayload("serve soup", ("pick tomato", "submit"))
    delta = parse_contract(TemplateId.UPDATE_PARSER, json.dumps(VALID[TemplateId.UPDATE_PARSER]))
    assert isinstance(delta, DeltaPayload)
    assert delta.triples[0].op == "insert"


def test_parse_contract_reports_paths():
    with pytest.raises(SchemaError) as info:
        parse_contract(TemplateId.TEST_GENERATOR, '{"Test_Objective": "x", "Action_Steps": []}')
    assert info.value.path == "Action_Steps"
    with pytest.raises(SchemaError) as info:
        parse_contract(TemplateId.EXTRACTOR, '{"knowledge_triples": [{"Head": "a", "Relation": "r"}]}')
    assert info.value.path == "knowledge_triples[0].Tail"
    with pytest.raises(SchemaError) as info:
        parse_contract(TemplateId.UPDATE_PARSER,
                       '{"new_or_modified_triples": [{"Head": "a", "Relation": "r", "Tail": "b", "Op": "swap"}],'
                       ' "related_items": []}')
    assert info.value.path == "new_or_modified_triples[0].Op"


def _mutate(rng: np.random.Generator, doc: dict) -> str:
    text = json.dumps(doc)
    kind = int(rng.integers(6))
    if kind == 0:
        return text[:int(rng.integers(1, len(text)))]
    if kind == 1:
        return "Sure, here is the result: " + text
    if kind == 2:
        return text + "\nLet me know if you need anything else."
    bad = json.loads(text)
    key = sorted(bad)[int(rng.integers(len(bad)))]
    if kind == 3:
        bad[key.upper() + "_X"] = bad.pop(key)
    elif kind == 4:
        bad["explanation"] = "because"
    else:
        bad[key] = 42
    return json.dumps(bad)


def test_contract_fuzz_rejects_every_malformed_reply():
    rng = np.random.default_rng(7)
    templates = list(VALID)
    for i in range(200):
        template_id = templates[i % len(templates)]
        reply = _mutate(rng, VALID[template_id])
        with pytest.raises(SchemaError):
            parse_contract(template_id, reply)


# ---------- sessions ----------
def test_gateway_reasks_once_with_reminder():
    good = json.dumps(VALID[TemplateId.IMPACT_INFERENCER])
    provider = Scripted([ChatReply("not json"), ChatReply(good)])
    gateway = Gateway(provider)
    answer = gateway.ask(TemplateId.IMPACT_INFERENCER, {"input_item": "a"})
    assert answer.payload.inferred_related_items == ("b", "c")
    assert answer.prompt.endswith(REMINDER)
    assert gateway.calls == ["impact_inferencer", "impact_inferencer"]


def test_gateway_gives_up_after_second_bad_reply():
    gateway = Gateway(Scripted([ChatReply("nope"), ChatReply("{}")]))
    with pytest.raises(SchemaError):
        gateway.ask(TemplateId.IMPACT_INFERENCER, {"input_item": "a"})


def test_tool_session_executes_calls_and_feeds_results_back():
    graph = KnowledgeGraph()
    tool = graph_update_tool(graph)
    call = ToolCall("graph_update", {"op": "insert", "head": "Steak", "relation": "cooked to", "tail": "Seared Steak",
                                     "category": "CausalTransition"})
    provider = Scripted([ChatReply("", (call,)), ChatReply("done")])
    done = complete(provider, "prompt", [tool])
    assert done.text == "done"
    assert [inv.result for inv in done.tool_invocations] == [{"changed": True}]
    assert [t.key for t in query(graph, head="steak")] == [("steak", "cooked_to", "seared steak")]
    tool_message = provider.seen[1][-1]
    assert tool_message["role"] == "tool"
    assert json.loads(tool_message["content"]) == {"changed": True}


def test_tool_rounds_are_capped():
    tool = graph_update_tool(KnowledgeGraph())
    call = ToolCall("graph_update", {"op": "remove", "head": "a", "relation": "r", "tail": "b"})
    provider = Scripted([ChatReply("", (call,))] * 3)
    with pytest.raises(ToolRoundsExceeded):
        complete(provider, "prompt", [tool], max_tool_rounds=2)


def test_unregistered_tool_and_bad_arguments():
    with pytest.raises(UnregisteredTool):
        complete(Scripted([ChatReply("", (ToolCall("delete_everything", {}),))]), "prompt", [])
    tool = graph_update_tool(KnowledgeGraph())
    with pytest.raises(SchemaError):
        complete(Scripted([ChatReply("", (ToolCall("graph_update", {"op": "insert"}),))]), "prompt", [tool])


def test_impact_tool_counts_traversals():
    graph = KnowledgeGraph()
    complete(Scripted([ChatReply("", (ToolCall("graph_update", {"op": "insert", "head": "a", "relation": "r",
                                                                "tail": "b"}),)), ChatReply("ok")]),
             "p", [graph_update_tool(graph)])
    counter = []
    tool = impact_set_tool(graph, TraversalPolicy(max_hops=1), counter)
    assert tool.handler({"item": "B"}) == ["a"]
    assert counter == ["b"]


# ---------- http provider ----------
class FakeResponse:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self.text = body if isinstance(body, str) else json.dumps(body)


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def post(self, url, headers, json, timeout):
        self.requests.append({"url": url, "headers": headers, "json": json, "timeout": timeout})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _provider(outcomes, **over):
    config = ProviderConfig(id="local", endpoint="http://llm.local/v1/", model="m-1", max_retries=2, **over)
    sleeps = []
    return HttpProvider(config, FakeSession(outcomes), sleeps.append), sleeps


def _completion(content="", tool_calls=None):
    message = {"role": "assistant", "content": content}
    if tool_calls:
        message["tool_calls"] = tool_calls
    return {"choices": [{"message": message}]}


def test_http_provider_retries_server_errors(monkeypatch):
    monkeypatch.setenv("PLAYTEST_LLM_TOKEN", "secret")
    provider, sleeps = _provider([FakeResponse(503, "busy"), requests.Timeout(), FakeResponse(200, _completion("hi"))])
    reply = provider.chat([{"role": "user", "content": "x"}])
    assert reply == ChatReply("hi")
    assert sleeps == [2, 4]
    sent = provider.session.requests[-1]
    assert sent["url"] == "http://llm.local/v1/chat/completions"
    assert sent["headers"]["Authorization"] == "Bearer secret"
    assert sent["json"]["model"] == "m-1"


def test_http_provider_surfaces_last_failure(monkeypatch):
    monkeypatch.setenv("PLAYTEST_LLM_TOKEN", "secret")
    provider, _ = _provider([requests.Timeout()] * 3)
    with pytest.raises(ProviderTimeout):
        provider.chat([{"role": "user", "content": "x"}])
    provider, _ = _provider([FakeResponse(401, "denied")])
    with pytest.raises(ProviderError) as info:
        provider.chat([{"role": "user", "content": "x"}])
    assert info.value.raw_body == "denied"


def test_http_provider_needs_token(monkeypatch):
    monkeypatch.delenv("PLAYTEST_LLM_TOKEN", raising=False)
    provider, _ = _provider([])
    with pytest.raises(ConfigError):
        provider.chat([{"role": "user", "content": "x"}])


def test_http_provider_native_and_emulated_tools(monkeypatch):
    monkeypatch.setenv("PLAYTEST_LLM_TOKEN", "secret")
    tool = graph_update_tool(KnowledgeGraph())
    native_call = {"id": "c1", "type": "function",
                   "function": {"name": "graph_update", "arguments": '{"op": "insert", "head": "a", "relation": "r", "tail": "b"}'}}
    provider, _ = _provider([FakeResponse(200, _completion("", [native_call]))], native_tools=True)
    reply = provider.chat([{"role": "user", "content": "x"}], [tool])
    assert reply.tool_calls == (ToolCall("graph_update", {"op": "insert", "head": "a", "relation": "r", "tail": "b"}, "c1"),)
    assert provider.session.requests[0]["json"]["tools"][0]["function"]["name"] == "graph_update"

    fenced = '```tool_call\n{"name": "graph_update", "arguments": {"op": "remove", "head": "a", "relation": "r", "tail": "b"}}\n```'
    provider, _ = _provider([FakeResponse(200, _completion(fenced))])
    reply = provider.chat([{"role": "user", "content": "x"}], [tool])
    assert reply.text == ""
    assert reply.tool_calls[0].arguments["op"] == "remove"
    assert provider.session.requests[0]["json"]["messages"][0]["role"] == "system"


def test_http_provider_rejects_malformed_payload(monkeypatch):
    monkeypatch.setenv("PLAYTEST_LLM_TOKEN", "secret")
    provider, _ = _provider([FakeResponse(200, {"choices": []})])
    with pytest.raises(ProviderError):
        provider.chat([{"role": "user", "content": "x"}])
