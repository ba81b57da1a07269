import json

import pytest

from errors import MalformedDocument
from extractors import (
    ExtractorKind, LogEvent, ScriptHooks, SourceKind, build_graph, dump_batch, extract_all, load_batch,
    load_events, load_rule_config, parse_rule_config, rule_extract,
)
from game_envs import DATA_DIR
from kg_core import Category, Triple
from llm_gateway import make_gateway
from script_hooks import hooks_for

ENVS = ("overcooked_lite", "craftworld")


def _rules(env):
    return load_rule_config(DATA_DIR / env / "extractor_rules.json")


@pytest.mark.parametrize("env", ENVS)
def test_exploration_fixture_matches_golden(env):
    events = load_events(DATA_DIR / env / "exploration.jsonl")
    batch = extract_all(_rules(env), hooks_for(env), make_gateway("mock"), events)
    golden = json.loads((DATA_DIR / env / "exploration_golden.json").read_text(encoding="utf-8"))
    assert batch.to_dict() == golden
    assert batch.categories() == set(Category)


@pytest.mark.parametrize("env", ENVS)
def test_golden_bytes_are_reproduced(env, tmp_path):
    events = load_events(DATA_DIR / env / "exploration.jsonl")
    batch = extract_all(_rules(env), hooks_for(env), make_gateway("mock"), events)
    out = tmp_path / "batch.json"
    dump_batch(batch, out)
    assert out.read_bytes() == (DATA_DIR / env / "exploration_golden.json").read_bytes()
    assert load_batch(out) == batch


def test_rule_extract_chop_line():
    event = LogEvent(SourceKind.GAME_LOG, "the player chops tomato into chopped tomato on the chopping board with the knife", 3)
    keys = [t.key for t in rule_extract(_rules("overcooked_lite"), event)]
    assert keys == [
        ("tomato", "chopped_to", "chopped tomato"),
        ("chop", "performed_at", "chopping board"),
        ("chopping board", "used_with", "knife"),
    ]


def test_task_name_uses_whole_match():
    event = LogEvent(SourceKind.TASK_NAME, "Make Steak Dish")
    assert rule_extract(_rules("overcooked_lite"), event) == [
        Triple("make steak dish", "depends_on", "steak dish", Category.TASK_DEPENDENCY)
    ]


def test_unmatched_event_yields_nothing():
    event = LogEvent(SourceKind.GAME_LOG, "the player waits")
    assert rule_extract(_rules("overcooked_lite"), event) == []


def _rule(**over):
    rule = {"pattern": "^(.+) opens$", "head": "$1", "relation": "opens", "tail": "door",
            "category": "GameElementInteraction", "head_kind": "Element", "tail_kind": "Element"}
    rule.update(over)
    return rule


@pytest.mark.parametrize("doc,field", [
    ({"sources": {"Chat": [_rule()]}}, "sources.Chat"),
    ({"sources": {"GameLog": []}}, "sources.GameLog"),
    ({"sources": {"GameLog": [_rule(pattern="no groups")]}}, "sources.GameLog[0].pattern"),
    ({"sources": {"GameLog": [_rule(tail="$2")]}}, "sources.GameLog[0]"),
    ({"sources": {"GameLog": [_rule(category="Nonsense")]}}, "sources.GameLog[0]"),
    ({"sources": {"GameLog": [_rule(pattern="(unclosed")]}}, "sources.GameLog[0]"),
    ({}, "sources"),
])
def test_rule_config_validation(doc, field):
    with pytest.raises(MalformedDocument) as info:
        parse_rule_config(doc)
    assert info.value.field == field


def test_failing_script_hook_is_recorded_and_extraction_continues():
    def broken(event):
        raise KeyError("boom")

    hooks = ScriptHooks(broken, lambda before, after: [])
    events = [
        LogEvent(SourceKind.GAME_LOG, "the player picks up tomato", 1),
        LogEvent(SourceKind.TASK_NAME, "Make Tomato Soup"),
    ]
    batch = extract_all(_rules("overcooked_lite"), hooks, None, events)
    assert [e["at"] for e in batch.errors] == [0]
    assert batch.errors[0]["error"] == "ScriptFailure"
    assert {item.event_index for item in batch.items} == {0, 1}
    assert all(item.extractor == ExtractorKind.RULE for item in batch.items)


def test_llm_triple_outside_vocabulary_is_dropped():
    events = [LogEvent(SourceKind.UI_PROMPT, "The chef can carry two items at a time.")]
    batch = extract_all(_rules("overcooked_lite"), None, make_gateway("mock"), events)
    assert batch.items == ()
    assert batch.errors == ({"at": 0, "error": "SchemaError",
                             "message": "knowledge_triples[0].Relation: relation outside the vocabulary"},)


def test_state_diff_needs_both_snapshots():
    with pytest.raises(ValueError):
        LogEvent(SourceKind.STATE_DIFF, "", 1, before={"inventory": {}})


def test_build_graph_from_golden_batch():
    batch = load_batch(DATA_DIR / "craftworld" / "exploration_golden.json")
    graph, errors = build_graph(batch, "v1.0.0")
    assert errors == []
    assert graph.version_tag == "v1.0.0"
    assert graph.edge_count() == len({item.triple.key for item in batch.items})


def test_craft_line_with_plural_ingredient():
    event = LogEvent(SourceKind.GAME_LOG, "the player uses wooden planks to craft stick", 3)
    assert [(t.key, t.category) for t in rule_extract(_rules("craftworld"), event)] == [
        (Triple("Wooden Plank", "crafts", "Stick").key, Category.GAME_ELEMENT_INTERACTION)
    ]
    glass = LogEvent(SourceKind.GAME_LOG, "the player uses glass to craft bottle", 4)
    assert [t.key for t in rule_extract(_rules("craftworld"), glass)] == [("glass", "crafts", "bottle")]


def test_portal_prompt_goes_through_the_llm_extractor():
    events = [LogEvent(SourceKind.UI_PROMPT, "Touching the Nether portal will teleport you to the Nether.")]
    batch = extract_all(_rules("craftworld"), None, make_gateway("mock"), events)
    assert batch.errors == ()
    (item,) = batch.items
    assert item.triple == Triple("Overworld", "Touching Nether Portal", "Nether")
    assert item.triple.key == ("overworld", "touching_nether_portal", "nether")
    assert (item.extractor, item.triple.category) == (ExtractorKind.LLM, Category.SCENE_TRANSITION)
