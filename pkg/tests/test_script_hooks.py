from extractors import LogEvent, SourceKind, script_extract
from kg_core import Category
from script_hooks import hooks_for, inventory_delta


def _diff(position, before, after, statuses=None):
    return LogEvent(
        SourceKind.STATE_DIFF, "", 4,
        before={"position": position, "inventory": before, "statuses": dict(statuses or {})},
        after={"position": position, "inventory": after, "statuses": dict(statuses or {})},
    )


def test_inventory_delta_sorted():
    lost, gained = inventory_delta({"inventory": {"b": 2, "a": 1}}, {"inventory": {"b": 1, "c": 1, "d": 3}})
    assert lost == ["a", "b"]
    assert gained == ["c", "d"]


def test_plating_lists_recipe_parts():
    hooks = hooks_for("overcooked_lite")
    triples = hooks.on_event(LogEvent(SourceKind.GAME_LOG, "the player plates Garden Salad", 9))
    assert [t.key for t in triples] == [
        ("garden salad", "requires", "chopped lettuce"),
        ("garden salad", "requires", "chopped tomato"),
    ]
    assert {t.category for t in triples} == {Category.GAME_ELEMENT_INTERACTION}


def test_plating_unknown_dish_yields_nothing():
    hooks = hooks_for("overcooked_lite")
    assert hooks.on_event(LogEvent(SourceKind.GAME_LOG, "the player plates steak dish")) == []


def test_chopping_board_diff_becomes_transition():
    hooks = hooks_for("overcooked_lite")
    triples = script_extract(hooks, _diff("1,0", {"tomato": 1}, {"chopped tomato": 1}))
    assert [(t.key, t.category) for t in triples] == [
        (("tomato", "chopped_to", "chopped tomato"), Category.CAUSAL_TRANSITION)
    ]


def test_diff_away_from_stations_is_ignored():
    hooks = hooks_for("overcooked_lite")
    assert script_extract(hooks, _diff("0,0", {}, {"tomato": 1})) == []


def test_mining_checked_against_base_tools():
    hooks = hooks_for("craftworld")
    ok = hooks.on_event(LogEvent(SourceKind.GAME_LOG, "the player mines iron ore with stone pickaxe"))
    assert [t.key for t in ok] == [("stone pickaxe", "mines", "iron ore")]
    assert hooks.on_event(LogEvent(SourceKind.GAME_LOG, "the player mines diamond with stone pickaxe")) == []
    assert [t.key for t in hooks.on_event(LogEvent(SourceKind.GAME_LOG, "an iron pickaxe interacts with diamond"))] == [
        ("iron pickaxe", "mines", "diamond")
    ]


def test_lit_furnace_diff_becomes_smelting():
    hooks = hooks_for("craftworld")
    event = _diff("base", {"sand": 1, "coal": 1}, {"glass": 1}, statuses={"furnace": "lit"})
    assert [t.key for t in script_extract(hooks, event)] == [("sand", "smelted_to", "glass")]
    cold = _diff("base", {"sand": 1}, {"glass": 1})
    assert script_extract(hooks, cold) == []


def test_lit_furnace_cooks_food():
    hooks = hooks_for("craftworld")
    event = _diff("base", {"raw porkchop": 1, "coal": 2}, {"cooked porkchop": 1, "coal": 1},
                  statuses={"furnace": "lit"})
    assert [(t.key, t.category) for t in script_extract(hooks, event)] == [
        (("raw porkchop", "cooked_to", "cooked porkchop"), Category.CAUSAL_TRANSITION)
    ]
