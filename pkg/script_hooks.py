from __future__ import annotations

import logging
import re
from typing import Callable, Mapping

from extractors import LogEvent, ScriptHooks
from kg_core import Category, Triple

logger = logging.getLogger(__name__)

_PLATES = re.compile(r"^the player plates (.+)$", re.IGNORECASE)
_MINES = re.compile(r"^the player mines (.+?) with (.+)$", re.IGNORECASE)
_INTERACTS = re.compile(r"^an? (.+?) interacts with (.+)$", re.IGNORECASE)


def inventory_delta(before: Mapping, after: Mapping) -> tuple[list[str], list[str]]:
    """Items whose count fell and items whose count rose, each sorted."""
    prev, curr = dict(before.get("inventory", {})), dict(after.get("inventory", {}))
    lost = sorted(k for k in prev if curr.get(k, 0) < prev[k])
    gained = sorted(k for k in curr if curr[k] > prev.get(k, 0))
    return lost, gained


# ---------- overcooked-lite ----------
def overcooked_hooks(catalog: Mapping, table: Mapping) -> ScriptHooks:
    recipes = table["recipes"]
    stations = catalog["stations"]
    transforms = {"chopping board": ("chop", "chopped_to"), "stove": ("cook", "cooked_to")}

    def on_event(event: LogEvent) -> list[Triple]:
        m = _PLATES.match(event.text)
        if not m:
            return []
        dish = " ".join(m.group(1).casefold().split())
        if dish not in recipes:
            return []
        return [Triple(dish, "requires", part, Category.GAME_ELEMENT_INTERACTION)
                for part in sorted(set(recipes[dish]))]

    def on_state_change(before: Mapping, after: Mapping) -> list[Triple]:
        station = stations.get(after.get("position", ""))
        if station not in transforms:
            return []
        kind, relation = transforms[station]
        lost, gained = inventory_delta(before, after)
        return [Triple(item, relation, table[kind][item], Category.CAUSAL_TRANSITION)
                for item in lost if table[kind].get(item) in gained]

    return ScriptHooks(on_event, on_state_change)


# ---------- craftworld ----------
def craftworld_hooks(catalog: Mapping, table: Mapping) -> ScriptHooks:
    blocks = table["blocks"]
    smelt = table["smelt"]
    food = set(table.get("food", ()))

    def mines(tool: str, block: str) -> list[Triple]:
        tool, block = " ".join(tool.casefold().split()), " ".join(block.casefold().split())
        if block in blocks and tool in blocks[block]["tools"]:
            return [Triple(tool, "mines", block, Category.GAME_ELEMENT_INTERACTION)]
        logger.debug("no base rule lets %s mine %s", tool, block)
        return []

    def on_event(event: LogEvent) -> list[Triple]:
        m = _MINES.match(event.text)
        if m:
            return mines(m.group(2), m.group(1))
        m = _INTERACTS.match(event.text)
        if m:
            return mines(m.group(1), m.group(2))
        return []

    def on_state_change(before: Mapping, after: Mapping) -> list[Triple]:
        if after.get("statuses", {}).get("furnace") != "lit":
            return []
        lost, gained = inventory_delta(before, after)
        return [Triple(item, "cooked_to" if item in food else "smelted_to", smelt[item],
                       Category.CAUSAL_TRANSITION)
                for item in lost if smelt.get(item) in gained]

    return ScriptHooks(on_event, on_state_change)


HOOKS: dict[str, Callable[[Mapping, Mapping], ScriptHooks]] = {
    "overcooked_lite": overcooked_hooks,
    "craftworld": craftworld_hooks,
}


def hooks_for(env_name: str) -> ScriptHooks:
    """Hooks bound to the environment's catalog and base-version rules."""
    from game_envs import load_env

    env = load_env(env_name)
    base = env.rules.versions[0]
    return HOOKS[env_name](env.catalog, env.table(base).data)
