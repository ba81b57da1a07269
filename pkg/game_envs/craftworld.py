from __future__ import annotations

import logging
import math

from errors import PlanningError
from game_envs.base import Draft, EnvState, GameEnv, Goal, Invalid, Simulation, task_satisfied
from game_envs.rules import RuleTable

logger = logging.getLogger(__name__)

BLOCKS = ("log", "sand", "stone", "coal", "iron ore", "gold ore", "diamond", "obsidian")
CRAFTABLE = ("wooden plank", "stick", "crafting table", "wooden pickaxe", "wooden sword",
             "stone pickaxe", "stone sword", "furnace", "iron pickaxe", "iron sword", "torch",
             "diamond pickaxe", "bow", "shield")
SMELTABLE = ("iron ore", "sand", "gold ore", "raw beef", "raw porkchop")
MOBS = ("cow", "zombie", "skeleton", "spider")

MAX_DEPTH = 12
MAX_LOOPS = 64


class Craftworld(GameEnv):
    name = "craftworld"

    def vocabulary(self) -> list[str]:
        return (
            [f"mine({b})" for b in BLOCKS]
            + [f"craft({c})" for c in CRAFTABLE]
            + [f"smelt({s})" for s in SMELTABLE]
            + [f"attack({m})" for m in MOBS]
            + [f"move_to({loc})" for loc in self.catalog["locations"]]
        )

    def travel_cost(self, a: str, b: str) -> int:
        if a == b:
            return 0
        hops = self.catalog["locations"]
        return hops[a] + hops[b]

    def _travel(self, draft: Draft, target: str) -> int:
        cost = self.travel_cost(draft.position, target)
        if cost:
            draft.log(f"the player travels from {draft.position} to {target}")
            draft.position = target
        return cost

    # ---------- dynamics ----------
    def _apply(self, draft: Draft, table: RuleTable, verb: str, param: str | None):
        if draft.status("furnace") == "lit":
            draft.statuses["furnace"] = "idle"
        getattr(self, f"_do_{verb}")(draft, table, param)

    def _on_invalid(self, draft: Draft):
        if draft.status("furnace") == "lit":
            draft.statuses["furnace"] = "idle"

    def _do_move_to(self, draft: Draft, table: RuleTable, location: str):
        if draft.position == location:
            raise Invalid(f"already at {location}")
        draft.ticks = self._travel(draft, location)

    def _pick_tool(self, draft: Draft, allowed, order) -> str:
        for tool in reversed(order):
            if tool in allowed and draft.count(tool) > 0:
                return tool
        if "hand" in allowed:
            return "hand"
        raise Invalid("no usable tool")

    def _do_mine(self, draft: Draft, table: RuleTable, block: str):
        spec = table["blocks"].get(block)
        if spec is None:
            raise Invalid(f"{block} does not exist in {table.version}")
        tool = self._pick_tool(draft, spec["tools"], table["tool_order"])
        travel = self._travel(draft, spec["location"])
        if tool in table["fast_tools"]:
            work = 1
        else:
            work = table["tool_speed"].get(tool, {}).get(block, spec["hardness"])
        draft.ticks = travel + work
        draft.add(block)
        draft.touch(block, tool)
        draft.log(f"the player mines {block} " + ("by hand" if tool == "hand" else f"with {tool}"))

    def _do_craft(self, draft: Draft, table: RuleTable, item: str):
        recipe = table["recipes"].get(item)
        if recipe is None:
            raise Invalid(f"no recipe for {item} in {table.version}")
        if recipe["table"] and draft.count("crafting table") < 1:
            raise Invalid("needs a crafting table")
        for part, n in recipe["inputs"].items():
            draft.take(part, n)
            draft.log(f"the player uses {part} to craft {item}")
        draft.add(item, recipe["count"])
        draft.touch(item, *recipe["inputs"])
        draft.log(f"the player obtains {recipe['count']} {item}")

    def _do_smelt(self, draft: Draft, table: RuleTable, item: str):
        out = table["smelt"].get(item)
        if out is None:
            raise Invalid(f"{item} cannot be smelted in {table.version}")
        if draft.count("furnace") < 1:
            raise Invalid("needs a furnace")
        if draft.status("furnace") == "crashed":
            raise Invalid("the furnace has crashed")
        fuel = table["fuel"]
        draft.take(item)
        draft.take(fuel)
        if item in table["smelt_crash"]:
            draft.statuses["furnace"] = "crashed"
            draft.touch(item, "furnace", fuel)
            draft.log(f"the furnace crashed while smelting {item}")
            return
        draft.add(out)
        draft.statuses["furnace"] = "lit"
        draft.touch(item, out, "furnace", fuel)
        draft.log(f"the player smelts {item} into {out} in the furnace")

    def _do_attack(self, draft: Draft, table: RuleTable, mob: str):
        spec = table["mobs"].get(mob)
        if spec is None:
            raise Invalid(f"no {mob} in {table.version}")
        weapon = self._pick_tool(draft, spec["weapons"], table["weapon_order"])
        travel = self._travel(draft, spec["location"])
        draft.ticks = travel + math.ceil(spec["hp"] / table["damage"][weapon])
        draft.bump(f"kills.{mob}")
        draft.log(f"the player defeats {mob} " + ("with bare hands" if weapon == "hand" else f"with {weapon}"))
        drops = [] if weapon in table["drop_exceptions"].get(mob, ()) else list(spec["drops"])
        for drop in drops:
            draft.add(drop)
            draft.log(f"{mob} drops {drop}")
        draft.touch(mob, weapon, *drops)

    def _after_valid(self, draft: Draft, table: RuleTable):
        rewards = table["rewards"]
        for task in self.tasks:
            for part in task.key_components:
                mark = f"got:{part}"
                if mark not in draft.milestones and draft.count(part) > 0:
                    draft.milestones.add(mark)
                    draft.reward += rewards["component"]
        preview = draft.freeze()
        for task in self.tasks:
            mark = f"done:{task.key}"
            if mark not in draft.milestones and task_satisfied(preview, task):
                draft.milestones.add(mark)
                draft.reward += rewards["task"]
                draft.log(f"task completed: {task.name}")

    # ---------- planning ----------
    def element_goal(self, element: str) -> Goal | None:
        if element in self.catalog["elements"]["mobs"]:
            return Goal("defeat", element)
        if element in self.elements:
            return Goal("obtain", element)
        return None

    def plan(self, state: EnvState, goals: list[Goal]) -> list[str]:
        sim = Simulation(self, state)
        for goal in goals:
            if goal.kind == "obtain":
                self._obtain(sim, goal.target, goal.count, 0)
            elif goal.kind == "defeat":
                self._defeat(sim, goal.target, 0)
            elif goal.kind == "task":
                task = self.task(goal.target)
                if task_satisfied(sim.state, task):
                    continue
                for item, n in task.goal.get("have", {}).items():
                    self._obtain(sim, item, n, 0)
                for mob, n in task.goal.get("kills", {}).items():
                    while int(sim.state.status(f"kills.{mob}", "0")) < n:
                        self._defeat(sim, mob, 0)
            else:
                raise PlanningError(f"{self.name} cannot plan a {goal.kind} goal")
        return sim.steps

    def _table(self, sim: Simulation) -> RuleTable:
        return self.table(sim.state.version)

    def _obtain(self, sim: Simulation, item: str, n: int, depth: int):
        if depth > MAX_DEPTH:
            raise PlanningError(f"dependency chain for {item} is too deep")
        table = self._table(sim)
        smelt_from = {out: src for src, out in table["smelt"].items()}
        for _ in range(MAX_LOOPS):
            if sim.state.count(item) >= n:
                return
            if item in table["blocks"]:
                self._ensure_tool(sim, table["blocks"][item]["tools"], table, depth)
                sim.do(f"mine({item})")
            elif item in table["recipes"]:
                self._craft(sim, item, table, depth)
            elif item in smelt_from:
                self._obtain(sim, "furnace", 1, depth + 1)
                self._obtain(sim, table["fuel"], 1, depth + 1)
                self._obtain(sim, smelt_from[item], 1, depth + 1)
                sim.do(f"smelt({smelt_from[item]})")
            else:
                mob = next((m for m, spec in sorted(table["mobs"].items()) if item in spec["drops"]), None)
                if mob is None:
                    raise PlanningError(f"no way to obtain {item} in {table.version}")
                self._defeat(sim, mob, depth + 1)
        raise PlanningError(f"gave up obtaining {n} {item}")

    def _craft(self, sim: Simulation, item: str, table: RuleTable, depth: int):
        recipe = table["recipes"][item]
        if recipe["table"]:
            self._obtain(sim, "crafting table", 1, depth + 1)
        for _ in range(20):
            missing = next(((p, k) for p, k in recipe["inputs"].items() if sim.state.count(p) < k), None)
            if missing is None:
                break
            self._obtain(sim, missing[0], missing[1], depth + 1)
        else:
            raise PlanningError(f"inputs for {item} keep running out")
        sim.do(f"craft({item})")

    def _ensure_tool(self, sim: Simulation, allowed, table: RuleTable, depth: int):
        if "hand" in allowed or any(sim.state.count(t) > 0 for t in allowed):
            return
        for tool in allowed:
            if tool in table["recipes"]:
                self._obtain(sim, tool, 1, depth + 1)
                return
        raise PlanningError(f"no craftable tool among {list(allowed)}")

    def _defeat(self, sim: Simulation, mob: str, depth: int):
        table = self._table(sim)
        spec = table["mobs"].get(mob)
        if spec is None:
            raise PlanningError(f"no {mob} in {table.version}")
        self._ensure_tool(sim, spec["weapons"], table, depth)
        sim.do(f"attack({mob})")
