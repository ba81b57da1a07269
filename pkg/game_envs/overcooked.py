from __future__ import annotations

import logging
import math

from errors import PlanningError
from game_envs.base import Draft, EnvState, GameEnv, Goal, Invalid, Simulation, task_satisfied
from game_envs.rules import RuleTable

logger = logging.getLogger(__name__)

MOVES = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}
INGREDIENTS = ("tomato", "onion", "lettuce", "fish", "steak", "mushroom")


def _xy(pos: str) -> tuple[int, int]:
    x, y = pos.split(",")
    return int(x), int(y)


def _expand(inventory: dict) -> list[str]:
    return sorted(item for item, n in inventory.items() for _ in range(n))


class OvercookedLite(GameEnv):
    name = "overcooked_lite"

    def vocabulary(self) -> list[str]:
        return (
            [f"move({d})" for d in MOVES]
            + [f"pick_up({i})" for i in INGREDIENTS]
            + ["chop", "cook", "plate", "submit"]
        )

    def station_at(self, pos: str) -> str | None:
        return self.catalog["stations"].get(pos)

    def station_pos(self, station: str) -> str:
        for pos, name in self.catalog["stations"].items():
            if name == station:
                return pos
        raise KeyError(station)

    def origin(self, item: str, table: RuleTable) -> str:
        """Raw ingredient an intermediate was made from."""
        back = {out: src for src, out in list(table["chop"].items()) + list(table["cook"].items())}
        seen = set()
        while item in back and item not in seen:
            seen.add(item)
            item = back[item]
        return item

    # ---------- dynamics ----------
    def _apply(self, draft: Draft, table: RuleTable, verb: str, param: str | None):
        handler = getattr(self, f"_do_{verb}")
        if verb in ("move", "pick_up"):
            handler(draft, table, param)
        else:
            handler(draft, table)

    def _do_move(self, draft: Draft, table: RuleTable, direction: str):
        x, y = _xy(draft.position)
        dx, dy = MOVES[direction]
        nx_, ny_ = x + dx, y + dy
        if not (0 <= nx_ < self.catalog["width"] and 0 <= ny_ < self.catalog["height"]):
            raise Invalid("blocked by the kitchen wall")
        draft.position = f"{nx_},{ny_}"
        station = self.station_at(draft.position)
        draft.touch(station or "")
        draft.log(f"the player moves {direction} to the {station or 'floor'}")

    def _do_pick_up(self, draft: Draft, table: RuleTable, item: str):
        if self.station_at(draft.position) != "pantry":
            raise Invalid("not at the pantry")
        if item not in table["pantry"]:
            raise Invalid(f"the pantry has no {item}")
        if sum(draft.inventory.values()) >= table["held_capacity"]:
            raise Invalid("hands are full")
        draft.add(item)
        draft.touch(item)
        draft.log(f"the player picks up {item}")

    def _process(self, draft: Draft, table: RuleTable, kind: str, station: str, capacity: int):
        if self.station_at(draft.position) != station:
            raise Invalid(f"not at the {station}")
        transforms = table[kind]
        pending = [item for item in _expand(draft.inventory) if item in transforms]
        if not pending:
            raise Invalid(f"nothing to {kind}")
        for item in pending[:capacity]:
            out = transforms[item]
            draft.take(item)
            draft.add(out)
            draft.reward += table["rewards"]["processed"]
            draft.touch(self.origin(item, table))
            yield item, out

    def _do_chop(self, draft: Draft, table: RuleTable):
        capacity = table["board_capacity"]
        for item, out in self._process(draft, table, "chop", "chopping board", capacity):
            draft.log(f"the player chops {item} into {out} on the chopping board with the knife")
        draft.touch("chopping board", "knife")
        leftover = [item for item in _expand(draft.inventory) if item in table["chop"]]
        if table["knife_loss"] and leftover:
            draft.take(leftover[0])
            draft.log(f"the knife destroyed {leftover[0]}")

    def _do_cook(self, draft: Draft, table: RuleTable):
        capacity = table["stove_capacity"]
        for item, out in self._process(draft, table, "cook", "stove", capacity):
            draft.log(f"the player cooks {item} into {out} on the stove")
        draft.touch("stove")

    def _do_plate(self, draft: Draft, table: RuleTable):
        if self.station_at(draft.position) != "serving window":
            raise Invalid("not at the serving window")
        held = _expand(draft.inventory)
        for dish, parts in sorted(table["recipes"].items()):
            if held == sorted(parts):
                draft.inventory = {dish: 1}
                draft.touch(dish, "serving window")
                draft.log(f"the player plates {dish}")
                return
        raise Invalid("held items match no recipe")

    def _do_submit(self, draft: Draft, table: RuleTable):
        if self.station_at(draft.position) != "serving window":
            raise Invalid("not at the serving window")
        held = _expand(draft.inventory)
        if not held:
            raise Invalid("nothing to submit")
        rewards = table["rewards"]
        if len(held) == 1 and held[0] in table["recipes"]:
            dish = held[0]
            draft.inventory = {}
            draft.touch(dish, "serving window")
            if draft.status("window") == "stale":
                draft.statuses["window"] = "ready"
                draft.log(f"the serving window ignored {dish}")
                return
            draft.reward += rewards["dish"]
            draft.bump(f"served.{dish}")
            draft.log(f"dish {dish} served at the serving window")
            return
        draft.inventory = {}
        draft.reward += rewards["wrong_submission"]
        draft.bump("failed_submissions")
        draft.touch(*(self.origin(item, table) for item in held), "serving window")
        draft.log(f"incorrect submission of {', '.join(held)} at the serving window")
        if not table["window_refresh_on_fail"]:
            draft.statuses["window"] = "stale"

    # ---------- planning ----------
    def element_goal(self, element: str) -> Goal | None:
        if element in self.catalog["elements"]["dishes"]:
            return Goal("serve", element)
        return None

    def plan(self, state: EnvState, goals: list[Goal]) -> list[str]:
        sim = Simulation(self, state)
        for goal in goals:
            if goal.kind == "task":
                task = self.task(goal.target)
                if task_satisfied(sim.state, task):
                    continue
                self._serve(sim, task.goal["served"])
            elif goal.kind == "serve":
                if int(sim.state.status(f"served.{goal.target}", "0")) >= goal.count:
                    continue
                self._serve(sim, goal.target)
            else:
                raise PlanningError(f"{self.name} cannot plan a {goal.kind} goal")
        return sim.steps

    def _chain(self, component: str, table: RuleTable) -> tuple[str, list[str]]:
        """Raw ingredient and the processing verbs that turn it into ``component``."""
        if component in table["pantry"]:
            return component, []
        for kind in ("chop", "cook"):
            for src, out in table[kind].items():
                if out == component:
                    raw, ops = self._chain(src, table)
                    return raw, ops + [kind]
        raise PlanningError(f"no way to make {component} on {table.version}")

    def _route(self, sim: Simulation, station: str):
        tx, ty = _xy(self.station_pos(station))
        x, y = _xy(sim.state.position)
        while y > ty:
            sim.do("move(up)")
            y -= 1
        while y < ty:
            sim.do("move(down)")
            y += 1
        step = "move(right)" if tx > x else "move(left)"
        for _ in range(abs(tx - x)):
            sim.do(step)

    def _serve(self, sim: Simulation, dish: str):
        table = self.table(sim.state.version)
        if dish not in table["recipes"]:
            raise PlanningError(f"{dish} is not on the menu in {table.version}")
        served_before = int(sim.state.status(f"served.{dish}", "0"))
        for strategy in (self._batch, self._sequential):
            trial = Simulation(self, sim.state)
            try:
                strategy(trial, dish, table)
            except PlanningError as exc:
                logger.debug("%s plan for %s failed: %s", strategy.__name__, dish, exc)
                continue
            if int(trial.state.status(f"served.{dish}", "0")) > served_before:
                sim.state = trial.state
                sim.steps.extend(trial.steps)
                return
        raise PlanningError(f"could not plan {dish} on {table.version}")

    def _finish(self, sim: Simulation):
        self._route(sim, "serving window")
        sim.do("plate")
        sim.do("submit")

    def _batch(self, sim: Simulation, dish: str, table: RuleTable):
        chains = [self._chain(c, table) for c in sorted(table["recipes"][dish])]
        if len(chains) > table["held_capacity"]:
            raise PlanningError("recipe needs more hands than the chef has")
        self._route(sim, "pantry")
        for raw, _ in chains:
            sim.do(f"pick_up({raw})")
        for kind, station, cap in (("chop", "chopping board", table["board_capacity"]),
                                   ("cook", "stove", table["stove_capacity"])):
            n = sum(1 for _, ops in chains if kind in ops)
            if n:
                self._route(sim, station)
                for _ in range(math.ceil(n / cap)):
                    sim.do(kind)
        self._finish(sim)

    def _sequential(self, sim: Simulation, dish: str, table: RuleTable):
        for component in sorted(table["recipes"][dish]):
            raw, ops = self._chain(component, table)
            self._route(sim, "pantry")
            sim.do(f"pick_up({raw})")
            for kind in ops:
                self._route(sim, "chopping board" if kind == "chop" else "stove")
                sim.do(kind)
        self._finish(sim)
