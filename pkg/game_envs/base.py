from __future__ import annotations

import hashlib
import json
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping

from errors import PlanningError, UnknownVersion
from extractors import LogEvent, SourceKind
from game_envs.bugs import BugSpec, load_bugs
from game_envs.rules import RuleTable, VersionedRules, load_rules

logger = logging.getLogger(__name__)

_ACTION_RE = re.compile(r"^([a-z_]+)(?:\((.*)\))?$")


def canonical_action(token: str) -> str:
    """``Pick_Up( Tomato )`` -> ``pick_up(tomato)``; unparseable text is returned folded."""
    text = " ".join(str(token).casefold().split())
    m = _ACTION_RE.match(text.replace(" (", "("))
    if not m:
        return text
    verb, param = m.group(1), m.group(2)
    if param is None:
        return verb
    return f"{verb}({' '.join(param.split())})"


def parse_action(token: str) -> tuple[str, str | None] | None:
    m = _ACTION_RE.match(canonical_action(token))
    if not m:
        return None
    return m.group(1), m.group(2)


# ---------- state ----------
@dataclass(frozen=True)
class EnvState:
    env: str
    version: str
    seed: int
    position: str
    inventory: tuple[tuple[str, int], ...] = ()
    statuses: tuple[tuple[str, str], ...] = ()
    milestones: frozenset[str] = frozenset()
    step: int = 0
    ticks: int = 0

    def count(self, item: str) -> int:
        for name, n in self.inventory:
            if name == item:
                return n
        return 0

    def held_total(self) -> int:
        return sum(n for _, n in self.inventory)

    def status(self, key: str, default: str = "") -> str:
        for name, value in self.statuses:
            if name == key:
                return value
        return default

    def digest(self) -> str:
        """Novelty key: position, inventory and statuses; step counters excluded."""
        payload = json.dumps([self.position, self.inventory, self.statuses], separators=(",", ":"))
        return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "version": self.version,
            "seed": self.seed,
            "position": self.position,
            "inventory": dict(self.inventory),
            "statuses": dict(self.statuses),
            "milestones": sorted(self.milestones),
            "step": self.step,
            "ticks": self.ticks,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EnvState":
        return cls(
            env=doc["env"],
            version=doc["version"],
            seed=int(doc["seed"]),
            position=doc["position"],
            inventory=tuple(sorted((k, int(v)) for k, v in doc["inventory"].items())),
            statuses=tuple(sorted((k, str(v)) for k, v in doc["statuses"].items())),
            milestones=frozenset(doc.get("milestones", ())),
            step=int(doc["step"]),
            ticks=int(doc.get("ticks", 0)),
        )


class Invalid(Exception):
    """Raised inside an environment's action handler to turn the step into a no-op."""


class Draft:
    """Mutable working copy of an EnvState for the duration of one step."""

    def __init__(self, state: EnvState, catalog: frozenset[str]):
        self.state = state
        self.catalog = catalog
        self.position = state.position
        self.inventory = dict(state.inventory)
        self.statuses = dict(state.statuses)
        self.milestones = set(state.milestones)
        self.reward = 0.0
        self.ticks = 1
        self.events: list[str] = []
        self.elements: list[str] = []

    def count(self, item: str) -> int:
        return self.inventory.get(item, 0)

    def add(self, item: str, n: int = 1):
        self.inventory[item] = self.inventory.get(item, 0) + n

    def take(self, item: str, n: int = 1):
        left = self.inventory.get(item, 0) - n
        if left < 0:
            raise Invalid(f"not enough {item}")
        if left:
            self.inventory[item] = left
        else:
            self.inventory.pop(item, None)

    def status(self, key: str, default: str = "") -> str:
        return self.statuses.get(key, default)

    def bump(self, key: str, n: int = 1):
        self.statuses[key] = str(int(self.statuses.get(key, "0")) + n)

    def touch(self, *names: str):
        for name in names:
            if name in self.catalog and name not in self.elements:
                self.elements.append(name)

    def log(self, text: str):
        self.events.append(text)

    def freeze(self) -> EnvState:
        return replace(
            self.state,
            position=self.position,
            inventory=tuple(sorted((k, v) for k, v in self.inventory.items() if v > 0)),
            statuses=tuple(sorted(self.statuses.items())),
            milestones=frozenset(self.milestones),
            step=self.state.step + 1,
            ticks=self.state.ticks + self.ticks,
        )


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    reward: float
    events: tuple[LogEvent, ...]
    elements: tuple[str, ...]
    valid: bool
    done: bool


# ---------- tasks and goals ----------
@dataclass(frozen=True)
class TaskSpec:
    id: str
    name: str
    difficulty: str
    goal: Mapping
    key_components: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return " ".join(self.name.casefold().split())


def task_satisfied(state: EnvState, task: TaskSpec) -> bool:
    goal = task.goal
    if "served" in goal and int(state.status(f"served.{goal['served']}", "0")) < 1:
        return False
    for item, n in goal.get("have", {}).items():
        if state.count(item) < n:
            return False
    for mob, n in goal.get("kills", {}).items():
        if int(state.status(f"kills.{mob}", "0")) < n:
            return False
    return True


@dataclass(frozen=True)
class Goal:
    """Planner goal: ``serve`` a dish, ``obtain`` an item, ``defeat`` a mob or finish a ``task``."""

    kind: str
    target: str
    count: int = 1


# ---------- environment ----------
class GameEnv(ABC):
    name: str = ""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.catalog = json.loads((self.data_dir / "catalog.json").read_text(encoding="utf-8"))
        self.tasks = self._load_tasks()
        self.rules: VersionedRules = load_rules(self.data_dir, self.update_logs())
        self.bugs: tuple[BugSpec, ...] = load_bugs(self.data_dir / "bugs.json")
        self._check_manifest()

    # ---------- data ----------
    def _load_tasks(self) -> tuple[TaskSpec, ...]:
        doc = json.loads((self.data_dir / "tasks.json").read_text(encoding="utf-8"))
        return tuple(
            TaskSpec(t["id"], t["name"], t["difficulty"], t["goal"], tuple(t.get("key_components", ())))
            for t in doc["tasks"]
        )

    def update_logs(self) -> list[str]:
        """Shipped update-log documents, oldest first."""
        return [p.read_text(encoding="utf-8") for p in sorted((self.data_dir / "updates").glob("*.md"))]

    def update_log(self, to_version: str) -> str:
        path = self.data_dir / "updates" / f"{to_version}.md"
        if not path.exists():
            raise UnknownVersion(f"{self.name} ships no update log for {to_version}")
        return path.read_text(encoding="utf-8")

    def _check_manifest(self):
        manifest = self.catalog["manifest"]
        actual = {
            "elements": len(self.elements),
            "tasks": len(self.tasks),
            "updates": len(self.catalog["update_elements"]),
            "update_elements": len(self.all_update_elements()),
            "bugs": len(self.bugs),
        }
        for key, value in actual.items():
            if manifest[key] != value:
                raise ValueError(f"{self.name} manifest declares {manifest[key]} {key}, data has {value}")

    @cached_property
    def elements(self) -> frozenset[str]:
        return frozenset(e for group in self.catalog["elements"].values() for e in group)

    def update_elements(self, to_version: str) -> list[str]:
        try:
            return list(self.catalog["update_elements"][to_version])
        except KeyError:
            raise UnknownVersion(f"{self.name} has no update {to_version}") from None

    def all_update_elements(self) -> list[str]:
        return sorted({e for group in self.catalog["update_elements"].values() for e in group})

    def task(self, name: str) -> TaskSpec:
        key = " ".join(str(name).casefold().split())
        for task in self.tasks:
            if task.key == key or task.id == name:
                return task
        raise KeyError(f"{self.name} has no task {name!r}")

    def table(self, version: str) -> RuleTable:
        return self.rules.table(version)

    # ---------- dynamics ----------
    def reset(self, version: str, seed: int) -> EnvState:
        self.table(version)
        return EnvState(
            env=self.name,
            version=version,
            seed=int(seed),
            position=self.catalog["start"],
            statuses=tuple(sorted(self.catalog.get("initial_statuses", {}).items())),
        )

    @cached_property
    def vocabulary_set(self) -> frozenset[str]:
        return frozenset(self.vocabulary())

    def step(self, state: EnvState, action: str) -> StepResult:
        token = canonical_action(action)
        table = self.table(state.version)
        draft = Draft(state, self.elements)
        valid = True
        try:
            if token not in self.vocabulary_set:
                raise Invalid("not in the action vocabulary")
            verb, param = parse_action(token)
            self._apply(draft, table, verb, param)
        except Invalid as exc:
            valid = False
            draft = Draft(state, self.elements)
            self._on_invalid(draft)
            draft.log(f"invalid action {token}: {exc}")
        draft.reward += table["rewards"]["step"] * draft.ticks
        if valid:
            self._after_valid(draft, table)
        next_state = draft.freeze()
        events = tuple(
            LogEvent(SourceKind.GAME_LOG, text, next_state.step) for text in draft.events
        )
        return StepResult(
            state=next_state,
            reward=round(draft.reward, 6),
            events=events,
            elements=tuple(draft.elements) if valid else (),
            valid=valid,
            done=all(task_satisfied(next_state, t) for t in self.tasks),
        )

    def _on_invalid(self, draft: Draft):
        """Hook for state bookkeeping that happens even on a no-op step."""

    def _after_valid(self, draft: Draft, table: RuleTable):
        """Hook for reward bookkeeping after a successful action."""

    @abstractmethod
    def _apply(self, draft: Draft, table: RuleTable, verb: str, param: str | None):
        ...

    @abstractmethod
    def vocabulary(self) -> list[str]:
        ...

    @abstractmethod
    def element_goal(self, element: str) -> Goal | None:
        ...

    @abstractmethod
    def plan(self, state: EnvState, goals: list[Goal]) -> list[str]:
        """Action tokens that reach ``goals`` in order from ``state``; raises PlanningError."""

    def ui_prompts(self) -> list[str]:
        return list(self.catalog.get("ui_prompts", ()))


@dataclass
class Simulation:
    """Planner helper that steps a copy of the world and records the tokens."""

    env: GameEnv
    state: EnvState
    steps: list[str] = field(default_factory=list)

    def do(self, token: str) -> StepResult:
        result = self.env.step(self.state, token)
        if not result.valid:
            raise PlanningError(f"{token} is not legal at step {self.state.step} on {self.state.version}")
        self.state = result.state
        self.steps.append(canonical_action(token))
        return result
