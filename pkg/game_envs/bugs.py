from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:
    from game_envs.base import EnvState
    from game_envs.trace import RunTrace

logger = logging.getLogger(__name__)

CONDITIONS = ("holding", "not_holding", "holding_at_least", "held_total_at_least",
              "status", "status_at_least")


@dataclass(frozen=True)
class BugSpec:
    """A trigger that flags without altering the run.

    ``action`` set: fires on a valid step with that action whose pre-state meets
    ``when`` and post-state meets ``state``. ``action`` unset: fires on any
    post-step state meeting ``state``.
    """

    id: str
    version: str
    entry: str
    description: str
    action: str | None = None
    when: Mapping = field(default_factory=dict)
    state: Mapping = field(default_factory=dict)


def holds(state: "EnvState", conds: Mapping) -> bool:
    for item in conds.get("holding", ()):
        if state.count(item) < 1:
            return False
    for item in conds.get("not_holding", ()):
        if state.count(item) > 0:
            return False
    for item, n in conds.get("holding_at_least", {}).items():
        if state.count(item) < n:
            return False
    if state.held_total() < conds.get("held_total_at_least", 0):
        return False
    for key, value in conds.get("status", {}).items():
        if state.status(key) != str(value):
            return False
    for key, n in conds.get("status_at_least", {}).items():
        if int(state.status(key, "0") or 0) < n:
            return False
    return True


def load_bugs(path: Path) -> tuple[BugSpec, ...]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    bugs = []
    for raw in doc["bugs"]:
        for part in ("when", "state"):
            unknown = set(raw.get(part, {})) - set(CONDITIONS)
            if unknown:
                raise ValueError(f"bug {raw['id']}: unknown {part} conditions {sorted(unknown)}")
        if raw.get("action") is None and not raw.get("state"):
            raise ValueError(f"bug {raw['id']} has neither an action nor a state trigger")
        bugs.append(BugSpec(
            id=raw["id"],
            version=raw["version"],
            entry=raw["entry"],
            description=raw["description"],
            action=raw.get("action"),
            when=raw.get("when", {}),
            state=raw.get("state", {}),
        ))
    if len(bugs) != doc["manifest"]["bugs"]:
        raise ValueError(f"{path}: manifest declares {doc['manifest']['bugs']} bugs, found {len(bugs)}")
    return tuple(bugs)


def flag_bugs(trace: "RunTrace", bugs) -> set[str]:
    """Ids of every bug whose trigger fires anywhere in ``trace``."""
    live = [b for b in bugs if b.version == trace.version]
    fired: set[str] = set()
    prev = trace.initial
    for step in trace.steps:
        for bug in live:
            if bug.id in fired:
                continue
            if bug.action is not None:
                if step.valid and step.action == bug.action and holds(prev, bug.when) and holds(step.state, bug.state):
                    fired.add(bug.id)
            elif holds(step.state, bug.state):
                fired.add(bug.id)
        prev = step.state
    return fired
