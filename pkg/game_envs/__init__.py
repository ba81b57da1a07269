from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path

from errors import UnknownEnvironment
from game_envs.base import EnvState, GameEnv, Goal, StepResult, TaskSpec, canonical_action
from game_envs.bugs import BugSpec, flag_bugs
from game_envs.craftworld import Craftworld
from game_envs.overcooked import OvercookedLite
from game_envs.rules import VersionedRules, apply_update
from game_envs.trace import RunTrace, TraceStep, dump_traces, load_traces

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

ENVIRONMENTS: dict[str, type[GameEnv]] = {
    OvercookedLite.name: OvercookedLite,
    Craftworld.name: Craftworld,
}

DEFAULT_MAX_STEPS = {"overcooked_lite": 100, "craftworld": 500}


@lru_cache(maxsize=None)
def load_env(name: str) -> GameEnv:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise UnknownEnvironment(f"unknown environment {name!r}; expected one of {sorted(ENVIRONMENTS)}") from None
    env = cls(DATA_DIR / name)
    logger.debug("loaded %s with versions %s", name, env.rules.versions)
    return env


def reset(env_name: str, version: str, seed: int) -> EnvState:
    return load_env(env_name).reset(version, seed)


def step(state: EnvState, action: str) -> StepResult:
    return load_env(state.env).step(state, action)


def run_actions(env: GameEnv, version: str, seed: int, actions, label: str,
                max_steps: int | None = None, stop_when=None) -> RunTrace:
    """Replay ``actions`` from a fresh reset; stops at done, the step limit or ``stop_when(state)``."""
    initial = env.reset(version, seed)
    state = initial
    steps: list[TraceStep] = []
    for token in actions:
        if max_steps is not None and len(steps) >= max_steps:
            break
        result = env.step(state, token)
        steps.append(TraceStep(
            index=len(steps),
            action=canonical_action(token),
            valid=result.valid,
            reward=result.reward,
            events=result.events,
            elements=result.elements,
            state=result.state,
        ))
        state = result.state
        if result.done or (stop_when is not None and stop_when(state)):
            break
    trace = RunTrace(env.name, version, int(seed), label, initial, tuple(steps))
    return RunTrace(trace.env, trace.version, trace.seed, trace.label, trace.initial, trace.steps,
                    frozenset(flag_bugs(trace, env.bugs)))


def execute_test_case(env_name: str, version: str, seed: int, test_case, max_steps: int | None = None) -> RunTrace:
    env = load_env(env_name)
    limit = max_steps or DEFAULT_MAX_STEPS.get(env_name)
    return run_actions(env, version, seed, test_case.action_steps,
                       label=test_case.test_objective, max_steps=limit)


__all__ = [
    "BugSpec", "DEFAULT_MAX_STEPS", "ENVIRONMENTS", "EnvState", "GameEnv", "Goal", "RunTrace",
    "StepResult", "TaskSpec", "TraceStep", "UnknownEnvironment", "VersionedRules", "apply_update",
    "canonical_action", "dump_traces", "execute_test_case", "flag_bugs", "load_env", "load_traces",
    "reset", "run_actions", "step",
]
