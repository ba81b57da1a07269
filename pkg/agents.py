from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from extractors import LogEvent, SourceKind
from game_envs import EnvState, GameEnv, RunTrace, TraceStep, canonical_action, flag_bugs, run_actions
from game_envs.base import task_satisfied

logger = logging.getLogger(__name__)

DIGESTS: dict[str, Callable[[EnvState], str]] = {"state-v1": EnvState.digest}


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    sequence_length: int = 100
    generations: int = 150
    mutation_rate: float | None = None  # per gene; None means 1 / sequence_length
    crossover_rate: float = 0.9
    elitism_count: int = 2
    tournament_size: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.sequence_length < 1:
            raise ValueError("sequence_length must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 0 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must be in [0, population_size)")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        for name in ("mutation_rate", "crossover_rate"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")

    @property
    def gene_mutation_rate(self) -> float:
        return 1.0 / self.sequence_length if self.mutation_rate is None else self.mutation_rate


@dataclass(frozen=True)
class CuriosityConfig:
    beta: float = 1.0
    extrinsic_weight: float = 1.0
    max_steps: int = 500
    eval_interval: int = 1000
    stagnation_window: int = 7
    epsilon: float = 0.05
    episode_length: int = 200
    digest: str = "state-v1"

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.max_steps < 1 or self.episode_length < 1 or self.eval_interval < 1:
            raise ValueError("max_steps, episode_length and eval_interval must be >= 1")
        if self.stagnation_window < 1:
            raise ValueError("stagnation_window must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.digest not in DIGESTS:
            raise ValueError(f"unknown digest {self.digest!r}; expected one of {sorted(DIGESTS)}")

    def bonus(self, visits: int) -> float:
        return self.beta / math.sqrt(1 + visits)


def _task_stop(env: GameEnv, task: str | None):
    if task is None:
        return None
    spec = env.task(task)
    return lambda state: task_satisfied(state, spec)


# ---------- random ----------
def run_random(env: GameEnv, version: str, seed: int, max_steps: int, task: str | None = None,
               stream: int = 0) -> RunTrace:
    """Uniform vocabulary sampling; ``stream`` separates per-task draws under one seed."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = np.random.default_rng([int(seed), int(stream)])
    vocabulary = env.vocabulary()
    picks = rng.integers(len(vocabulary), size=max_steps)
    return run_actions(env, version, seed, [vocabulary[i] for i in picks], label=f"random:{task or 'free'}",
                       max_steps=max_steps, stop_when=_task_stop(env, task))


# ---------- genetic algorithm ----------
@dataclass(frozen=True)
class GaResult:
    best_sequence: tuple[str, ...]
    best_fitness: float
    best_trace: RunTrace
    history: tuple[float, ...]


def _tournament(rng: np.random.Generator, fitness: np.ndarray, size: int) -> int:
    entrants = rng.integers(len(fitness), size=size)
    # lowest index wins ties so the draw order alone decides
    best = entrants[0]
    for i in entrants[1:]:
        if fitness[i] > fitness[best] or (fitness[i] == fitness[best] and i < best):
            best = i
    return int(best)


def run_ga(env: GameEnv, version: str, config: GaConfig, seed: int | None = None) -> GaResult:
    """Evolve fixed-length action sequences against cumulative reward."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(int(seed))
    vocabulary = env.vocabulary()
    width, length = len(vocabulary), config.sequence_length
    cache: dict[bytes, float] = {}

    def fitness_of(genome: np.ndarray) -> float:
        key = genome.tobytes()
        if key not in cache:
            trace = run_actions(env, version, seed, [vocabulary[i] for i in genome], label="ga")
            cache[key] = trace.cumulative_reward
        return cache[key]

    population = rng.integers(width, size=(config.population_size, length))
    fitness = np.array([fitness_of(g) for g in population])
    history = [float(fitness.max())]
    for generation in range(config.generations):
        order = np.argsort(-fitness, kind="stable")
        children = [population[i].copy() for i in order[:config.elitism_count]]
        while len(children) < config.population_size:
            a = population[_tournament(rng, fitness, config.tournament_size)]
            b = population[_tournament(rng, fitness, config.tournament_size)]
            if length > 1 and rng.random() < config.crossover_rate:
                point = int(rng.integers(1, length))
                child = np.concatenate([a[:point], b[point:]])
            else:
                child = a.copy()
            mask = rng.random(length) < config.gene_mutation_rate
            child[mask] = rng.integers(width, size=int(mask.sum()))
            children.append(child)
        population = np.array(children)
        fitness = np.array([fitness_of(g) for g in population])
        history.append(float(fitness.max()))
        logger.debug("ga seed %s generation %d best %.2f", seed, generation + 1, history[-1])

    best = population[int(np.argmax(fitness))]
    actions = tuple(canonical_action(vocabulary[i]) for i in best)
    trace = run_actions(env, version, seed, actions, label="ga:best")
    return GaResult(actions, float(fitness.max()), trace, tuple(history))


# ---------- curiosity ----------
@dataclass(frozen=True)
class CuriosityResult:
    traces: tuple[RunTrace, ...]
    visited: frozenset[str]
    unique_per_step: tuple[int, ...] = field(default_factory=tuple)


def run_curiosity(env: GameEnv, version: str, config: CuriosityConfig, seed: int, task: str | None = None,
                  stream: int = 0) -> CuriosityResult:
    """One-step lookahead, greedy on extrinsic reward plus a count-based novelty bonus.

    With ``task`` set the run is a single episode of at most ``max_steps`` that ends once the task holds.
    """
    rng = np.random.default_rng([int(seed), 1, int(stream)])
    stop = _task_stop(env, task)
    episode_length = config.max_steps if task is not None else config.episode_length
    prefix = f"curiosity:{task}" if task is not None else "curiosity"
    digest = DIGESTS[config.digest]
    vocabulary = env.vocabulary()
    counts: dict[str, int] = {}
    traces: list[RunTrace] = []
    unique: list[int] = []
    total = 0
    stagnant, seen_at_check = 0, 0

    def close(initial: EnvState, steps: list[TraceStep], episode: int):
        trace = RunTrace(env.name, version, int(seed), f"{prefix}:{episode}", initial, tuple(steps))
        traces.append(RunTrace(trace.env, trace.version, trace.seed, trace.label, trace.initial, trace.steps,
                               frozenset(flag_bugs(trace, env.bugs))))

    episode = 0
    while total < config.max_steps and stagnant < config.stagnation_window:
        initial = state = env.reset(version, seed)
        counts[digest(state)] = counts.get(digest(state), 0) + 1
        steps: list[TraceStep] = []
        while len(steps) < episode_length and total < config.max_steps:
            outcomes = [env.step(state, token) for token in vocabulary]
            if rng.random() < config.epsilon:
                pick = int(rng.integers(len(vocabulary)))
            else:
                scores = np.array([
                    config.extrinsic_weight * r.reward + config.bonus(counts.get(digest(r.state), 0))
                    for r in outcomes
                ])
                best = np.flatnonzero(scores == scores.max())
                pick = int(best[rng.integers(len(best))])
            result = outcomes[pick]
            key = digest(result.state)
            counts[key] = counts.get(key, 0) + 1
            steps.append(TraceStep(len(steps), canonical_action(vocabulary[pick]), result.valid, result.reward,
                                   result.events, result.elements, result.state))
            state = result.state
            total += 1
            unique.append(len(counts))
            if total % config.eval_interval == 0:
                stagnant = stagnant + 1 if len(counts) == seen_at_check else 0
                seen_at_check = len(counts)
                if stagnant >= config.stagnation_window:
                    logger.info("curiosity seed %s stopped after %d stagnant intervals", seed, stagnant)
                    break
            if result.done or (stop is not None and stop(state)):
                break
        close(initial, steps, episode)
        episode += 1
        if task is not None:
            break
    return CuriosityResult(tuple(traces), frozenset(counts), tuple(unique))


# ---------- exploration corpus ----------
def _snapshot(state: EnvState) -> dict:
    return {"position": state.position, "inventory": dict(state.inventory), "statuses": dict(state.statuses)}


def trace_events(trace: RunTrace) -> list[LogEvent]:
    """GameLog lines of every step, each followed by a StateDiff when the snapshot changed."""
    events: list[LogEvent] = []
    prev = trace.initial
    for step in trace.steps:
        events.extend(step.events)
        before, after = _snapshot(prev), _snapshot(step.state)
        if before != after:
            events.append(LogEvent(SourceKind.STATE_DIFF, "", step.state.step, before, after))
        prev = step.state
    return events


def collect_exploration_corpus(env: GameEnv, version: str, config: CuriosityConfig,
                               seeds: Sequence[int]) -> list[LogEvent]:
    if not seeds:
        return []
    events = [LogEvent(SourceKind.TASK_NAME, task.name, 0) for task in env.tasks]
    events += [LogEvent(SourceKind.UI_PROMPT, text, 0) for text in env.ui_prompts()]
    for seed in seeds:
        result = run_curiosity(env, version, config, seed)
        for trace in result.traces:
            events.extend(trace_events(trace))
    logger.info("collected %d events from %d curiosity seeds on %s %s", len(events), len(seeds), env.name, version)
    return events
