import pytest

from agents import (
    CuriosityConfig, GaConfig, collect_exploration_corpus, run_curiosity, run_ga, run_random, trace_events,
)
from extractors import SourceKind
from game_envs import load_env, run_actions
from game_envs.base import task_satisfied


@pytest.fixture(scope="module")
def kitchen():
    return load_env("overcooked_lite")


def test_random_is_seeded_per_stream(kitchen):
    a = run_random(kitchen, "v1.2.0", 5, 30)
    b = run_random(kitchen, "v1.2.0", 5, 30)
    other = run_random(kitchen, "v1.2.0", 5, 30, stream=1)
    assert [s.action for s in a.steps] == [s.action for s in b.steps]
    assert [s.action for s in a.steps] != [s.action for s in other.steps]
    assert len(a) <= 30
    assert a.label == "random:free"


def test_random_stops_once_task_holds(kitchen):
    trace = run_random(kitchen, "v1.2.0", 3, 100, task="Make Tomato Soup")
    spec = kitchen.task("Make Tomato Soup")
    assert trace.label == "random:Make Tomato Soup"
    assert not any(task_satisfied(s.state, spec) for s in trace.steps[:-1])
    with pytest.raises(ValueError):
        run_random(kitchen, "v1.2.0", 3, 0)


def test_ga_keeps_its_best(kitchen):
    config = GaConfig(population_size=6, sequence_length=12, generations=4, seed=3)
    result = run_ga(kitchen, "v1.2.0", config)
    assert len(result.history) == config.generations + 1
    assert all(b >= a for a, b in zip(result.history, result.history[1:]))
    assert result.best_fitness == result.history[-1]
    assert len(result.best_sequence) == 12
    assert result.best_trace.cumulative_reward == pytest.approx(result.best_fitness)
    again = run_ga(kitchen, "v1.2.0", config)
    assert again.best_sequence == result.best_sequence


@pytest.mark.slow
def test_ga_full_budget(kitchen):
    result = run_ga(kitchen, "v1.2.0", GaConfig(), seed=1)
    assert len(result.history) == 151
    assert result.history[-1] >= result.history[0]


@pytest.mark.parametrize("over", [
    {"population_size": 1},
    {"elitism_count": 50},
    {"mutation_rate": 1.5},
    {"tournament_size": 0},
])
def test_ga_config_validation(over):
    with pytest.raises(ValueError):
        GaConfig(**over)


def test_curiosity_task_run_is_one_episode(kitchen):
    config = CuriosityConfig(max_steps=60)
    result = run_curiosity(kitchen, "v1.2.1", config, 2, task="Make Steak Dish")
    (trace,) = result.traces
    spec = kitchen.task("Make Steak Dish")
    assert trace.label == "curiosity:Make Steak Dish:0"
    assert len(trace) <= 60
    assert not any(task_satisfied(s.state, spec) for s in trace.steps[:-1])


def test_curiosity_counts_unique_states(kitchen):
    config = CuriosityConfig(max_steps=50, episode_length=20)
    result = run_curiosity(kitchen, "v1.2.0", config, 1)
    assert sum(len(t) for t in result.traces) == len(result.unique_per_step)
    assert list(result.unique_per_step) == sorted(result.unique_per_step)
    assert result.unique_per_step[-1] == len(result.visited)
    assert [t.label for t in result.traces][:2] == ["curiosity:0", "curiosity:1"]
    again = run_curiosity(kitchen, "v1.2.0", config, 1)
    assert [s.action for t in again.traces for s in t.steps] == [s.action for t in result.traces for s in t.steps]


@pytest.mark.parametrize("over", [{"beta": 0}, {"epsilon": 2.0}, {"digest": "md5"}, {"max_steps": 0}])
def test_curiosity_config_validation(over):
    with pytest.raises(ValueError):
        CuriosityConfig(**over)


def test_trace_events_adds_state_diffs(kitchen):
    trace = run_actions(kitchen, "v1.2.0", 1, ["pick_up(tomato)", "chop"], label="diff")
    events = trace_events(trace)
    assert [e.source_kind for e in events] == [SourceKind.GAME_LOG, SourceKind.STATE_DIFF, SourceKind.GAME_LOG]
    assert events[0].text == "the player picks up tomato"
    assert events[1].before["inventory"] == {}
    assert events[1].after["inventory"] == {"tomato": 1}
    assert events[2].text.startswith("invalid action chop")


def test_exploration_corpus(kitchen):
    assert collect_exploration_corpus(kitchen, "v1.2.0", CuriosityConfig(), []) == []
    events = collect_exploration_corpus(kitchen, "v1.2.0", CuriosityConfig(max_steps=20, episode_length=10), [1])
    names = len(kitchen.tasks)
    assert [e.text for e in events[:names]] == [t.name for t in kitchen.tasks]
    assert {e.source_kind for e in events[names:]} >= {SourceKind.UI_PROMPT, SourceKind.GAME_LOG}


@pytest.mark.slow
def test_ga_beats_random_on_most_seeds(kitchen):
    wins = 0
    for seed in range(1, 21):
        result = run_ga(kitchen, "v1.2.0", GaConfig(), seed=seed)
        assert all(b >= a for a, b in zip(result.history, result.history[1:])), seed
        random_best = max(
            run_random(kitchen, "v1.2.0", seed, 100, task.name, stream=i).cumulative_reward
            for i, task in enumerate(kitchen.tasks)
        )
        wins += result.best_fitness > random_best
    assert wins >= 15


@pytest.mark.slow
def test_curiosity_visits_more_states_than_random():
    craft = load_env("craftworld")
    config = CuriosityConfig(max_steps=500, episode_length=500)
    for seed in range(1, 21):
        explored = run_curiosity(craft, "v1.0.0", config, seed)
        steps = sum(len(t) for t in explored.traces)
        walk = run_random(craft, "v1.0.0", seed, steps)
        walked = {walk.initial.digest()} | {s.digest for s in walk.steps}
        assert len(explored.visited) > len(walked), seed
