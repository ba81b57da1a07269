import json

import pytest

import data_results
from config import parse_config
from errors import EmptyTraces
from game_envs import RunTrace, TraceStep, load_env, load_traces
from harness import (
    REPORT_COLUMNS, MetricsRecord, compute_metrics, records_from_store, render_report, run_experiment, seed_metrics,
)

OVERCOOKED_UPDATES = ["v1.2.1", "v1.2.2", "v1.2.3"]


def _trace(*steps):
    initial = load_env("overcooked_lite").reset("v1.2.0", 1)
    return RunTrace("overcooked_lite", "v1.2.0", 1, "t", initial, tuple(
        TraceStep(i, "chop", valid, 0.0, (), elements, initial) for i, (valid, elements) in enumerate(steps)
    ))


def _config(tmp_path, method, seeds=(1,), env="overcooked_lite", updates=OVERCOOKED_UPDATES, **sections):
    doc = {"experiment": {"env": env, "method": method, "seeds": list(seeds), "updates": list(updates),
                          "output_dir": str(tmp_path), "workers": 2, "timing": "off"}}
    doc.update(sections)
    return parse_config(doc)


# ---------- metrics ----------
def test_seed_metrics_counts_valid_pairs():
    traces = [
        _trace((True, ("steak", "knife")), (False, ("steak",)), (True, ("steak dish", "pantry", "onion"))),
        _trace((True, ("seared steak", "tomato", "steak"))),
    ]
    row = seed_metrics(1, traces, ["steak", "steak dish", "seared steak", "mushroom"], [], elapsed=1.5)
    assert row.interactions == 8
    assert row.update_interactions == 4
    assert row.interaction_ratio == 0.5
    assert row.element_coverage == 3
    assert row.avg_steps == 2.0
    assert row.test_cases == 2
    assert row.bugs == ""


def test_compute_metrics_averages_seeds():
    traces = {1: [_trace((True, ("steak", "knife")))], 2: []}
    record = compute_metrics(traces, ["steak", "mushroom", "steak"], [], method="random", gateway="-", env="x")
    assert record.coverage_max == 2
    assert record.element_coverage == 0.5
    assert record.interaction_ratio == 0.25
    assert [s.seed for s in record.seeds] == [1, 2]
    assert record.to_dict()["seeds"][0]["interactions"] == 2


def test_nothing_executed_is_an_error():
    with pytest.raises(EmptyTraces):
        compute_metrics({1: [], 2: []}, ["steak"], [])


def _record(method, gateway, coverage=1.0):
    return MetricsRecord(method, gateway, "overcooked_lite", coverage, 10, 0.5, 4.0, 2.0, 3.0, 14, 0.0, 8.0)


def test_render_report_rows_sorted_by_method_then_gateway():
    markdown, csv = render_report([_record("random", "-"), _record("klpeg", "m-2"), _record("klpeg", "m-1", 9.5)])
    lines = markdown.splitlines()
    assert lines[0] == "| " + " | ".join(REPORT_COLUMNS) + " |"
    assert [line.split(" | ")[0] for line in lines[2:]] == ["| klpeg", "| klpeg", "| random"]
    assert "| klpeg | m-1 | 9.50/10 | 0.5000 | 3.00/14 | 0.00 | 8.00 |" == lines[2]
    assert csv.splitlines()[0] == ",".join(REPORT_COLUMNS)
    assert len(csv.splitlines()) == 4


# ---------- experiments ----------
def test_random_experiment_writes_everything(tmp_path):
    config = _config(tmp_path, "random", random={"max_steps": 20})
    outcome = run_experiment(config)
    assert outcome.errors == []
    traces = load_traces(tmp_path / "traces" / "random" / "seed_1.jsonl")
    assert len(traces) == 7 * 3
    assert {t.version for t in traces} == set(OVERCOOKED_UPDATES)
    assert all(len(t) <= 20 for t in traces)
    assert outcome.record.coverage_max == 10
    assert outcome.record.bug_max == 14
    doc = json.loads((tmp_path / "records.json").read_text(encoding="utf-8"))
    assert doc["record"]["method"] == "random"
    assert doc["updates"] == OVERCOOKED_UPDATES
    for key in ("md", "csv", "html", "records", "db"):
        assert outcome.paths[key].exists()
    assert 'id="playtest-report"' in outcome.paths["html"].read_text(encoding="utf-8")


def test_klpeg_beats_its_no_kg_ablation(tmp_path):
    seeds = range(1, 21)
    klpeg = run_experiment(_config(tmp_path, "klpeg", seeds, gateway={"provider": "mock"})).record
    no_kg = run_experiment(_config(tmp_path, "klpeg_no_kg", seeds)).record
    random = run_experiment(_config(tmp_path, "random", seeds)).record
    assert klpeg.element_coverage == 10
    assert klpeg.bug_detection == 14
    assert klpeg.interaction_ratio >= 0.85
    assert klpeg.avg_steps <= 15
    assert no_kg.interaction_ratio < klpeg.interaction_ratio
    assert random.interaction_ratio < klpeg.interaction_ratio
    assert len(list((tmp_path / "audit" / "v1.2.1").glob("seed_*.json"))) == 20

    records = records_from_store(tmp_path / "results.db", "overcooked_lite")
    assert [(r.method, r.gateway) for r in records] == [("klpeg", "mock"), ("klpeg_no_kg", "mock"), ("random", "mock")]
    assert records[0].interaction_ratio == pytest.approx(klpeg.interaction_ratio)
    report = (tmp_path / "report.md").read_text(encoding="utf-8")
    assert "| klpeg | mock | 10.00/10 |" in report


def test_klpeg_runs_are_reproducible(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        run_experiment(_config(out, "klpeg", (1, 2)))
        outputs.append(out)
    a, b = outputs
    for rel in ("report.md", "report.csv", "records.json", "traces/klpeg/seed_1.jsonl", "traces/klpeg/seed_2.jsonl"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_rerun_replaces_stored_rows(tmp_path):
    run_experiment(_config(tmp_path, "random", (1, 2), random={"max_steps": 10}))
    run_experiment(_config(tmp_path, "random", (3,), random={"max_steps": 10}))
    (run,) = data_results.list_runs(tmp_path / "results.db")
    assert run["seed_count"] == 1
    assert [row["seed"] for row in data_results.load_seed_rows(tmp_path / "results.db", run["id"])] == [3]


@pytest.mark.slow
def test_craftworld_klpeg_acceptance(tmp_path):
    updates = ["v1.0.1", "v1.0.2", "v1.0.3"]
    klpeg = run_experiment(_config(tmp_path, "klpeg", range(1, 21), env="craftworld", updates=updates)).record
    no_kg = run_experiment(_config(tmp_path, "klpeg_no_kg", range(1, 21), env="craftworld", updates=updates)).record
    random = run_experiment(_config(tmp_path, "random", range(1, 21), env="craftworld", updates=updates,
                                    random={"max_steps": 500})).record
    assert (klpeg.element_coverage, klpeg.coverage_max) == (30, 30)
    assert (klpeg.bug_detection, klpeg.bug_max) == (15, 15)
    assert klpeg.interaction_ratio > no_kg.interaction_ratio
    assert random.element_coverage < klpeg.element_coverage
    assert random.interaction_ratio < klpeg.interaction_ratio
