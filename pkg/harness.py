from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go

import data_results
from agents import run_curiosity, run_ga, run_random
from config import ExperimentConfig
from errors import EmptyTraces, PlaytestError, error_record
from game_envs import DATA_DIR, GameEnv, RunTrace, dump_traces, execute_test_case, flag_bugs, load_env, run_actions
from game_envs.base import task_satisfied
from kg_core import load_graph
from llm_gateway import Gateway, make_gateway
from update_pipeline import run_pipeline, run_pipeline_no_kg

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["Method", "Gateway", "Coverage", "Interaction", "Bug Detection", "Time", "Avg Steps"]
BASELINES = ("random", "ga", "curiosity")


# ---------- metrics ----------
@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    element_coverage: int
    interactions: int
    update_interactions: int
    interaction_ratio: float
    bug_detection: int
    bugs: str
    total_test_time: float
    avg_steps: float
    test_cases: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    gateway: str
    env: str
    element_coverage: float
    coverage_max: int
    interaction_ratio: float
    interactions: float
    update_interactions: float
    bug_detection: float
    bug_max: int
    total_test_time: float
    avg_steps: float
    seeds: tuple[SeedMetrics, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["seeds"] = [s.to_dict() for s in self.seeds]
        return doc


def seed_metrics(seed: int, traces: Sequence[RunTrace], update_elements: Iterable[str], bug_specs,
                 elapsed: float = 0.0) -> SeedMetrics:
    """Scores of one seed; an interaction is one (valid step, referenced element) pair."""
    update = set(update_elements)
    touched: set[str] = set()
    total = hits = 0
    bugs: set[str] = set()
    for trace in traces:
        for step in trace.steps:
            if not step.valid:
                continue
            for element in step.elements:
                total += 1
                if element in update:
                    hits += 1
                    touched.add(element)
        bugs |= flag_bugs(trace, bug_specs)
    steps = [len(t) for t in traces]
    return SeedMetrics(
        seed=int(seed),
        element_coverage=len(touched),
        interactions=total,
        update_interactions=hits,
        interaction_ratio=hits / total if total else 0.0,
        bug_detection=len(bugs),
        bugs=",".join(sorted(bugs)),
        total_test_time=float(elapsed),
        avg_steps=float(np.mean(steps)) if steps else 0.0,
        test_cases=len(traces),
    )


def aggregate(rows: Iterable[SeedMetrics], coverage_max: int, bug_max: int, method: str = "",
              gateway: str = "", env: str = "") -> MetricsRecord:
    rows = tuple(sorted(rows, key=lambda r: r.seed))
    if not rows:
        raise EmptyTraces("no seed produced metrics")

    def mean(name: str) -> float:
        return float(np.mean([getattr(r, name) for r in rows]))

    return MetricsRecord(
        method=method,
        gateway=gateway,
        env=env,
        element_coverage=mean("element_coverage"),
        coverage_max=int(coverage_max),
        interaction_ratio=mean("interaction_ratio"),
        interactions=mean("interactions"),
        update_interactions=mean("update_interactions"),
        bug_detection=mean("bug_detection"),
        bug_max=int(bug_max),
        total_test_time=mean("total_test_time"),
        avg_steps=mean("avg_steps"),
        seeds=rows,
    )


def compute_metrics(traces_per_seed: Mapping[int, Sequence[RunTrace]], update_elements: Sequence[str], bug_specs,
                    elapsed: Mapping[int, float] | None = None, **labels) -> MetricsRecord:
    """Mean of the per-seed scores; raises EmptyTraces when no seed has a trace."""
    if not any(traces_per_seed.values()):
        raise EmptyTraces("nothing was executed")
    elapsed = elapsed or {}
    update_elements = sorted(set(update_elements))
    bug_specs = list(bug_specs)
    rows = [seed_metrics(seed, traces, update_elements, bug_specs, elapsed.get(seed, 0.0))
            for seed, traces in traces_per_seed.items()]
    return aggregate(rows, len(update_elements), len(bug_specs), **labels)


# ---------- methods ----------
@dataclass
class SeedRun:
    seed: int
    traces: list[RunTrace] = field(default_factory=list)
    audits: list[dict] = field(default_factory=list)
    elapsed: float = 0.0


def _baseline_traces(config: ExperimentConfig, env: GameEnv, version: str, seed: int) -> list[RunTrace]:
    tasks = env.tasks
    if config.method == "random":
        return [run_random(env, version, seed, config.random.max_steps, task.name, stream=i)
                for i, task in enumerate(tasks)]
    if config.method == "ga":
        best = run_ga(env, version, config.ga, seed=seed).best_sequence
        traces = []
        for task in tasks:
            spec = env.task(task.name)
            traces.append(run_actions(env, version, seed, best, label=f"ga:{task.name}",
                                      stop_when=lambda state, spec=spec: task_satisfied(state, spec)))
        return traces
    traces = []
    for i, task in enumerate(tasks):
        traces.extend(run_curiosity(env, version, config.curiosity, seed, task=task.name, stream=i).traces)
    return traces


def _pipeline_traces(config: ExperimentConfig, env: GameEnv, gateway: Gateway, seed: int,
                     run: SeedRun) -> None:
    graph = load_graph(DATA_DIR / env.name / "seed_graph.json") if config.method == "klpeg" else None
    for version in config.updates:
        document = env.update_log(version)
        if graph is not None:
            result = run_pipeline(gateway, graph, document, env, config.traversal,
                                  config.pipeline.max_cases_per_entry, config.pipeline.test_improvements)
        else:
            result = run_pipeline_no_kg(gateway, document, env, config.pipeline.test_improvements)
        if result.update_log.to_version != version:
            logger.warning("update log for %s declares %s", version, result.update_log.to_version)
        run.audits.append(result.audit)
        run.traces.extend(execute_test_case(env.name, version, seed, case) for case in result.test_cases)


def run_seed(config: ExperimentConfig, env: GameEnv, seed: int, started: float,
             gateway: Gateway | None = None) -> SeedRun:
    run = SeedRun(seed)
    if config.method in BASELINES:
        for version in config.updates:
            run.traces.extend(_baseline_traces(config, env, version, seed))
    else:
        _pipeline_traces(config, env, gateway, seed, run)
    run.elapsed = time.perf_counter() - started if config.timing == "wall" else 0.0
    logger.info("%s seed %s: %d traces", config.method, seed, len(run.traces))
    return run


# ---------- report ----------
def report_frame(records: Sequence[MetricsRecord]) -> pd.DataFrame:
    rows = [{
        "Method": r.method,
        "Gateway": r.gateway,
        "Coverage": f"{r.element_coverage:.2f}/{r.coverage_max}",
        "Interaction": f"{r.interaction_ratio:.4f}",
        "Bug Detection": f"{r.bug_detection:.2f}/{r.bug_max}",
        "Time": f"{r.total_test_time:.2f}",
        "Avg Steps": f"{r.avg_steps:.2f}",
    } for r in sorted(records, key=lambda r: (r.method, r.gateway))]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def render_report(records: Sequence[MetricsRecord]) -> tuple[str, str]:
    """Markdown and CSV of the aggregate table, one row per method and gateway."""
    df = report_frame(records)
    lines = ["| " + " | ".join(REPORT_COLUMNS) + " |", "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|"]
    for row in df.itertuples(index=False):
        lines.append("| " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(lines) + "\n", df.to_csv(index=False, lineterminator="\n")


def render_chart(records: Sequence[MetricsRecord]) -> str:
    metrics = ["Coverage", "Interaction", "Bug Detection"]
    fig = go.Figure()
    for r in sorted(records, key=lambda r: (r.method, r.gateway)):
        values = [
            r.element_coverage / r.coverage_max if r.coverage_max else 0.0,
            r.interaction_ratio,
            r.bug_detection / r.bug_max if r.bug_max else 0.0,
        ]
        fig.add_trace(go.Bar(name=f"{r.method} ({r.gateway})", x=metrics, y=values))
    fig.update_layout(barmode="group", yaxis_title="fraction of maximum", yaxis_range=[0, 1])
    return fig.to_html(full_html=True, include_plotlyjs="cdn", div_id="playtest-report")


def records_from_store(db_path: str | Path, env: str | None = None) -> list[MetricsRecord]:
    """Rebuild aggregate records from the stored per-seed rows."""
    records = []
    for run in data_results.list_runs(db_path, env):
        rows = [SeedMetrics(**dict(row)) for row in data_results.load_seed_rows(db_path, run["id"])]
        if rows:
            records.append(aggregate(rows, run["coverage_max"], run["bug_max"],
                                     run["method"], run["gateway"], run["env"]))
    return records


def write_report(output_dir: Path, records: Sequence[MetricsRecord]) -> dict[str, Path]:
    markdown, csv = render_report(records)
    paths = {"md": output_dir / "report.md", "csv": output_dir / "report.csv", "html": output_dir / "report.html"}
    paths["md"].write_text(markdown, encoding="utf-8", newline="\n")
    paths["csv"].write_text(csv, encoding="utf-8", newline="\n")
    paths["html"].write_text(render_chart(records), encoding="utf-8", newline="\n")
    return paths


# ---------- experiment ----------
@dataclass
class ExperimentOutcome:
    record: MetricsRecord
    errors: list[dict]
    paths: dict[str, Path]


def run_experiment(config: ExperimentConfig, started: float | None = None) -> ExperimentOutcome:
    """Run every seed, store the rows, and write traces, audits, records and the report."""
    started = time.perf_counter() if started is None else started
    env = load_env(config.env)
    update_elements = sorted({e for v in config.updates for e in env.update_elements(v)})
    bug_specs = [b for b in env.bugs if b.version in config.updates]
    gateway = None
    if config.method not in BASELINES:
        gateway = make_gateway(config.gateway.provider, config.providers, config.gateway.max_tool_rounds)

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    errors: list[dict] = []
    runs: list[SeedRun] = []
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [(seed, pool.submit(run_seed, config, env, seed, started, gateway)) for seed in config.seeds]
        for seed, future in futures:
            try:
                runs.append(future.result())
            except PlaytestError as exc:
                logger.warning("seed %s failed: %s", seed, exc)
                errors.append(error_record(f"seed:{seed}", exc))

    for run in runs:
        dump_traces(run.traces, out / "traces" / config.method / f"seed_{run.seed}.jsonl")
        for audit in run.audits:
            path = out / "audit" / audit["to_version"] / f"seed_{run.seed}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(audit, indent=2, ensure_ascii=False) + "\n", encoding="utf-8", newline="\n")

    record = compute_metrics({r.seed: r.traces for r in runs}, update_elements, bug_specs,
                             {r.seed: r.elapsed for r in runs},
                             method=config.method, gateway=config.gateway_label, env=config.env)
    doc = {"env": config.env, "method": config.method, "gateway": config.gateway_label,
           "updates": list(config.updates), "record": record.to_dict(), "errors": errors}
    (out / "records.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8", newline="\n")

    db_path = out / "results.db"
    data_results.save_run(db_path, config.env, config.method, config.gateway_label,
                          record.coverage_max, record.bug_max, [s.to_dict() for s in record.seeds])
    paths = write_report(out, records_from_store(db_path, config.env))
    paths.update(records=out / "records.json", db=db_path)
    logger.info("%s on %s: coverage %.2f/%d, ratio %.3f, bugs %.2f/%d", config.method, config.env,
                record.element_coverage, record.coverage_max, record.interaction_ratio,
                record.bug_detection, record.bug_max)
    return ExperimentOutcome(record, errors, paths)
