from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import harness
from agents import CuriosityConfig, collect_exploration_corpus
from config import ENV_NAMES, GatewayConfig, load_config
from errors import ConfigError
from extractors import dump_batch, dump_events, extract_all, build_graph, load_events, load_rule_config
from game_envs import DATA_DIR, load_env
from guards import EXIT_CONFIG, exit_codes, requires
from kg_core import Direction, TraversalPolicy, graph_stats, load_graph, save_graph
from llm_gateway import make_gateway
from script_hooks import hooks_for
from update_pipeline import derive_delta, infer_impact, parse_update_log, run_pipeline, run_pipeline_no_kg, sync_graph

logger = logging.getLogger(__name__)


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


def _providers(args) -> dict:
    return load_config(args.config).providers if getattr(args, "config", None) else {}


def _gateway(args):
    return make_gateway(args.gateway, _providers(args))


def _policy(args) -> TraversalPolicy:
    try:
        return TraversalPolicy(max_hops=args.k, direction=Direction(args.direction))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _graph_path(args) -> Path:
    return Path(args.graph) if args.graph else DATA_DIR / args.env / "seed_graph.json"


# ---------- handlers ----------
@exit_codes
def cmd_explore(args) -> int:
    env = load_env(args.env)
    config = load_config(args.config).curiosity if args.config else CuriosityConfig()
    version = args.version or env.rules.versions[0]
    events = collect_exploration_corpus(env, version, config, [args.seed])
    if args.out:
        dump_events(events, args.out)
        logger.info("wrote %d events to %s", len(events), args.out)
    else:
        for event in events:
            sys.stdout.write(json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    return 0


@exit_codes
def cmd_build_graph(args) -> int:
    env_dir = DATA_DIR / args.env
    events = load_events(args.events or env_dir / "exploration.jsonl")
    rules = load_rule_config(args.rules or env_dir / "extractor_rules.json")
    batch = extract_all(rules, hooks_for(args.env), _gateway(args), events)
    if args.batch_out:
        dump_batch(batch, args.batch_out)
    graph, errors = build_graph(batch, args.version or load_env(args.env).rules.versions[0])
    if args.out:
        save_graph(graph, args.out)
    _emit({"stats": graph_stats(graph), "errors": list(batch.errors) + errors})
    return 0


@exit_codes
@requires("version")
def cmd_update(args) -> int:
    env = load_env(args.env)
    graph = load_graph(_graph_path(args))
    update_log = parse_update_log(env.update_log(args.version))
    delta = derive_delta(_gateway(args), graph, update_log, env.name)
    errors: list[dict] = []
    applied = sync_graph(graph, delta, errors)
    if args.out:
        save_graph(graph, args.out)
    _emit({"delta": delta.to_dict(), "applied": applied, "errors": errors})
    return 0


@exit_codes
@requires("item")
def cmd_impact(args) -> int:
    graph = load_graph(_graph_path(args))
    reports = [r.to_dict() for r in infer_impact(graph, args.item, _policy(args))]
    for report in reports:
        report.pop("hop_distance", None)
    _emit(reports[0] if len(reports) == 1 else reports)
    return 0


@exit_codes
@requires("version")
def cmd_gen_tests(args) -> int:
    env = load_env(args.env)
    document = env.update_log(args.version)
    gateway = _gateway(args)
    if args.no_kg:
        result = run_pipeline_no_kg(gateway, document, env, args.test_improvements)
    else:
        result = run_pipeline(gateway, load_graph(_graph_path(args)), document, env, _policy(args),
                              args.max_cases, args.test_improvements)
    _emit({"test_cases": [c.to_dict() for c in result.test_cases], "errors": result.audit["errors"]})
    return 0


@exit_codes
@requires("config")
def cmd_run(args) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.k is not None:
        changes["traversal"] = dataclasses.replace(config.traversal, max_hops=args.k)
    if args.gateway is not None:
        if args.gateway != "mock" and args.gateway not in config.providers:
            raise ConfigError(f"no provider configured under {args.gateway!r}")
        changes["gateway"] = GatewayConfig(args.gateway, config.gateway.max_tool_rounds)
    config = dataclasses.replace(config, **changes)
    outcome = harness.run_experiment(config, started)
    sys.stdout.write(outcome.paths["md"].read_text(encoding="utf-8"))
    for error in outcome.errors:
        print(f"seed failure: {error['at']}: {error['error']}: {error['message']}", file=sys.stderr)
    return 0


@exit_codes
def cmd_report(args) -> int:
    db_path = Path(args.dir) / "results.db"
    if not db_path.exists():
        raise ConfigError(f"no results store at {db_path}")
    records = harness.records_from_store(db_path, args.env)
    if not records:
        raise ConfigError(f"{db_path} holds no runs")
    paths = harness.write_report(Path(args.dir), records)
    sys.stdout.write(paths["md"].read_text(encoding="utf-8"))
    return 0


# ---------- parser ----------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="playtest", description="Update-aware playtesting over a game knowledge graph.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str, env: bool = True, gateway: bool = False, k: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--config", help="experiment TOML (providers, agent settings)")
        if env:
            p.add_argument("--env", choices=ENV_NAMES, default="overcooked_lite")
        if gateway:
            p.add_argument("--gateway", default="mock", help="mock or a configured provider id")
        if k:
            p.add_argument("--k", type=int, default=3, help="hop bound of the impact scope")
            p.add_argument("--direction", default="both", choices=[d.value for d in Direction])
        return p

    p = add("explore", cmd_explore, "collect an exploration corpus with the curiosity agent")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--version")
    p.add_argument("--out")

    p = add("build-graph", cmd_build_graph, "extract triples and construct the knowledge graph", gateway=True)
    p.add_argument("--events")
    p.add_argument("--rules")
    p.add_argument("--version")
    p.add_argument("--out")
    p.add_argument("--batch-out")

    p = add("update", cmd_update, "parse an update log and sync the graph", gateway=True)
    p.add_argument("--version", help="to-version of a shipped update log")
    p.add_argument("--graph")
    p.add_argument("--out")

    p = add("impact", cmd_impact, "print the impact scope of items", k=True)
    p.add_argument("--item", action="append")
    p.add_argument("--graph")

    p = add("gen-tests", cmd_gen_tests, "generate test cases for one update", gateway=True, k=True)
    p.add_argument("--version")
    p.add_argument("--graph")
    p.add_argument("--no-kg", action="store_true")
    p.add_argument("--max-cases", type=int, default=1)
    p.add_argument("--test-improvements", action="store_true")

    p = sub.add_parser("run", help="run an experiment config")
    p.set_defaults(handler=cmd_run)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--gateway")
    p.add_argument("--k", type=int)

    p = sub.add_parser("report", help="re-render the report from a results directory")
    p.set_defaults(handler=cmd_report)
    p.add_argument("--dir", default="out")
    p.add_argument("--env", choices=ENV_NAMES)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
