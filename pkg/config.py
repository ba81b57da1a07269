from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from agents import CuriosityConfig, GaConfig
from errors import ConfigError
from kg_core import Direction, TraversalPolicy

logger = logging.getLogger(__name__)

ENV_NAMES = ("overcooked_lite", "craftworld")
METHODS = ("random", "ga", "curiosity", "klpeg", "klpeg_no_kg")
TIMINGS = ("wall", "off")


@dataclass(frozen=True)
class ProviderConfig:
    """Chat-completion endpoint settings. The token itself never lives here."""

    id: str
    endpoint: str
    model: str
    token_env: str = "PLAYTEST_LLM_TOKEN"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    max_in_flight: int = 4
    native_tools: bool = False


@dataclass(frozen=True)
class GatewayConfig:
    provider: str = "mock"
    max_tool_rounds: int = 8


@dataclass(frozen=True)
class PipelineConfig:
    max_cases_per_entry: int = 1
    test_improvements: bool = False


@dataclass(frozen=True)
class RandomConfig:
    max_steps: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    method: str
    seeds: tuple[int, ...] = tuple(range(1, 21))
    updates: tuple[str, ...] = ()
    output_dir: Path = Path("out")
    workers: int = 4
    timing: str = "wall"
    traversal: TraversalPolicy = field(default_factory=TraversalPolicy)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    providers: dict = field(default_factory=dict)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    random: RandomConfig = field(default_factory=RandomConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    curiosity: CuriosityConfig = field(default_factory=CuriosityConfig)

    @property
    def gateway_label(self) -> str:
        if self.gateway.provider == "mock":
            return "mock"
        return self.providers[self.gateway.provider].model


def _section(cls, raw: dict | None, name: str, **extra):
    """Build dataclass ``cls`` from a TOML table, rejecting unknown keys."""
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {', '.join(unknown)}")
    try:
        return cls(**raw, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _traversal(raw: dict | None) -> TraversalPolicy:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - {"max_hops", "direction", "relation_filter"})
    if unknown:
        raise ConfigError(f"[traversal] has unknown keys: {', '.join(unknown)}")
    try:
        return TraversalPolicy(
            max_hops=int(raw.get("max_hops", 3)),
            direction=Direction(str(raw.get("direction", "both")).lower()),
            relation_filter=frozenset(raw.get("relation_filter", ())),
        )
    except ValueError as exc:
        raise ConfigError(f"[traversal] {exc}") from exc


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    base_dir = base_dir or Path.cwd()
    unknown = sorted(set(doc) - {"experiment", "traversal", "gateway", "providers",
                                 "pipeline", "random", "ga", "curiosity"})
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")

    exp = dict(doc.get("experiment") or {})
    env = exp.pop("env", None)
    method = exp.pop("method", None)
    if env not in ENV_NAMES:
        raise ConfigError(f"experiment.env must be one of {ENV_NAMES}, got {env!r}")
    if method not in METHODS:
        raise ConfigError(f"experiment.method must be one of {METHODS}, got {method!r}")

    seeds = tuple(int(s) for s in exp.pop("seeds", range(1, 21)))
    if not seeds:
        raise ConfigError("experiment.seeds must not be empty")
    updates = tuple(str(u) for u in exp.pop("updates", ()))
    if not updates:
        raise ConfigError("experiment.updates must list at least one to-version")
    output_dir = Path(exp.pop("output_dir", "out"))
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir
    workers = int(exp.pop("workers", 4))
    timing = str(exp.pop("timing", "wall"))
    if timing not in TIMINGS:
        raise ConfigError(f"experiment.timing must be one of {TIMINGS}")
    if workers < 1:
        raise ConfigError("experiment.workers must be >= 1")
    if exp:
        raise ConfigError(f"[experiment] has unknown keys: {', '.join(sorted(exp))}")

    providers = {
        pid: _section(ProviderConfig, raw, f"providers.{pid}", id=pid)
        for pid, raw in sorted((doc.get("providers") or {}).items())
    }
    gateway = _section(GatewayConfig, doc.get("gateway"), "gateway")
    if gateway.provider != "mock" and gateway.provider not in providers:
        raise ConfigError(f"gateway.provider {gateway.provider!r} has no [providers.{gateway.provider}] table")
    if gateway.max_tool_rounds < 1:
        raise ConfigError("gateway.max_tool_rounds must be >= 1")

    random_cfg = _section(RandomConfig, doc.get("random"), "random")
    if random_cfg.max_steps < 1:
        raise ConfigError("random.max_steps must be >= 1")

    return ExperimentConfig(
        env=env,
        method=method,
        seeds=seeds,
        updates=updates,
        output_dir=output_dir,
        workers=workers,
        timing=timing,
        traversal=_traversal(doc.get("traversal")),
        gateway=gateway,
        providers=providers,
        pipeline=_section(PipelineConfig, doc.get("pipeline"), "pipeline"),
        random=random_cfg,
        ga=_section(GaConfig, doc.get("ga"), "ga"),
        curiosity=_section(CuriosityConfig, doc.get("curiosity"), "curiosity"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    config = parse_config(doc, base_dir=path.parent)
    logger.info("loaded %s config for %s (%d seeds)", config.method, config.env, len(config.seeds))
    return config
