from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from extractors import LogEvent, SourceKind
from game_envs.base import EnvState


@dataclass(frozen=True)
class TraceStep:
    index: int
    action: str
    valid: bool
    reward: float
    events: tuple[LogEvent, ...]
    elements: tuple[str, ...]
    state: EnvState

    @property
    def digest(self) -> str:
        return self.state.digest()

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "action": self.action,
            "valid": self.valid,
            "reward": self.reward,
            "events": [e.text for e in self.events],
            "elements": list(self.elements),
            "digest": self.digest,
            "state": self.state.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TraceStep":
        state = EnvState.from_dict(doc["state"])
        return cls(
            index=int(doc["index"]),
            action=doc["action"],
            valid=bool(doc["valid"]),
            reward=float(doc["reward"]),
            events=tuple(LogEvent(SourceKind.GAME_LOG, t, state.step) for t in doc["events"]),
            elements=tuple(doc["elements"]),
            state=state,
        )


@dataclass(frozen=True)
class RunTrace:
    env: str
    version: str
    seed: int
    label: str
    initial: EnvState
    steps: tuple[TraceStep, ...] = ()
    flags: frozenset[str] = field(default_factory=frozenset)

    @property
    def cumulative_reward(self) -> float:
        return round(sum(s.reward for s in self.steps), 6)

    @property
    def final_state(self) -> EnvState:
        return self.steps[-1].state if self.steps else self.initial

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "version": self.version,
            "seed": self.seed,
            "label": self.label,
            "cumulative_reward": self.cumulative_reward,
            "flags": sorted(self.flags),
            "initial": self.initial.to_dict(),
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunTrace":
        return cls(
            env=doc["env"],
            version=doc["version"],
            seed=int(doc["seed"]),
            label=doc["label"],
            initial=EnvState.from_dict(doc["initial"]),
            steps=tuple(TraceStep.from_dict(s) for s in doc["steps"]),
            flags=frozenset(doc.get("flags", ())),
        )


def dump_traces(traces: Iterable[RunTrace], path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n")


def load_traces(path: Path) -> list[RunTrace]:
    with Path(path).open(encoding="utf-8") as fh:
        return [RunTrace.from_dict(json.loads(line)) for line in fh if line.strip()]
