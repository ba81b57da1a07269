from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

from errors import UnknownEntry, UnknownVersion, VersionExists

logger = logging.getLogger(__name__)


def freeze(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return MappingProxyType({k: freeze(v) for k, v in obj.items()})
    if isinstance(obj, (list, tuple)):
        return tuple(freeze(v) for v in obj)
    return obj


def thaw(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: thaw(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [thaw(v) for v in obj]
    return obj


def entry_key(text: str) -> str:
    """Stable key for an update-log entry: hash of its case-folded, whitespace-collapsed text."""
    norm = " ".join(str(text).casefold().split())
    return hashlib.sha256(norm.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class RuleTable:
    version: str
    data: Mapping

    def __getitem__(self, key: str):
        return self.data[key]

    def get(self, key: str, default=None):
        return self.data.get(key, default)


@dataclass(frozen=True)
class VersionedRules:
    tables: Mapping[str, RuleTable]
    chain: tuple[tuple[str, str], ...]
    patches: Mapping[str, tuple]

    @property
    def versions(self) -> list[str]:
        return list(self.tables)

    def table(self, version: str) -> RuleTable:
        try:
            return self.tables[version]
        except KeyError:
            raise UnknownVersion(f"no rule table for version {version!r}") from None


# ---------- patch ops ----------
def _walk(data: dict, path: list[str], create: bool = False):
    node = data
    for key in path:
        if key not in node:
            if not create:
                raise KeyError("/".join(path))
            node[key] = {}
        node = node[key]
    return node


def apply_op(data: dict, op: Mapping):
    kind, path = op["op"], list(op["path"])
    if kind == "set":
        parent = _walk(data, path[:-1], create=True)
        parent[path[-1]] = thaw(op["value"])
    elif kind == "delete":
        parent = _walk(data, path[:-1])
        parent.pop(path[-1], None)
    elif kind == "append":
        target = _walk(data, path)
        if op["value"] not in target:
            target.append(thaw(op["value"]))
    elif kind == "insert":
        target = _walk(data, path)
        if op["value"] not in target:
            target.insert(int(op["index"]), thaw(op["value"]))
    elif kind == "remove":
        target = _walk(data, path)
        if op["value"] in target:
            target.remove(op["value"])
    elif kind == "append_each":
        # append ``value`` to the ``field`` list of every entry under ``path``
        for entry in _walk(data, path).values():
            if op["value"] not in entry[op["field"]]:
                entry[op["field"]].append(op["value"])
    else:
        raise ValueError(f"unknown patch op {kind!r}")


def apply_update(version_rules: VersionedRules, update_log) -> VersionedRules:
    """Derive ``update_log.to_version`` by applying each entry's shipped patch in order."""
    if update_log.to_version in version_rules.tables:
        raise VersionExists(f"version {update_log.to_version} already present")
    base = version_rules.table(update_log.from_version)
    data = thaw(base.data)
    for entry in update_log.entries:
        ops = version_rules.patches.get(entry_key(entry.text))
        if ops is None:
            raise UnknownEntry(f"no shipped patch for entry {entry.text!r}")
        for op in ops:
            apply_op(data, op)
    tables = dict(version_rules.tables)
    tables[update_log.to_version] = RuleTable(update_log.to_version, freeze(data))
    logger.debug("derived rules %s -> %s", update_log.from_version, update_log.to_version)
    return VersionedRules(
        tables=MappingProxyType(tables),
        chain=version_rules.chain + ((update_log.from_version, update_log.to_version),),
        patches=version_rules.patches,
    )


def load_patches(path: Path) -> Mapping[str, tuple]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    patches = {entry_key(p["entry"]): freeze(p["ops"]) for p in doc["patches"]}
    if len(patches) != doc["manifest"]["patches"]:
        raise ValueError(f"{path}: manifest declares {doc['manifest']['patches']} patches, found {len(patches)}")
    return MappingProxyType(patches)


def load_rules(data_dir: Path, update_documents: list[str]) -> VersionedRules:
    """Base table plus every shipped update applied in chain order."""
    from update_pipeline import parse_update_log

    base = json.loads((Path(data_dir) / "rules.json").read_text(encoding="utf-8"))
    rules = VersionedRules(
        tables=MappingProxyType({base["version"]: RuleTable(base["version"], freeze(base["table"]))}),
        chain=(),
        patches=load_patches(Path(data_dir) / "patches.json"),
    )
    for text in update_documents:
        rules = apply_update(rules, parse_update_log(text))
    return rules
