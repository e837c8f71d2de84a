"""Static tables checked into the package: rounds, label mappings, technique kinds."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class RoundInfo:
    round_id: str
    year: int
    title: str
    adversaries: tuple[str, ...]
    aliases: tuple[str, ...]
    platforms: tuple[str, ...]
    counting: str  # "all": every detection counted; "max": one per substep
    has_data_sources: bool
    protection_tests: int | None
    categories: frozenset[str]
    modifiers: frozenset[str]
    protection_categories: frozenset[str]


def _read_data(name: str) -> bytes:
    return resources.files("attackeval").joinpath("data", name).read_bytes()


@lru_cache(maxsize=None)
def rounds() -> dict[str, RoundInfo]:
    raw = json.loads(_read_data("registry.json"))
    out = {}
    for rid, r in raw["rounds"].items():
        out[rid] = RoundInfo(
            round_id=rid,
            year=r["year"],
            title=r["title"],
            adversaries=tuple(r["adversaries"]),
            aliases=tuple(r["aliases"]),
            platforms=tuple(r["platforms"]),
            counting=r["counting"],
            has_data_sources=r["has_data_sources"],
            protection_tests=r["protection_tests"],
            categories=frozenset(r["categories"]),
            modifiers=frozenset(r["modifiers"]),
            protection_categories=frozenset(r["protection_categories"]),
        )
    return out


def resolve_round(name: str) -> str:
    """Map a round id or alias to its canonical id."""
    table = rounds()
    key = name.strip().lower()
    if key in table:
        return key
    for rid, info in table.items():
        if key in info.aliases:
            return rid
    raise ConfigError(f"unknown round {name!r}; known rounds: {', '.join(sorted(table))}")


def round_info(name: str) -> RoundInfo:
    return rounds()[resolve_round(name)]


@dataclass(frozen=True)
class CategoryMap:
    """Per-round raw label -> normalized category name tables."""

    tables: dict[str, dict[str, str]]
    legacy: dict[str, frozenset[str]] = field(default_factory=dict)
    source: str = "builtin"
    digest: str = ""

    def lookup(self, round_id: str, label: str) -> str | None:
        table = self.tables.get(round_id, {})
        if label in table:
            return table[label]
        folded = label.strip().casefold()
        for raw, cat in table.items():
            if raw.casefold() == folded:
                return cat
        return None

    def is_legacy(self, round_id: str, label: str) -> bool:
        folded = label.strip().casefold()
        return any(x.casefold() == folded for x in self.legacy.get(round_id, ()))


def _category_map_from(doc: dict, source: str, digest: str, base: CategoryMap | None = None) -> CategoryMap:
    tables = {k: dict(v) for k, v in base.tables.items()} if base else {}
    legacy = dict(base.legacy) if base else {}
    for key, body in doc.get("rounds", {}).items():
        rid = resolve_round(key)
        labels = body.get("labels", {})
        if not isinstance(labels, dict):
            raise ConfigError(f"{source}: 'labels' for round {key} must be an object")
        tables.setdefault(rid, {}).update(labels)
        if "legacy" in body:
            legacy[rid] = frozenset(body["legacy"])
    return CategoryMap(tables=tables, legacy=legacy, source=source, digest=digest)


@lru_cache(maxsize=None)
def default_category_map() -> CategoryMap:
    data = _read_data("category_map.json")
    return _category_map_from(json.loads(data), "builtin", hashlib.sha256(data).hexdigest()[:12])


def load_category_map(path: str | Path | None) -> CategoryMap:
    """Builtin table, optionally overlaid label-by-label with a user file."""
    if path is None:
        return default_category_map()
    path = Path(path)
    try:
        data = path.read_bytes()
        doc = json.loads(data)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read category map {path}: {exc}") from exc
    return _category_map_from(doc, str(path), hashlib.sha256(data).hexdigest()[:12], default_category_map())


@dataclass(frozen=True)
class ClassificationTable:
    kinds: dict[str, str]  # technique id (no sub-technique suffix) -> descriptive|causal

    def lookup(self, technique_id: str) -> str | None:
        if technique_id in self.kinds:
            return self.kinds[technique_id]
        return self.kinds.get(technique_id.split(".")[0])


def _classification_from(doc: dict) -> dict[str, str]:
    kinds = {}
    for kind in ("descriptive", "causal"):
        for tid in doc.get(kind, {}):
            kinds[tid] = kind
    return kinds


@lru_cache(maxsize=None)
def default_classification() -> ClassificationTable:
    return ClassificationTable(_classification_from(json.loads(_read_data("technique_kinds.json"))))


def load_classification(path: str | Path | None) -> ClassificationTable:
    if path is None:
        return default_classification()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read classification table {path}: {exc}") from exc
    kinds = dict(default_classification().kinds)
    kinds.update(_classification_from(doc))
    return ClassificationTable(kinds)
