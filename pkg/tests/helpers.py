"""Small builders for in-memory rounds and graphs used across tests."""

from __future__ import annotations

import json

from attackeval.graph import CausalAttackGraph, Edge, ScenarioStep
from attackeval.ingest import parse_lines
from attackeval.normalize import Category, NormalizedDetection, normalize_round


def lines_for(round_id, cells, vendors=None, platforms=("windows",), protections=()):
    """Ingestion lines. ``cells`` is a list of (vendor, step, category[, modifiers[, data_sources]])."""
    vendors = vendors or sorted({c[0] for c in cells} | {p[0] for p in protections})
    out = [json.dumps({"record": "round", "round": round_id})]
    for v in vendors:
        out.append(json.dumps({"record": "participant", "vendor": v, "platforms": list(platforms)}))
    for cell in cells:
        vendor, step, category = cell[:3]
        mods = cell[3] if len(cell) > 3 else []
        ds = cell[4] if len(cell) > 4 else []
        out.append(json.dumps({
            "record": "detection", "vendor": vendor, "step": step, "technique_id": "T1059",
            "category": category, "modifiers": list(mods), "data_sources": list(ds),
            "platform": "windows", "host": "h1"}))
    for vendor, test, step, category in protections:
        out.append(json.dumps({
            "record": "protection", "vendor": vendor, "test": test, "step": step, "technique_id": "T1059",
            "category": category, "platform": "windows", "host": "h1"}))
    return out


def normalized(round_id, cells, **kw):
    return normalize_round(parse_lines(lines_for(round_id, cells, **kw)))


def det(category, step="1.A.1", vendor="v", modifiers=(), technique="T1059", platform="windows"):
    return NormalizedDetection(
        vendor=vendor, round_id="wizard_spider_sandworm", step=step, technique_id=technique,
        tactic="Execution", category=category, negative_modifiers=frozenset(modifiers),
        data_sources=(), platform=platform, host="h1", raw_categories=(category,))


def make_graph(n, edges, host="h"):
    """Graph with nodes 1.A.1..1.A.n (ordinal = index) and the given (i, j) index edges, i < j."""
    nodes = tuple(ScenarioStep(step=f"1.A.{i + 1}", technique_id="T1059", action="other", host=host,
                               ordinal=i + 1, subject="process:p") for i in range(n))
    es = tuple(Edge(f"1.A.{a + 1}", f"1.A.{b + 1}", "control") for a, b in sorted(edges))
    return CausalAttackGraph(nodes=nodes, edges=es)


CATS = [Category.NOT_APPLICABLE, Category.NONE, Category.TELEMETRY, Category.GENERAL,
        Category.TACTIC, Category.TECHNIQUE]
