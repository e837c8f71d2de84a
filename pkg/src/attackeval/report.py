"""Table emission and graph annotation for reports.

Tables are rendered either as CSV or as a structured-text layout (one
``key: value`` block per row). Both carry the same ``#`` preamble lines and
the same fixed column order, and both are byte-stable for equal inputs.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DataError
from .fetch import atomic_write_bytes
from .graph import CausalAttackGraph, NodeAnnotation, with_annotations
from .normalize import Category, NormalizedRound, Outcome
from .steps import step_key

FORMATS = ("csv", "text")


class OutputError(DataError):
    """A report could not be written."""


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    preamble: tuple[str, ...] = ()


def _cell(value) -> str:
    if value is None:
        return ""
    return str(value)


def render(table: Table, fmt: str = "csv") -> str:
    if fmt not in FORMATS:
        raise ConfigError(f"unknown output format {fmt!r}; choose one of {', '.join(FORMATS)}")
    out = io.StringIO()
    for line in table.preamble:
        out.write(f"# {line}\n")
    if fmt == "csv":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])
        return out.getvalue()
    out.write("columns: " + ", ".join(table.columns) + "\n")
    width = max((len(c) for c in table.columns), default=0)
    for index, row in enumerate(table.rows, start=1):
        out.write(f"\n[row {index}]\n")
        for col, value in zip(table.columns, row):
            out.write(f"{col.ljust(width)} : {_cell(value)}\n")
    return out.getvalue()


def write_text(text: str, path: str | Path) -> None:
    try:
        atomic_write_bytes(Path(path), text.encode("utf-8"))
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_table(table: Table, fmt: str = "csv", path: str | Path | None = None) -> str:
    """Render ``table``; when ``path`` is given, write it atomically."""
    text = render(table, fmt)
    if path is not None:
        write_text(text, path)
    return text


def annotate_graph(graph: CausalAttackGraph, rnd: NormalizedRound) -> CausalAttackGraph:
    """Attach per-node visibility across vendors and cumulative block counts.

    Visibility counts vendors that saw the step at Telemetry or above, over
    vendors for which the step was applicable. The block count is the number
    of vendors whose first block, in a protection test containing the step,
    happened at or before it.
    """
    by_step = defaultdict(list)
    for d in rnd.detections:
        by_step[d.step].append(d)
    missing = [n.step for n in graph.nodes if n.step not in by_step]
    if missing:
        raise ConfigError(f"round {rnd.round_id} lacks scenario steps: {', '.join(missing)}")

    test_steps: dict[int, set[str]] = defaultdict(set)
    first_blocks: dict[int, dict[str, str]] = defaultdict(dict)
    for p in rnd.protections:
        test_steps[p.test].add(p.step)
        if p.outcome is Outcome.BLOCKED:
            current = first_blocks[p.test].get(p.vendor)
            if current is None or step_key(p.step) < step_key(current):
                first_blocks[p.test][p.vendor] = p.step

    annotations = {}
    for node in graph.nodes:
        dets = by_step[node.step]
        applicable = [d for d in dets if d.category is not Category.NOT_APPLICABLE]
        seen = sum(1 for d in applicable if d.category.visible)
        tests = [t for t, steps in test_steps.items() if node.step in steps]
        blocks = None
        if tests:
            here = step_key(node.step)
            blocks = len({v for t in tests for v, s in first_blocks[t].items() if step_key(s) <= here})
        annotations[node.step] = NodeAnnotation(seen, len(applicable), blocks)
    return with_annotations(graph, annotations)


def fmt_fraction(value, places: int = 4) -> str:
    """Fixed-decimal rendering for exact fractions (half-up)."""
    from .metrics import round_half_up
    return str(round_half_up(value, places))

