"""Cross-round taxonomy and the one-detection-per-substep collapse."""

from __future__ import annotations

import enum
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import registry
from .errors import UnmappedLabel
from .ingest import EvaluationRound, RawDetectionRecord, Substep
from .steps import step_key

log = logging.getLogger(__name__)

DELAYED = "delayed"
CONFIG_CHANGE = "config-change"
NEGATIVE_MODIFIERS = frozenset({DELAYED, CONFIG_CHANGE})


class Category(enum.Enum):
    NOT_APPLICABLE = "NotApplicable"
    NONE = "NoneDetected"
    TELEMETRY = "Telemetry"
    GENERAL = "General"
    TACTIC = "Tactic"
    TECHNIQUE = "Technique"

    @property
    def rank(self) -> int | None:
        """0..4; ``None`` for NotApplicable, which takes no part in rank comparisons."""
        return _RANKS[self]

    @property
    def visible(self) -> bool:
        return self.rank is not None and self.rank >= 1

    @property
    def analytic(self) -> bool:
        return self.rank is not None and self.rank >= 2

    @classmethod
    def from_rank(cls, rank: int) -> "Category":
        return _BY_RANK[rank]


_RANKS = {
    Category.NOT_APPLICABLE: None,
    Category.NONE: 0,
    Category.TELEMETRY: 1,
    Category.GENERAL: 2,
    Category.TACTIC: 3,
    Category.TECHNIQUE: 4,
}
_BY_RANK = {r: c for c, r in _RANKS.items() if r is not None}


class Outcome(enum.Enum):
    NOT_APPLICABLE = "NotApplicable"
    NONE_BLOCKED = "NoneBlocked"
    BLOCKED = "Blocked"


_PROTECTION_LABELS = {
    "n/a": Outcome.NOT_APPLICABLE,
    "not applicable": Outcome.NOT_APPLICABLE,
    "none": Outcome.NONE_BLOCKED,
    "blocked": Outcome.BLOCKED,
}


def _selection_rank(cat: Category) -> int:
    return -1 if cat.rank is None else cat.rank


@dataclass(frozen=True)
class NormalizedDetection:
    vendor: str
    round_id: str
    step: str
    technique_id: str
    tactic: str
    category: Category
    negative_modifiers: frozenset[str]
    data_sources: tuple[tuple[str, str | None], ...]
    platform: str
    host: str
    technique_name: str = ""
    discarded: int = 0
    # every mapped category reported at this substep, kept for union-style counting
    raw_categories: tuple[Category, ...] = ()

    def __post_init__(self):
        if not self.category.visible and self.negative_modifiers:
            raise ValueError("negative modifiers on a non-visible detection")


@dataclass(frozen=True)
class ProtectionResult:
    vendor: str
    test: int
    step: str
    technique_id: str
    outcome: Outcome
    platform: str
    host: str


@dataclass(frozen=True)
class NormalizedRound:
    round_id: str
    year: int
    participants: tuple[str, ...]
    platform_support: dict[str, frozenset[str]]
    substeps: tuple[Substep, ...]
    detections: tuple[NormalizedDetection, ...]
    protections: tuple[ProtectionResult, ...]
    counting: str
    category_map: str = "builtin"
    legacy_mapped: bool = False
    notices: tuple[str, ...] = field(default=(), compare=False)

    @property
    def info(self) -> registry.RoundInfo:
        return registry.rounds()[self.round_id]

    def for_vendor(self, vendor: str) -> list[NormalizedDetection]:
        return [d for d in self.detections if d.vendor == vendor]

    def platforms(self) -> tuple[str, ...]:
        return tuple(sorted({s.platform for s in self.substeps}))


# -- label mapping -----------------------------------------------------------

def normalize_category(raw_label: str, round_id: str, category_map: registry.CategoryMap | None = None) -> Category:
    rid = registry.resolve_round(round_id)
    cmap = category_map or registry.default_category_map()
    name = cmap.lookup(rid, raw_label)
    if name is None:
        raise UnmappedLabel(raw_label, rid)
    try:
        return Category(name)
    except ValueError:
        raise UnmappedLabel(raw_label, rid) from None


def normalize_modifier(raw_label: str, round_id: str | None = None) -> str | None:
    """Return the negative modifier a label denotes, or ``None`` for any other label."""
    folded = " ".join(raw_label.strip().casefold().split())
    if folded.startswith("delayed"):
        return DELAYED
    if folded.startswith("config change") or folded.startswith("configuration change"):
        return CONFIG_CHANGE
    log.debug("modifier %r (round %s) is not negative; dropped", raw_label, round_id)
    return None


def normalize_protection(raw_label: str) -> Outcome:
    try:
        return _PROTECTION_LABELS[raw_label.strip().casefold()]
    except KeyError:
        raise UnmappedLabel(raw_label, "protection") from None


def split_data_source(raw_label: str) -> tuple[str, str | None]:
    if not raw_label or not raw_label.strip():
        raise ValueError("empty data-source label")
    head, sep, tail = raw_label.partition(":")
    if not sep:
        return raw_label.strip(), None
    return head.strip(), tail.strip() or None


# -- collapse ----------------------------------------------------------------

@dataclass(frozen=True)
class _Candidate:
    category: Category
    negatives: frozenset[str]
    data_sources: tuple[tuple[str, str | None], ...]
    raw_categories: tuple[Category, ...]
    discarded: int = 0


def _collapse(candidates: Sequence[_Candidate]) -> tuple[_Candidate, tuple, tuple, int]:
    best_i = max(
        range(len(candidates)),
        key=lambda i: (_selection_rank(candidates[i].category), -len(candidates[i].negatives), -i),
    )
    best = candidates[best_i]
    sources = tuple(sorted({ds for c in candidates for ds in c.data_sources}, key=lambda p: (p[0], p[1] or "")))
    raw = tuple(sorted((r for c in candidates for r in c.raw_categories), key=_selection_rank))
    visible = sum(1 for c in candidates if c.category.visible)
    discarded = sum(c.discarded for c in candidates) + visible - (1 if best.category.visible else 0)
    return best, sources, raw, discarded


def _raw_candidate(rec: RawDetectionRecord, cmap) -> _Candidate:
    cat = normalize_category(rec.category, rec.round_id, cmap)
    negs = frozenset(filter(None, (normalize_modifier(m, rec.round_id) for m in rec.modifiers)))
    if not cat.visible:
        negs = frozenset()
    sources = tuple(split_data_source(s) for s in rec.data_sources if s and s.strip())
    return _Candidate(cat, negs, sources, (cat,))


def collapse_substep(records: Sequence[RawDetectionRecord],
                     category_map: registry.CategoryMap | None = None) -> NormalizedDetection:
    """Keep the most informative detection for one (vendor, step).

    Highest category rank wins; ties go to fewer negative modifiers, then to
    the earliest record. Data sources of every record are kept.
    """
    if not records:
        raise ValueError("collapse_substep needs at least one record")
    first = records[0]
    if any((r.vendor, r.step) != (first.vendor, first.step) for r in records):
        raise ValueError("records passed to collapse_substep must share (vendor, step)")
    cands = [_raw_candidate(r, category_map) for r in records]
    best, sources, raw, discarded = _collapse(cands)
    return NormalizedDetection(
        vendor=first.vendor, round_id=registry.resolve_round(first.round_id), step=first.step,
        technique_id=first.technique_id, tactic=first.tactic, category=best.category,
        negative_modifiers=best.negatives, data_sources=sources, platform=first.platform,
        host=first.host, technique_name=first.technique_name, discarded=discarded, raw_categories=raw,
    )


# -- whole round -------------------------------------------------------------

def _effective_support(participants, declared, observed) -> dict[str, frozenset[str]]:
    out = {}
    for v in participants:
        out[v] = declared.get(v) or frozenset(observed.get(v, ()))
    return out


def normalize_round(rnd: EvaluationRound | NormalizedRound,
                    category_map: registry.CategoryMap | None = None) -> NormalizedRound:
    """Map labels, collapse every (vendor, step), and fill gaps explicitly.

    A vendor lacking any record for a substep gets NotApplicable when it does
    not support the substep's platform and NoneDetected otherwise. Applying
    this to an already normalized round returns an equal round.
    """
    cmap = category_map or registry.default_category_map()
    notices: list[str] = []
    substeps = {s.step: s for s in rnd.substeps}

    groups: dict[tuple[str, str], list[tuple[object, _Candidate]]] = defaultdict(list)
    observed: dict[str, set[str]] = defaultdict(set)
    legacy = False
    if isinstance(rnd, NormalizedRound):
        for d in rnd.detections:
            cand = _Candidate(d.category, d.negative_modifiers, d.data_sources, d.raw_categories, d.discarded)
            groups[(d.vendor, d.step)].append((d, cand))
            if d.category is not Category.NOT_APPLICABLE:
                observed[d.vendor].add(d.platform)
        legacy = rnd.legacy_mapped
        declared = rnd.platform_support
    else:
        unmapped = Counter()
        for rec in rnd.detections:
            try:
                cand = _raw_candidate(rec, cmap)
            except UnmappedLabel:
                unmapped[rec.category] += 1
                continue
            if cmap.is_legacy(rnd.round_id, rec.category):
                legacy = True
            groups[(rec.vendor, rec.step)].append((rec, cand))
            if cand.category is not Category.NOT_APPLICABLE:
                observed[rec.vendor].add(rec.platform)
        for label, n in sorted(unmapped.items()):
            notices.append(f"excluded {n} records with unmapped category {label!r}")
        declared = rnd.platform_support

    support = _effective_support(rnd.participants, declared, observed)

    detections = []
    filled = Counter()
    for vendor in rnd.participants:
        for step, sub in substeps.items():
            items = groups.get((vendor, step))
            if not items:
                cat = Category.NONE if sub.platform in support[vendor] else Category.NOT_APPLICABLE
                filled[cat] += 1
                detections.append(NormalizedDetection(
                    vendor=vendor, round_id=rnd.round_id, step=step, technique_id=sub.technique_id,
                    tactic=sub.tactic, category=cat, negative_modifiers=frozenset(), data_sources=(),
                    platform=sub.platform, host=sub.host, technique_name=sub.technique_name,
                    raw_categories=(),
                ))
                continue
            best, sources, raw, discarded = _collapse([c for _, c in items])
            origin = items[0][0]
            detections.append(NormalizedDetection(
                vendor=vendor, round_id=rnd.round_id, step=step, technique_id=origin.technique_id,
                tactic=origin.tactic, category=best.category, negative_modifiers=best.negatives,
                data_sources=sources, platform=origin.platform, host=origin.host,
                technique_name=origin.technique_name, discarded=discarded, raw_categories=raw,
            ))
    for cat, n in sorted(filled.items(), key=lambda kv: kv[0].value):
        notices.append(f"filled {n} missing (vendor, substep) pairs with {cat.value}")
    detections.sort(key=lambda d: (d.vendor, step_key(d.step)))

    protections = _normalize_protections(rnd, notices)
    return NormalizedRound(
        round_id=rnd.round_id,
        year=rnd.year,
        participants=tuple(rnd.participants),
        platform_support=support,
        substeps=tuple(rnd.substeps),
        detections=tuple(detections),
        protections=protections,
        counting=registry.rounds()[rnd.round_id].counting,
        category_map=rnd.category_map if isinstance(rnd, NormalizedRound) else f"{cmap.source}@{cmap.digest}",
        legacy_mapped=legacy,
        notices=tuple(notices),
    )


def _normalize_protections(rnd, notices) -> tuple[ProtectionResult, ...]:
    results = []
    unmapped = Counter()
    for p in rnd.protections:
        if isinstance(p, ProtectionResult):
            results.append(p)
            continue
        try:
            outcome = normalize_protection(p.category)
        except UnmappedLabel:
            unmapped[p.category] += 1
            continue
        results.append(ProtectionResult(p.vendor, p.test, p.step, p.technique_id, outcome, p.platform, p.host))
    for label, n in sorted(unmapped.items()):
        notices.append(f"excluded {n} protection records with unmapped category {label!r}")

    results.sort(key=lambda r: (r.vendor, r.test, step_key(r.step)))
    out = []
    blocked: set[tuple[str, int]] = set()
    demoted = 0
    for r in results:
        key = (r.vendor, r.test)
        if r.outcome is Outcome.BLOCKED:
            if key in blocked:
                r = replace(r, outcome=Outcome.NOT_APPLICABLE)
                demoted += 1
            else:
                blocked.add(key)
        out.append(r)
    if demoted:
        notices.append(f"{demoted} Blocked outcomes after a test's first block treated as NotApplicable")
    return tuple(out)


def protections_by_test(results: Iterable[ProtectionResult]) -> dict[int, list[ProtectionResult]]:
    out: dict[int, list[ProtectionResult]] = defaultdict(list)
    for r in results:
        out[r.test].append(r)
    return dict(sorted(out.items()))
