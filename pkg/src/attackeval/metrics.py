"""Per-scope scores, quadrants, distributions, census, compatibility, protection rates.

All ratios are kept as exact fractions with their numerator and denominator;
a zero denominator gives an undefined ratio rather than a zero.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import EmptyScopeError, UndefinedScoreError
from .normalize import Category, NormalizedDetection, NormalizedRound, Outcome, ProtectionResult
from .steps import step_key

SCOPE_KINDS = ("vendor", "technique", "tactic", "platform", "round")
DEFAULT_WEIGHTS = (4, 3, 2, 1)


def round_half_up(value: Fraction | Decimal | float, places: int = 1) -> Decimal:
    q = Decimal(1).scaleb(-places)
    if isinstance(value, Fraction):
        return (Decimal(value.numerator) / Decimal(value.denominator)).quantize(q, rounding=ROUND_HALF_UP)
    if isinstance(value, Decimal):
        return value.quantize(q, rounding=ROUND_HALF_UP)
    return Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class Ratio:
    numerator: int
    denominator: int

    @property
    def defined(self) -> bool:
        return self.denominator != 0

    @property
    def value(self) -> Fraction:
        if not self.denominator:
            raise UndefinedScoreError(f"ratio {self.numerator}/0 is undefined")
        return Fraction(self.numerator, self.denominator)

    def __float__(self) -> float:
        return float(self.value)

    def percent(self, places: int = 1) -> Decimal:
        """Percentage rounded half-up (0.1 pp by default)."""
        return round_half_up(self.value * 100, places)


@dataclass(frozen=True)
class Scope:
    kind: str
    key: str

    def __post_init__(self):
        if self.kind not in SCOPE_KINDS:
            raise ValueError(f"unknown scope kind {self.kind!r}")

    def __str__(self):
        return f"{self.kind}={self.key}"


def scope_value(d: NormalizedDetection, kind: str) -> str:
    if kind == "vendor":
        return d.vendor
    if kind == "technique":
        return d.technique_id
    if kind == "tactic":
        return d.tactic
    if kind == "platform":
        return d.platform
    if kind == "round":
        return d.round_id
    raise ValueError(f"unknown scope kind {kind!r}")


def na_counts_in_total(kind: str) -> bool:
    """Vendor scopes keep NotApplicable substeps in S_t; all other scopes drop them."""
    return kind == "vendor"


@dataclass(frozen=True)
class ScopeTally:
    scope: Scope
    total: int  # S_t
    visible: int  # S_v == D_v
    analytic: int  # S_a
    unmodified: int  # S_m
    technique: int  # D_te
    tactic: int  # D_ta
    general: int  # D_ge
    telemetry: int  # D_tel
    discarded: int = 0

    def __post_init__(self):
        if not (self.visible <= self.total and self.analytic <= self.visible and self.unmodified <= self.visible):
            raise ValueError(f"inconsistent tally counts for {self.scope}")
        if self.technique + self.tactic + self.general + self.telemetry != self.visible:
            raise ValueError(f"category counts do not sum to visible substeps for {self.scope}")
        if self.technique + self.tactic + self.general != self.analytic:
            raise ValueError(f"analytic count disagrees with category counts for {self.scope}")


def tally(detections: Iterable[NormalizedDetection], scope: Scope, *,
          include_not_applicable: bool | None = None, platform: str | None = None) -> ScopeTally:
    """Count the substeps of one scope.

    ``include_not_applicable`` defaults per scope kind (see
    :func:`na_counts_in_total`). ``platform`` further restricts to one platform.
    """
    if include_not_applicable is None:
        include_not_applicable = na_counts_in_total(scope.kind)
    matched = 0
    counts = Counter()
    total = unmodified = discarded = 0
    for d in detections:
        if scope_value(d, scope.kind) != scope.key:
            continue
        if platform is not None and d.platform != platform:
            continue
        matched += 1
        if d.category is Category.NOT_APPLICABLE:
            if include_not_applicable:
                total += 1
            continue
        total += 1
        counts[d.category] += 1
        discarded += d.discarded
        if d.category.visible and not d.negative_modifiers:
            unmodified += 1
    if not matched:
        raise EmptyScopeError(scope)
    te, ta, ge, tel = (counts[c] for c in (Category.TECHNIQUE, Category.TACTIC, Category.GENERAL, Category.TELEMETRY))
    return ScopeTally(scope=scope, total=total, visible=te + ta + ge + tel, analytic=te + ta + ge,
                      unmodified=unmodified, technique=te, tactic=ta, general=ge, telemetry=tel,
                      discarded=discarded)


def visibility(t: ScopeTally) -> Ratio:
    return Ratio(t.visible, t.total)


def analytic_coverage(t: ScopeTally) -> Ratio:
    return Ratio(t.analytic, t.visible)


def check_weights(weights: Sequence[int]) -> tuple[int, int, int, int]:
    w = tuple(weights)
    if len(w) != 4 or any(not isinstance(x, int) or x <= 0 for x in w):
        raise ValueError("confidence weights must be four positive integers")
    if not (w[0] > w[1] > w[2] > w[3]):
        raise ValueError("confidence weights must be strictly decreasing (technique, tactic, general, telemetry)")
    return w


def confidence(t: ScopeTally, weights: Sequence[int] = DEFAULT_WEIGHTS) -> Ratio:
    w1, w2, w3, w4 = check_weights(weights)
    num = w1 * t.technique + w2 * t.tactic + w3 * t.general + w4 * t.telemetry
    return Ratio(num, w1 * t.visible)


def quality(t: ScopeTally) -> Ratio:
    return Ratio(t.unmodified, t.visible)


@dataclass(frozen=True)
class MetricScore:
    visibility: Ratio
    analytic: Ratio
    confidence: Ratio
    quality: Ratio

    def get(self, metric: str) -> Ratio:
        return getattr(self, metric)


METRICS = ("visibility", "analytic", "confidence", "quality")


def score(t: ScopeTally, weights: Sequence[int] = DEFAULT_WEIGHTS) -> MetricScore:
    return MetricScore(visibility(t), analytic_coverage(t), confidence(t, weights), quality(t))


def scope_keys(rnd: NormalizedRound, kind: str) -> list[str]:
    keys = {scope_value(d, kind) for d in rnd.detections}
    if kind == "vendor":
        keys |= set(rnd.participants)
    return sorted(keys)


def score_scopes(rnd: NormalizedRound, kind: str, weights: Sequence[int] = DEFAULT_WEIGHTS,
                 platform: str | None = None) -> list[tuple[ScopeTally, MetricScore]]:
    """Tally and score every key of one scope kind, sorted by key."""
    grouped: dict[str, list[NormalizedDetection]] = defaultdict(list)
    for d in rnd.detections:
        grouped[scope_value(d, kind)].append(d)
    out = []
    for key in sorted(grouped):
        try:
            t = tally(grouped[key], Scope(kind, key), platform=platform)
        except EmptyScopeError:
            continue
        out.append((t, score(t, weights)))
    return out


# -- MITRE's own summary counts ---------------------------------------------

@dataclass(frozen=True)
class MitreSummary:
    telemetry_coverage: int
    analytic_coverage: int
    visibility: int
    detection_count: int


def mitre_summary(detections: Iterable[NormalizedDetection], counting: str = "max") -> MitreSummary:
    """Telemetry coverage, analytic coverage, visibility and detection count for one vendor.

    ``counting="max"`` applies the one-detection-per-substep rule, so
    visibility is the sum of the two coverages and equals detection count.
    ``counting="all"`` counts a substep in every coverage any of its
    detections reached; visibility is then their union and detection count
    includes every detection made.
    """
    tel = ana = vis = count = 0
    for d in detections:
        if counting == "max":
            if d.category is Category.TELEMETRY:
                tel += 1
            elif d.category.analytic:
                ana += 1
            if d.category.visible:
                vis += 1
                count += 1
        elif counting == "all":
            raw = d.raw_categories or (d.category,)
            has_tel = any(c is Category.TELEMETRY for c in raw)
            has_ana = any(c.analytic for c in raw)
            tel += has_tel
            ana += has_ana
            if d.category.visible:
                vis += 1
                count += 1 + d.discarded
        else:
            raise ValueError(f"unknown counting semantics {counting!r}")
    return MitreSummary(tel, ana, vis, count)


# -- quadrants ---------------------------------------------------------------

QUADRANTS = ("top-right", "top-left", "bottom-right", "bottom-left")


@dataclass(frozen=True)
class QuadrantAssignment:
    key: str
    visibility: Fraction
    analytic: Fraction
    quadrant: str
    mean_visibility: Fraction
    mean_analytic: Fraction


def _frac(x) -> Fraction:
    if isinstance(x, Ratio):
        return x.value
    return Fraction(x)


def quadrant_of(v, a, mean_v, mean_a) -> str:
    vertical = "top" if a >= mean_a else "bottom"
    horizontal = "right" if v >= mean_v else "left"
    return f"{vertical}-{horizontal}"


def quadrant_assign(scores: Sequence[tuple[str, object, object]], *,
                    means: tuple[object, object] | None = None,
                    notices: list[str] | None = None) -> list[QuadrantAssignment]:
    """Classify each ``(key, V, A)`` against the population means.

    Undefined scores (``None`` or an undefined :class:`Ratio`) are excluded
    and reported through ``notices``. ``means`` overrides the computed means.
    """
    kept = []
    for key, v, a in scores:
        if v is None or a is None or (isinstance(v, Ratio) and not v.defined) or (isinstance(a, Ratio) and not a.defined):
            if notices is not None:
                notices.append(f"{key}: excluded from quadrant analysis (undefined score)")
            continue
        kept.append((key, _frac(v), _frac(a)))
    if not kept:
        raise ValueError("quadrant analysis needs at least one scope with defined scores")
    if means is None:
        mean_v = sum((v for _, v, _ in kept), Fraction(0)) / len(kept)
        mean_a = sum((a for _, _, a in kept), Fraction(0)) / len(kept)
    else:
        mean_v, mean_a = _frac(means[0]), _frac(means[1])
    out = [QuadrantAssignment(k, v, a, quadrant_of(v, a, mean_v, mean_a), mean_v, mean_a) for k, v, a in kept]
    return sorted(out, key=lambda q: q.key)


# -- distributions -----------------------------------------------------------

@dataclass(frozen=True)
class FiveNumber:
    n: int
    minimum: Fraction
    q1: Fraction
    median: Fraction
    q3: Fraction
    maximum: Fraction
    mean: Fraction
    std: float  # population standard deviation


def _median(xs: Sequence[Fraction]) -> Fraction:
    n = len(xs)
    mid = n // 2
    return xs[mid] if n % 2 else (xs[mid - 1] + xs[mid]) / 2


def five_number(values: Iterable) -> FiveNumber | None:
    """Min, quartiles, max, mean and population std.

    Quartiles use the inclusive-median method: with an odd count the median
    belongs to both halves.
    """
    xs = sorted(_frac(v) for v in values)
    n = len(xs)
    if not n:
        return None
    half = n // 2
    lower = xs[: half + (n % 2)]
    upper = xs[half:]
    mean = sum(xs, Fraction(0)) / n
    var = sum(((x - mean) ** 2 for x in xs), Fraction(0)) / n
    return FiveNumber(n, xs[0], _median(lower), _median(xs), _median(upper), xs[-1], mean, math.sqrt(var))


@dataclass(frozen=True)
class TrendRow:
    round_id: str
    year: int
    metric: str
    scope_kind: str
    summary: FiveNumber | None


def population(rnd: NormalizedRound, kind: str, metric: str,
               weights: Sequence[int] = DEFAULT_WEIGHTS) -> list[Fraction]:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    out = []
    for _, s in score_scopes(rnd, kind, weights):
        r = s.get(metric)
        if r.defined:
            out.append(r.value)
    return out


def trend_summary(rounds: Sequence[NormalizedRound], metric: str, kind: str = "technique",
                  weights: Sequence[int] = DEFAULT_WEIGHTS) -> list[TrendRow]:
    if not rounds:
        raise ValueError("trend_summary needs at least one round")
    rows = [TrendRow(r.round_id, r.year, metric, kind, five_number(population(r, kind, metric, weights)))
            for r in rounds]
    return sorted(rows, key=lambda t: (t.year, t.round_id))


# -- data sources ------------------------------------------------------------

@dataclass(frozen=True)
class DataSourceCensus:
    distinct: int
    ranked: tuple[tuple[str, int], ...]
    notice: str | None = None

    def top(self, k: int = 5) -> list[str]:
        return [name for name, _ in self.ranked[:k]]


def data_source_census(rnd: NormalizedRound) -> DataSourceCensus:
    """Distinct data-source categories and their frequency ranking.

    Each (category, sub-category) pair listed on a collapsed detection counts
    once toward its category.
    """
    freq = Counter()
    for d in rnd.detections:
        for cat, _sub in d.data_sources:
            freq[cat] += 1
    if not freq:
        return DataSourceCensus(0, (), f"no data source information in {rnd.round_id}")
    ranked = tuple(sorted(freq.items(), key=lambda kv: (-kv[1], kv[0])))
    return DataSourceCensus(len(freq), ranked)


# -- platform compatibility --------------------------------------------------

@dataclass(frozen=True)
class Compatibility:
    support: dict[str, Ratio]  # platform -> supporting vendors / participants
    supported: dict[str, tuple[str, ...]]
    scores: dict[tuple[str, str], tuple[ScopeTally, MetricScore]]  # (vendor, platform), supporting vendors only


def supports(detections: Iterable[NormalizedDetection], vendor: str, platform: str) -> bool:
    return any(d.vendor == vendor and d.platform == platform and d.category is not Category.NOT_APPLICABLE
               for d in detections)


def platform_compatibility(rnd: NormalizedRound, weights: Sequence[int] = DEFAULT_WEIGHTS) -> Compatibility:
    by_vendor: dict[str, list[NormalizedDetection]] = defaultdict(list)
    for d in rnd.detections:
        by_vendor[d.vendor].append(d)
    support, supported, scores = {}, {}, {}
    for platform in rnd.platforms():
        names = tuple(v for v in rnd.participants if supports(by_vendor[v], v, platform))
        supported[platform] = names
        support[platform] = Ratio(len(names), len(rnd.participants))
        for v in names:
            try:
                t = tally(by_vendor[v], Scope("vendor", v), platform=platform)
            except EmptyScopeError:
                continue
            scores[(v, platform)] = (t, score(t, weights))
    return Compatibility(support, supported, scores)


# -- protection --------------------------------------------------------------

@dataclass(frozen=True)
class ProtectionRate:
    test: int
    blocked: int
    participants: int
    rate: Ratio


def protection_rate(results: Iterable[ProtectionResult]) -> ProtectionRate:
    """Share of participating vendors that blocked somewhere in one test.

    A vendor participates when at least one of its outcomes in the test is
    not NotApplicable.
    """
    results = list(results)
    tests = {r.test for r in results}
    if len(tests) > 1:
        raise ValueError(f"protection_rate expects one test, got {sorted(tests)}")
    participating, blocked = set(), set()
    for r in results:
        if r.outcome is not Outcome.NOT_APPLICABLE:
            participating.add(r.vendor)
        if r.outcome is Outcome.BLOCKED:
            blocked.add(r.vendor)
    test = tests.pop() if tests else 0
    return ProtectionRate(test, len(blocked), len(participating), Ratio(len(blocked), len(participating)))


def first_block(results: Iterable[ProtectionResult]) -> ProtectionResult | None:
    blocks = [r for r in results if r.outcome is Outcome.BLOCKED]
    return min(blocks, key=lambda r: step_key(r.step)) if blocks else None
