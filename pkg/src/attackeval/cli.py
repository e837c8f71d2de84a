"""Command-line front end: ``attackeval <command> [options]``.

Exit status is 0 on success, 1 for a usage or configuration problem and 2
for malformed, unreachable or corrupt data. Every output file is written to
a temporary name first and renamed into place.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from . import __version__, registry
from .errors import AttackEvalError, ConfigError, DataError, UserError
from .fetch import cache_dir_from, fetch_round, read_lock, write_lock, LockEntry
from .graph import (build_graph, check_truth, connected_components, connectivity_verdict,
                    effectiveness_verdict, export_dot, load_scenario, load_truth, visible_subgraph)
from .ingest import parse_round, summarize, validate_round
from .metrics import (DEFAULT_WEIGHTS, METRICS, SCOPE_KINDS, check_weights, data_source_census,
                      mitre_summary, platform_compatibility, protection_rate, quadrant_assign,
                      round_half_up, score_scopes, trend_summary)
from .normalize import NormalizedRound, normalize_round, protections_by_test
from .report import FORMATS, Table, annotate_graph, emit_table, fmt_fraction, write_text

log = logging.getLogger("attackeval")

NA_NOTE = "not-applicable substeps: counted in totals for vendor scope only"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


class _Once(argparse.Action):
    """Store a value, rejecting a second occurrence of the flag."""

    def __call__(self, parser, namespace, values, option_string=None):
        if getattr(namespace, f"_seen_{self.dest}", False):
            raise UserError(f"{option_string} given more than once")
        setattr(namespace, f"_seen_{self.dest}", True)
        setattr(namespace, self.dest, values)


def _weights(text: str) -> tuple[int, int, int, int]:
    try:
        return check_weights(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# -- shared helpers ----------------------------------------------------------

def _ratio_cells(r) -> list:
    return [r.numerator, r.denominator, fmt_fraction(r.value) if r.defined else ""]


def _preamble(rnd: NormalizedRound) -> list[str]:
    lines = [
        f"round: {rnd.round_id} ({rnd.year})",
        f"category-map: {rnd.category_map}",
        f"legacy-mapped: {'yes' if rnd.legacy_mapped else 'no'}",
        f"counting: {rnd.counting}",
        NA_NOTE,
    ]
    lines += [f"notice: {n}" for n in rnd.notices]
    return lines


def _load(args, selector: str) -> NormalizedRound:
    path = Path(selector)
    if path.exists():
        raw = parse_round(path)
    else:
        rid = registry.resolve_round(selector)
        target = cache_dir_from(args.cache_dir) / rid
        if not target.is_dir():
            raise ConfigError(f"round {rid} is not in the cache at {target}; run 'fetch' first or pass a path")
        raw = parse_round(target)
    cmap = registry.load_category_map(args.category_map)
    return normalize_round(raw, cmap)


def _single_round(args) -> str:
    rounds = args.round or []
    if len(rounds) != 1:
        raise UserError(f"{args.command} takes exactly one --round")
    return rounds[0]


def _emit(args, table: Table) -> None:
    text = emit_table(table, args.format, args.output)
    if args.output is None:
        sys.stdout.write(text)


# -- commands ----------------------------------------------------------------

def cmd_fetch(args) -> int:
    if not args.round:
        raise UserError("fetch needs at least one --round")
    lockfile = Path(args.lockfile)
    cache = cache_dir_from(args.cache_dir)
    rows, pinned = [], read_lock(lockfile)
    for selector in args.round:
        handle = fetch_round(selector, cache, lockfile=lockfile, urls=args.url)
        for path in handle.files:
            rows.append((handle.round_id, path.name, handle.checksums.get(path.name, "")))
        if args.update_lock:
            known = {e.name: e for e in pinned.get(handle.round_id, [])}
            urls = {u.rstrip("/").rsplit("/", 1)[-1].split("?")[0]: u for u in args.url or ()}
            entries = []
            for name, digest in sorted(handle.checksums.items()):
                url = known[name].url if name in known else urls.get(name, "")
                entries.append(LockEntry(name, url, digest))
            pinned[handle.round_id] = entries
    if args.update_lock:
        write_lock(lockfile, pinned)
    _emit(args, Table(("round", "file", "sha256"), tuple(rows), (f"cache: {cache}",)))
    return 0


def cmd_validate(args) -> int:
    selector = _single_round(args)
    path = Path(selector)
    if not path.exists():
        path = cache_dir_from(args.cache_dir) / registry.resolve_round(selector)
        if not path.is_dir():
            raise ConfigError(f"round {selector} is not in the cache; run 'fetch' first or pass a path")
    raw = parse_round(path)
    s = summarize(raw)
    report = validate_round(raw)
    pre = [f"round: {raw.round_id} ({raw.year})",
           f"participants: {s.participants}", f"techniques: {s.techniques}", f"substeps: {s.substeps}",
           f"major-steps: {s.major_steps}", f"hosts: {s.hosts}",
           f"detection-records: {s.detection_records}", f"protection-records: {s.protection_records}",
           f"duplicate-detections: {s.duplicate_detections}"]
    pre += [f"warning: {w}" for w in raw.warnings]
    rows = tuple((f.severity, f.kind, f.vendor, f.host, f.step, f.message) for f in report.findings)
    _emit(args, Table(("severity", "kind", "vendor", "host", "step", "message"), rows, tuple(pre)))
    return 2 if any(f.severity == "error" for f in report.findings) else 0


METRIC_COLUMNS = (
    "scope", "key", "total", "visible", "analytic_substeps", "unmodified",
    "technique", "tactic", "general", "telemetry",
    "visibility_num", "visibility_den", "visibility",
    "analytic_num", "analytic_den", "analytic",
    "confidence_num", "confidence_den", "confidence",
    "quality_num", "quality_den", "quality",
)
MITRE_COLUMNS = ("vendor", "telemetry_coverage", "analytic_coverage", "visibility", "detection_count")


def cmd_metrics(args) -> int:
    rnd = _load(args, _single_round(args))
    pre = _preamble(rnd) + [f"confidence-weights: {','.join(map(str, args.confidence_weights))}"]
    if args.mitre:
        by_vendor = defaultdict(list)
        for d in rnd.detections:
            by_vendor[d.vendor].append(d)
        rows = []
        for v in sorted(rnd.participants):
            m = mitre_summary(by_vendor[v], rnd.counting)
            rows.append((v, m.telemetry_coverage, m.analytic_coverage, m.visibility, m.detection_count))
        _emit(args, Table(MITRE_COLUMNS, tuple(rows), tuple(pre)))
        return 0
    scope = args.scope or "vendor"
    if args.platform:
        pre.append(f"platform: {args.platform}")
    rows = []
    for t, s in score_scopes(rnd, scope, args.confidence_weights, platform=args.platform):
        rows.append((scope, t.scope.key, t.total, t.visible, t.analytic, t.unmodified,
                     t.technique, t.tactic, t.general, t.telemetry,
                     *_ratio_cells(s.visibility), *_ratio_cells(s.analytic),
                     *_ratio_cells(s.confidence), *_ratio_cells(s.quality)))
    _emit(args, Table(METRIC_COLUMNS, tuple(rows), tuple(pre)))
    return 0


TREND_COLUMNS = ("round", "year", "metric", "scope", "n", "min", "q1", "median", "q3", "max", "mean", "std")


def cmd_trend(args) -> int:
    if not args.round:
        raise UserError("trend needs at least one --round")
    rounds = [_load(args, r) for r in args.round]
    scope = args.scope or "technique"
    rows = []
    for row in trend_summary(rounds, args.metric, scope, args.confidence_weights):
        f = row.summary
        if f is None:
            rows.append((row.round_id, row.year, row.metric, scope, 0, "", "", "", "", "", "", ""))
            continue
        rows.append((row.round_id, row.year, row.metric, scope, f.n,
                     *(fmt_fraction(x) for x in (f.minimum, f.q1, f.median, f.q3, f.maximum, f.mean)),
                     round_half_up(f.std, 4)))
    pre = []
    for r in sorted(rounds, key=lambda r: (r.year, r.round_id)):
        pre += [f"round: {r.round_id} ({r.year}) category-map: {r.category_map} "
                f"legacy-mapped: {'yes' if r.legacy_mapped else 'no'}"]
    pre += [NA_NOTE, "std: population"]
    _emit(args, Table(TREND_COLUMNS, tuple(rows), tuple(pre)))
    return 0


def cmd_quadrant(args) -> int:
    rnd = _load(args, _single_round(args))
    scope = args.scope or "vendor"
    scored = [(t.scope.key, s.visibility, s.analytic) for t, s in score_scopes(rnd, scope, args.confidence_weights)]
    notices: list[str] = []
    means = None
    if args.means:
        try:
            mv, ma = (x.strip() for x in args.means.split(","))
            from fractions import Fraction
            means = (Fraction(mv), Fraction(ma))
        except ValueError:
            raise UserError("--means takes two numbers: visibility,analytic") from None
    out = quadrant_assign(scored, means=means, notices=notices)
    pre = _preamble(rnd) + [f"mean-visibility: {fmt_fraction(out[0].mean_visibility)}",
                            f"mean-analytic: {fmt_fraction(out[0].mean_analytic)}"]
    pre += [f"notice: {n}" for n in notices]
    rows = tuple((q.key, fmt_fraction(q.visibility), fmt_fraction(q.analytic), q.quadrant) for q in out)
    _emit(args, Table(("key", "visibility", "analytic", "quadrant"), rows, tuple(pre)))
    return 0


def cmd_datasources(args) -> int:
    rnd = _load(args, _single_round(args))
    census = data_source_census(rnd)
    pre = _preamble(rnd) + [f"distinct-categories: {census.distinct}"]
    if census.notice:
        pre.append(f"notice: {census.notice}")
    rows = tuple((i, name, n) for i, (name, n) in enumerate(census.ranked, start=1))
    _emit(args, Table(("rank", "category", "detections"), rows, tuple(pre)))
    return 0


COMPAT_COLUMNS = ("vendor", "platform", "supported", "total", "visible",
                  "visibility_num", "visibility_den", "visibility",
                  "confidence_num", "confidence_den", "confidence")


def cmd_compat(args) -> int:
    rnd = _load(args, _single_round(args))
    comp = platform_compatibility(rnd, args.confidence_weights)
    pre = _preamble(rnd)
    for platform, r in sorted(comp.support.items()):
        pre.append(f"support {platform}: {r.numerator}/{r.denominator} ({r.percent()}%)")
    rows = []
    for v in sorted(rnd.participants):
        for platform in sorted(comp.support):
            ok = v in comp.supported[platform]
            if ok and (v, platform) in comp.scores:
                t, s = comp.scores[(v, platform)]
                rows.append((v, platform, "yes", t.total, t.visible,
                             *_ratio_cells(s.visibility), *_ratio_cells(s.confidence)))
            else:
                rows.append((v, platform, "no", "", "", "", "", "", "", "", ""))
    _emit(args, Table(COMPAT_COLUMNS, tuple(rows), tuple(pre)))
    return 0


PROTECT_COLUMNS = ("test", "blocked", "participants", "rate_pct", "baseline_step",
                   "early", "on_time", "late", "not_blocked")


def cmd_protect(args) -> int:
    rnd = _load(args, _single_round(args))
    baselines = load_truth(args.baselines).baselines if args.baselines else {}
    grouped = protections_by_test(rnd.protections)
    if not grouped:
        raise ConfigError(f"round {rnd.round_id} has no protection results")
    rows = []
    for test, results in grouped.items():
        rate = protection_rate(results)
        pct = rate.rate.percent() if rate.rate.defined else ""
        base = baselines.get(test)
        counts = ["", "", "", ""]
        if base is not None:
            per_vendor = defaultdict(list)
            for r in results:
                per_vendor[r.vendor].append(r)
            if base not in {r.step for r in results}:
                raise ConfigError(f"baseline step {base} is not part of protection test {test}")
            verdicts = [effectiveness_verdict(rs, base) for _, rs in sorted(per_vendor.items())]
            counts = [verdicts.count(k) for k in ("blocked-early", "blocked-on-time", "blocked-late", "not-blocked")]
        rows.append((test, rate.blocked, rate.participants, pct, base or "", *counts))
    pre = _preamble(rnd) + ["rate: vendors with a Blocked outcome / vendors with any applicable outcome"]
    _emit(args, Table(PROTECT_COLUMNS, tuple(rows), tuple(pre)))
    return 0


def _scenario_graph(args):
    if not args.scenario:
        raise UserError("graph commands need --scenario")
    table = registry.load_classification(args.classification)
    scenario = load_scenario(args.scenario)
    return scenario, build_graph(scenario, table=table)


def _write_dot(args, graph, name):
    if args.dot:
        write_text(export_dot(graph, name), args.dot)


def cmd_graph_build(args) -> int:
    scenario, graph = _scenario_graph(args)
    _write_dot(args, graph, scenario.scenario_id)
    pre = [f"scenario: {scenario.scenario_id}", f"nodes: {len(graph.nodes)}", f"edges: {len(graph.edges)}"]
    pre += [f"notice: {n}" for n in graph.notices]
    rows = tuple((e.src, e.dst, e.flow) for e in graph.edges)
    _emit(args, Table(("from", "to", "flow"), rows, tuple(pre)))
    return 0


def cmd_graph_connectivity(args) -> int:
    scenario, graph = _scenario_graph(args)
    if not args.truth:
        raise UserError("graph connectivity needs --truth")
    truth = load_truth(args.truth)
    check_truth(truth, graph)
    rnd = _load(args, _single_round(args))
    by_vendor = defaultdict(list)
    for d in rnd.detections:
        by_vendor[d.vendor].append(d)
    rows = []
    for v in sorted(rnd.participants):
        sub = visible_subgraph(graph, by_vendor[v])
        count, comps = connected_components(sub)
        expected = truth.expected_for(rnd.platform_support.get(v, ()))
        rows.append((v, len(sub.nodes), count, expected, connectivity_verdict(comps, truth, expected)))
    pre = _preamble(rnd) + [f"scenario: {scenario.scenario_id}", f"graph-nodes: {len(graph.nodes)}",
                            f"expected-segments: {truth.expected_segments}"]
    _emit(args, Table(("vendor", "visible_nodes", "components", "expected", "verdict"), tuple(rows), tuple(pre)))
    return 0


def cmd_graph_annotate(args) -> int:
    scenario, graph = _scenario_graph(args)
    rnd = _load(args, _single_round(args))
    graph = annotate_graph(graph, rnd)
    _write_dot(args, graph, scenario.scenario_id)
    rows = []
    for n in graph.nodes:
        a = graph.annotations[n.step]
        vis = round_half_up(a.visibility * 100, 2) if a.visibility is not None else ""
        rows.append((n.step, n.technique_id, n.host, a.seen, a.applicable, vis,
                     "" if a.blocks is None else a.blocks))
    pre = _preamble(rnd) + [f"scenario: {scenario.scenario_id}"]
    _emit(args, Table(("step", "technique", "host", "seen", "applicable", "visibility_pct", "blocked_by"),
                      tuple(rows), tuple(pre)))
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--round", action="append", metavar="ID|PATH",
                        help="round id, alias, or ingestion directory (repeatable for trend and fetch)")
    common.add_argument("--format", choices=FORMATS, default="csv", action=_Once)
    common.add_argument("-o", "--output", action=_Once, help="write the report here instead of stdout")
    common.add_argument("--cache-dir", action=_Once, help="cache directory (default: $ATTACK_EVAL_CACHE)")
    common.add_argument("--category-map", action=_Once, help="JSON file overriding the label mapping table")
    common.add_argument("--confidence-weights", type=_weights, default=DEFAULT_WEIGHTS, action=_Once,
                        metavar="A,B,C,D")
    common.add_argument("--scope", choices=SCOPE_KINDS[:4], action=_Once)
    common.add_argument("-v", "--verbose", action="store_true")

    graph_common = _Parser(add_help=False)
    graph_common.add_argument("--scenario", action=_Once, help="scenario annotation file")
    graph_common.add_argument("--classification", action=_Once,
                              help="JSON file overriding the descriptive/causal technique table")
    graph_common.add_argument("--dot", action=_Once, help="write a Graphviz DOT file")

    parser = _Parser(prog="attackeval", description="Analyze ATT&CK evaluation results.")
    parser.add_argument("--version", action="version", version=f"attackeval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fetch", parents=[common], help="download and cache result files")
    p.add_argument("--url", action="append", help="extra result-file URL (repeatable)")
    p.add_argument("--lockfile", default="rounds.lock", action=_Once)
    p.add_argument("--update-lock", action="store_true", help="record observed checksums in the lockfile")
    p.set_defaults(func=cmd_fetch)

    sub.add_parser("validate", parents=[common], help="parse a round and report invariant violations") \
        .set_defaults(func=cmd_validate)

    p = sub.add_parser("metrics", parents=[common], help="per-scope visibility, analytic, confidence, quality")
    p.add_argument("--platform", choices=("windows", "linux"), action=_Once)
    p.add_argument("--mitre", action="store_true", help="report MITRE's four per-vendor summary counts instead")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("trend", parents=[common], help="five-number summaries across rounds")
    p.add_argument("--metric", choices=METRICS, default="confidence", action=_Once)
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("quadrant", parents=[common], help="visibility/analytic quadrant assignment")
    p.add_argument("--means", action=_Once, metavar="V,A", help="override the population means")
    p.set_defaults(func=cmd_quadrant)

    sub.add_parser("datasources", parents=[common], help="data-source category census") \
        .set_defaults(func=cmd_datasources)
    sub.add_parser("compat", parents=[common], help="platform support and per-platform scores") \
        .set_defaults(func=cmd_compat)

    p = sub.add_parser("protect", parents=[common], help="protection rates and effectiveness verdicts")
    p.add_argument("--baselines", action=_Once, help="truth file naming the baseline step per test")
    p.set_defaults(func=cmd_protect)

    g = sub.add_parser("graph", help="causal attack graphs")
    gsub = g.add_subparsers(dest="graph_command", required=True, parser_class=_Parser)
    gsub.add_parser("build", parents=[common, graph_common], help="build a scenario graph") \
        .set_defaults(func=cmd_graph_build)
    p = gsub.add_parser("connectivity", parents=[common, graph_common], help="per-vendor segment verdicts")
    p.add_argument("--truth", action=_Once, help="ground-truth file for the scenario")
    p.set_defaults(func=cmd_graph_connectivity)
    gsub.add_parser("annotate", parents=[common, graph_common], help="annotate nodes with visibility and blocks") \
        .set_defaults(func=cmd_graph_annotate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        if args.command not in ("trend", "fetch") and args.round and len(args.round) > 1:
            raise UserError(f"{args.command} takes exactly one --round")
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UserError as exc:
        print(f"attackeval: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"attackeval: data error: {exc}", file=sys.stderr)
        return 2
    except AttackEvalError as exc:
        print(f"attackeval: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"attackeval: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
