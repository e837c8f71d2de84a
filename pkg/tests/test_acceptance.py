"""Acceptance gate: one or more tests per criterion, summarized as
``AC<n> PASS|FAIL|SKIP <name>`` lines at the end of the pytest run."""

from __future__ import annotations

import csv
import io
import itertools
import os
import random
import time
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from attackeval.cli import main
from attackeval.graph import GroundTruth, connected_components, connectivity_verdict, induced_subgraph
from attackeval.ingest import parse_lines, parse_round
from attackeval.metrics import (Scope, confidence, mitre_summary, round_half_up,
                                score, tally, trend_summary, visibility)
from attackeval.normalize import NEGATIVE_MODIFIERS, Category, normalize_round
from conftest import ROUNDS, SCENARIOS, TREND
from helpers import det, lines_for, make_graph, normalized
from oracles import all_edge_subsets, uf_components

criterion = pytest.mark.criterion
WSS = str(ROUNDS / "wizard_spider_sandworm")
EXPECTED_RATES = ["95.5", "95.5", "72.7", "54.5", "68.2", "90.9", "52.9", "90.9", "81.8"]


def _rows(text):
    return list(csv.DictReader(io.StringIO("".join(l for l in text.splitlines(True) if not l.startswith("#")))))


# -- 1 -------------------------------------------------------------------------

@criterion(1, "protection rates reproduce the nine reference test rates, < 1 s")
def test_ac1_protection_rates(capsys):
    start = time.perf_counter()
    code = main(["protect", "--round", WSS, "--baselines", str(SCENARIOS / "wss.truth")])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    assert code == 0
    rows = _rows(out)
    assert [int(r["test"]) for r in rows] == list(range(1, 10))
    assert [r["rate_pct"] for r in rows] == EXPECTED_RATES
    assert [(r["blocked"], r["participants"]) for r in rows][6] == ("9", "17")
    assert elapsed < 1.0, f"protect took {elapsed:.3f}s"


# -- 2 -------------------------------------------------------------------------

@criterion(2, "confidence anchors 0.25 / 0.50 / 0.75 / 1.00")
@pytest.mark.parametrize("label,expected", [
    ("Telemetry", Fraction(1, 4)), ("General", Fraction(1, 2)),
    ("Tactic", Fraction(3, 4)), ("Technique", Fraction(1)),
])
def test_ac2_confidence_anchors(label, expected):
    cells = [("a", f"1.A.{i}", label) for i in range(1, 9)] + [("a", "2.A.1", "None"), ("a", "2.A.2", "N/A")]
    rnd = normalized("wss2022", cells)
    t = tally(rnd.detections, Scope("vendor", "a"))
    assert confidence(t).value == expected


# -- 3 -------------------------------------------------------------------------

@criterion(3, "visibility 152/174 = 0.874 on the 2020 fixture vendor")
def test_ac3_visibility(carbanak_round):
    t = tally(carbanak_round.for_vendor("vendor-07"), Scope("vendor", "vendor-07"))
    assert (t.total, t.visible, t.telemetry) == (174, 152, 88)
    assert str(round_half_up(visibility(t).value, 3)) == "0.874"


# -- 4 -------------------------------------------------------------------------

raw_cells = st.lists(
    st.tuples(st.sampled_from(["a", "b", "c", "d"]),
              st.sampled_from(["1.A.1", "1.A.2", "2.A.1", "2.A.2", "3.A.1"]),
              st.sampled_from(["N/A", "None", "Telemetry", "General", "Tactic", "Technique"]),
              st.lists(st.sampled_from(["Delayed", "Configuration Change", "Config Change"]), unique=True)),
    min_size=1, max_size=30)


@criterion(4, "2022 rule: visibility = telemetry + analytic coverage (>= 1000 rounds)")
@settings(max_examples=1000, deadline=None)
@given(raw_cells)
def test_ac4_counting_rule(cells):
    rnd = normalize_round(parse_lines(lines_for("wss2022", cells)))
    assert rnd.counting == "max"
    for v in rnd.participants:
        m = mitre_summary(rnd.for_vendor(v), rnd.counting)
        assert m.visibility == m.telemetry_coverage + m.analytic_coverage
        assert m.detection_count == m.visibility


# -- 5 -------------------------------------------------------------------------

def _host_graph(graph, host):
    return induced_subgraph(graph, [n.step for n in graph.nodes if n.host == host])


def _oracle_count(graph):
    return len(uf_components(graph.node_ids(), [(e.src, e.dst) for e in graph.edges]))


@criterion(5, "scenario-1 graph: 1 component, 2 without the rundll32 load; 13/10/11 vs 6 fragmented")
def test_ac5_scenario_one(wss_graph):
    host = _host_graph(wss_graph, "win-01")
    assert connected_components(host)[0] == 1 == _oracle_count(host)
    hidden = induced_subgraph(host, [s for s in host.node_ids() if s != "1.A.8"])
    assert connected_components(hidden)[0] == 2 == _oracle_count(hidden)


@criterion(5, "scenario-1 graph: 1 component, 2 without the rundll32 load; 13/10/11 vs 6 fragmented")
def test_ac5_fragmented_verdicts():
    truth = GroundTruth("six-hosts", 6, {f"host-{i}": (f"{i}.A.1",) for i in range(1, 7)})
    for count in (13, 10, 11):
        assert connectivity_verdict(count, truth) == "fragmented"


# -- 6 -------------------------------------------------------------------------

@criterion(6, "components equal union-find on all 5-node graphs and 1000 random 12-node graphs, < 10 s")
def test_ac6_component_oracle():
    start = time.perf_counter()
    names = [f"1.A.{i + 1}" for i in range(12)]
    cases = 0
    for edges in all_edge_subsets(5):
        _, comps = connected_components(make_graph(5, edges))
        assert sorted(map(sorted, comps)) == sorted(map(sorted, uf_components(
            names[:5], [(names[a], names[b]) for a, b in edges])))
        cases += 1
    assert cases == 2 ** 10
    rng = random.Random(12)
    pairs = list(itertools.combinations(range(12), 2))
    for _ in range(1000):
        p = rng.random() * 0.3
        edges = [e for e in pairs if rng.random() < p]
        _, comps = connected_components(make_graph(12, edges))
        assert sorted(map(sorted, comps)) == sorted(map(sorted, uf_components(
            names, [(names[a], names[b]) for a, b in edges])))
    assert time.perf_counter() - start < 10


# -- 7 -------------------------------------------------------------------------

substeps = st.lists(
    st.tuples(st.sampled_from([Category.NOT_APPLICABLE, Category.NONE, Category.TELEMETRY,
                               Category.GENERAL, Category.TACTIC, Category.TECHNIQUE]),
              st.sets(st.sampled_from(sorted(NEGATIVE_MODIFIERS)))),
    min_size=1, max_size=40)


def _dets(plan):
    return [det(c, step=f"1.A.{i + 1}", modifiers=(m if c.visible else ())) for i, (c, m) in enumerate(plan)]


def _scores(plan):
    return score(tally(_dets(plan), Scope("vendor", "v")))


@criterion(7, "metric properties: bounds, upgrades, modifiers, permutation (>= 1000 cases each)")
@settings(max_examples=1000, deadline=None)
@given(substeps)
def test_ac7_bounds(plan):
    s = _scores(plan)
    for r in (s.visibility, s.analytic, s.confidence, s.quality):
        if r.defined:
            assert 0 <= r.value <= 1


@criterion(7, "metric properties: bounds, upgrades, modifiers, permutation (>= 1000 cases each)")
@settings(max_examples=1000, deadline=None)
@given(substeps, st.data())
def test_ac7_upgrade(plan, data):
    upgradable = [i for i, (c, _) in enumerate(plan) if c.visible and c.rank < 4]
    if not upgradable:
        plan = plan + [(Category.TELEMETRY, set())]
        upgradable = [len(plan) - 1]
    i = data.draw(st.sampled_from(upgradable))
    cat, mods = plan[i]
    new_rank = data.draw(st.integers(cat.rank + 1, 4))
    upgraded = list(plan)
    upgraded[i] = (Category.from_rank(new_rank), mods)
    before, after = _scores(plan), _scores(upgraded)
    assert after.confidence.value > before.confidence.value
    assert after.analytic.value >= before.analytic.value
    assert after.visibility.value >= before.visibility.value


@criterion(7, "metric properties: bounds, upgrades, modifiers, permutation (>= 1000 cases each)")
@settings(max_examples=1000, deadline=None)
@given(substeps, st.data())
def test_ac7_negative_modifier(plan, data):
    clean = [i for i, (c, m) in enumerate(plan) if c.visible and not m]
    if not clean:
        plan = plan + [(Category.GENERAL, set())]
        clean = [len(plan) - 1]
    i = data.draw(st.sampled_from(clean))
    modifier = data.draw(st.sampled_from(sorted(NEGATIVE_MODIFIERS)))
    changed = list(plan)
    changed[i] = (plan[i][0], {modifier})
    before, after = _scores(plan).quality, _scores(changed).quality
    assert before.denominator == after.denominator
    assert before.value - after.value == Fraction(1, before.denominator)


@criterion(7, "metric properties: bounds, upgrades, modifiers, permutation (>= 1000 cases each)")
@settings(max_examples=1000, deadline=None)
@given(substeps, st.randoms())
def test_ac7_permutation(plan, rng):
    dets = _dets(plan)
    shuffled = rng.sample(dets, len(dets))
    a = tally(dets, Scope("vendor", "v"))
    b = tally(shuffled, Scope("vendor", "v"))
    assert a == b and score(a) == score(b)


# -- 8 -------------------------------------------------------------------------

@criterion(8, "trend medians 0.50 / 0.72 / 0.8825")
def test_ac8_trend_medians(capsys):
    dirs = [TREND / r for r in ("apt29", "carbanak_fin7", "wizard_spider_sandworm")]
    rows = trend_summary([normalize_round(parse_round(d)) for d in dirs], "confidence", "technique")
    assert [r.summary.median for r in rows] == [Fraction(1, 2), Fraction(18, 25), Fraction(353, 400)]
    code = main(["trend", "--metric", "confidence", *sum((["--round", str(d)] for d in dirs), [])])
    out = _rows(capsys.readouterr().out)
    assert code == 0 and [r["median"] for r in out] == ["0.5000", "0.7200", "0.8825"]
    assert all(set(r) >= {"min", "q1", "median", "q3", "max", "mean", "std"} for r in out)


# -- 9 -------------------------------------------------------------------------

REAL_COUNTS = {"apt3": 12, "apt29": 21, "carbanak_fin7": 29, "wizard_spider_sandworm": 30}


@criterion(9, "real-data participant counts 12/21/29/30 (informational, needs fetched data)")
@pytest.mark.parametrize("rid", sorted(REAL_COUNTS))
def test_ac9_real_data(rid):
    cache = os.environ.get("ATTACK_EVAL_CACHE")
    target = Path(cache) / rid if cache else None
    if target is None or not target.is_dir() or not any(target.glob("*.json")):
        pytest.skip(f"no fetched MITRE result files for {rid}; run 'attackeval fetch' with a populated lockfile")
    assert parse_round(target).summary.participants == REAL_COUNTS[rid]


# -- 10 ------------------------------------------------------------------------

def _commands(tmp: Path, tag: str):
    scen, truth = str(SCENARIOS / "wss.jsonl"), str(SCENARIOS / "wss.truth")
    trend = sum((["--round", str(TREND / r)] for r in ("apt29", "carbanak_fin7", "wizard_spider_sandworm")), [])
    cmds = {
        "validate": ["validate", "--round", WSS],
        "metrics": ["metrics", "--round", WSS, "--scope", "technique"],
        "metrics-mitre": ["metrics", "--round", str(ROUNDS / "carbanak_fin7"), "--mitre"],
        "metrics-text": ["metrics", "--round", str(ROUNDS / "apt29"), "--format", "text"],
        "trend": ["trend", *trend],
        "quadrant": ["quadrant", "--round", WSS],
        "datasources": ["datasources", "--round", WSS],
        "compat": ["compat", "--round", str(ROUNDS / "carbanak_fin7")],
        "protect": ["protect", "--round", WSS, "--baselines", truth],
        "graph-build": ["graph", "build", "--scenario", scen, "--dot", str(tmp / f"build-{tag}.dot")],
        "graph-connectivity": ["graph", "connectivity", "--scenario", scen, "--truth", truth, "--round", WSS],
        "graph-annotate": ["graph", "annotate", "--scenario", scen, "--round", WSS,
                           "--dot", str(tmp / f"annotate-{tag}.dot")],
    }
    return {name: argv + ["-o", str(tmp / f"{name}-{tag}.out")] for name, argv in cmds.items()}


@criterion(10, "every command is byte-identical across two runs")
def test_ac10_determinism(tmp_path, capsys):
    for tag in ("first", "second"):
        for name, argv in _commands(tmp_path, tag).items():
            assert main(argv) == 0, name
    capsys.readouterr()
    firsts = sorted(tmp_path.glob("*-first.*"))
    assert len(firsts) == 14
    for f in firsts:
        twin = f.with_name(f.name.replace("-first", "-second"))
        assert f.read_bytes() == twin.read_bytes(), f.name


@criterion(10, "every command is byte-identical across two runs")
def test_ac10_fetch_determinism(tmp_path, capsys):
    src = tmp_path / "carbanak-vendor.json"
    src.write_text('[{"Participant_Name": "Acme", "Adversaries": [{"Adversary_Name": "carbanak_fin7"}]}]')
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"fetch-{tag}.csv"
        argv = ["fetch", "--round", "carbanak", "--url", src.as_uri(), "--cache-dir", str(tmp_path / f"cache-{tag}"),
                "--lockfile", str(tmp_path / f"lock-{tag}"), "--update-lock", "-o", str(out)]
        assert main(argv) == 0
        outs.append(out.read_text().replace(f"cache-{tag}", "cache"))
        outs.append((tmp_path / f"lock-{tag}").read_text())
    assert outs[0] == outs[2] and outs[1] == outs[3]
