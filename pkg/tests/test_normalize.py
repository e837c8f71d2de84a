import itertools
import json

import pytest

from attackeval import registry
from attackeval.errors import UnmappedLabel
from attackeval.ingest import RawDetectionRecord, parse_lines
from attackeval.normalize import (CONFIG_CHANGE, DELAYED, Category, Outcome, collapse_substep,
                                  normalize_category, normalize_modifier, normalize_protection,
                                  normalize_round, split_data_source)
from helpers import lines_for, normalized


@pytest.mark.parametrize("label,rid,expected", [
    ("Telemetry", "apt3", Category.TELEMETRY),
    ("Telemetry", "apt29", Category.TELEMETRY),
    ("Telemetry", "carbanak_fin7", Category.TELEMETRY),
    ("Telemetry", "wss2022", Category.TELEMETRY),
    ("Specific Behavior", "apt3", Category.TECHNIQUE),
    ("Indicator of Compromise", "apt3", Category.TELEMETRY),
    ("Enrichment", "apt3", Category.GENERAL),
    ("General Behavior", "apt3", Category.GENERAL),
    ("MSSP", "apt29", Category.GENERAL),
    ("Tactic", "wizard_spider_sandworm", Category.TACTIC),
    ("N/A", "wss2022", Category.NOT_APPLICABLE),
    ("None", "wss2022", Category.NONE),
])
def test_category_mapping(label, rid, expected):
    assert normalize_category(label, rid) is expected


def test_unmapped_label():
    with pytest.raises(UnmappedLabel):
        normalize_category("Specific Behavior", "wss2022")


@pytest.mark.parametrize("label,rid,expected", [
    ("Delayed", "wss2022", DELAYED),
    ("Delayed (Manual)", "apt29", DELAYED),
    ("Config Change", "carbanak", CONFIG_CHANGE),
    ("Configuration Change (UX)", "apt29", CONFIG_CHANGE),
    ("Correlated", "apt29", None),
    ("Tainted", "apt3", None),
])
def test_modifiers(label, rid, expected):
    assert normalize_modifier(label, rid) == expected


@pytest.mark.parametrize("raw,expected", [
    ("Process: Process Creation", ("Process", "Process Creation")),
    ("File", ("File", None)),
    ("A: B: C", ("A", "B: C")),
])
def test_split_data_source(raw, expected):
    assert split_data_source(raw) == expected


def test_protection_labels():
    assert normalize_protection("Blocked") is Outcome.BLOCKED
    assert normalize_protection("None") is Outcome.NONE_BLOCKED
    assert normalize_protection("N/A") is Outcome.NOT_APPLICABLE
    with pytest.raises(UnmappedLabel):
        normalize_protection("Prevented?")


def _raw(category, modifiers=(), sources=()):
    return RawDetectionRecord("wizard_spider_sandworm", "v", "1.A.1", "T1059", "", "", category,
                              tuple(modifiers), tuple(sources), "windows", "h1")


def test_collapse_keeps_highest():
    d = collapse_substep([_raw("Telemetry"), _raw("Technique")])
    assert d.category is Category.TECHNIQUE and d.discarded == 1
    d = collapse_substep([_raw("Telemetry")])
    assert d.category is Category.TELEMETRY and d.discarded == 0


def test_collapse_tie_prefers_unmodified_in_any_order():
    recs = [_raw("General", ["Delayed"]), _raw("General")]
    outs = {collapse_substep(list(p)) for p in itertools.permutations(recs)}
    assert len(outs) == 1
    (d,) = outs
    assert d.category is Category.GENERAL and not d.negative_modifiers


def test_collapse_unions_data_sources():
    d = collapse_substep([_raw("Telemetry", sources=["Process: Process Creation"]),
                          _raw("Technique", sources=["File: File Creation", "Process: Process Creation"])])
    assert set(d.data_sources) == {("Process", "Process Creation"), ("File", "File Creation")}


def test_negative_modifiers_dropped_on_invisible():
    rnd = normalized("wss2022", [("a", "1.A.1", "None", ["Delayed"])])
    assert rnd.detections[0].negative_modifiers == frozenset()


def test_fill_missing_pairs():
    lines = lines_for("wss2022", [("a", "1.A.1", "Telemetry"), ("a", "1.A.2", "General"),
                                  ("b", "1.A.1", "None")])
    rnd = normalize_round(parse_lines(lines))
    cell = [d for d in rnd.detections if d.vendor == "b" and d.step == "1.A.2"]
    assert cell[0].category is Category.NONE
    assert any("filled" in n for n in rnd.notices)


def test_fill_unsupported_platform_as_not_applicable():
    lines = [json.dumps({"record": "round", "round": "wss2022"}),
             json.dumps({"record": "participant", "vendor": "a", "platforms": ["windows", "linux"]}),
             json.dumps({"record": "participant", "vendor": "b", "platforms": ["windows"]}),
             json.dumps({"record": "substep", "step": "9.A.1", "host": "l1", "platform": "linux",
                         "technique_id": "T1059"})]
    lines += lines_for("wss2022", [("a", "1.A.1", "Telemetry"), ("b", "1.A.1", "None")])[3:]
    rnd = normalize_round(parse_lines(lines))
    cells = {(d.vendor, d.step): d.category for d in rnd.detections}
    assert cells[("b", "9.A.1")] is Category.NOT_APPLICABLE
    assert cells[("a", "9.A.1")] is Category.NONE


def test_unmapped_labels_excluded_with_notice():
    rnd = normalized("wss2022", [("a", "1.A.1", "Telemetry"), ("a", "1.A.2", "Specific Behavior")])
    assert any("Specific Behavior" in n for n in rnd.notices)


def test_idempotent():
    rnd = normalized("carbanak", [("a", "1.A.1", "Telemetry"), ("a", "1.A.1", "Technique", ["Delayed"]),
                                  ("b", "1.A.1", "N/A")])
    assert normalize_round(rnd) == rnd


def test_legacy_flag_and_override(tmp_path):
    rnd = normalized("apt3", [("a", "1.A.1", "Enrichment")])
    assert rnd.legacy_mapped and rnd.detections[0].category is Category.GENERAL
    override = tmp_path / "map.json"
    override.write_text(json.dumps({"rounds": {"apt3": {"labels": {"Enrichment": "Telemetry"},
                                                        "legacy": ["Enrichment"]}}}))
    cmap = registry.load_category_map(override)
    rnd2 = normalize_round(parse_lines(lines_for("apt3", [("a", "1.A.1", "Enrichment")])), cmap)
    assert rnd2.detections[0].category is Category.TELEMETRY
    assert rnd2.category_map != rnd.category_map


def test_blocks_after_first_are_not_applicable():
    rnd = normalized("wss2022", [("a", "1.A.1", "None")],
                     protections=[("a", 1, "1.A.1", "Blocked"), ("a", 1, "1.A.2", "Blocked")])
    outcomes = [p.outcome for p in rnd.protections]
    assert outcomes == [Outcome.BLOCKED, Outcome.NOT_APPLICABLE]
