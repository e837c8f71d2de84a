import json

import pytest

from attackeval.errors import ParseError
from attackeval.ingest import parse_round
from attackeval.mitre_adapter import convert_text
from attackeval.normalize import Category, normalize_round

ADVERSARIES = [{
    "Participant_Name": "Acme",
    "Adversaries": [{
        "Adversary_Name": "wizard-spider-sandworm",
        "Participant_Capabilities": ["Linux Capability"],
        "Detections_By_Step": {
            "Scenario_1": {"Steps": [{"Substeps": [
                {"Substep": "1.A.1", "Technique": {"Technique_Id": "T1204", "Technique_Name": "User Execution"},
                 "Subtechnique": {"Subtechnique_Id": "T1204.002"}, "Tactic": {"Tactic_Name": "Execution"},
                 "Detections": [
                     {"Detection_Type": "Telemetry", "Modifiers": [],
                      "Screenshots": [{"Data_Sources": ["Process: Process Creation"]}]},
                     {"Detection_Type": "Technique", "Modifiers": ["Delayed"],
                      "Screenshots": [{"Data_Sources": ["File: File Creation"]}]}]},
                {"Substep": "1.A.2", "Technique": {"Technique_Id": "T1573"}, "Tactic": {},
                 "Detections": []}]}]},
            "Scenario_Linux": {"Steps": [{"Substeps": [
                {"Substep": "9.A.1", "Technique": {"Technique_Id": "T1059"}, "Detections": [
                    {"Detection_Type": "None"}]}]}]},
        },
        "Protections": {"Protection_Tests": [
            {"Test_Num": 1, "Substeps": [
                {"Substep": "1.A.1", "Technique": {"Technique_Id": "T1204"}, "Protection_Type": "Blocked"}]}]},
    }],
}]


def test_adversaries_layout(tmp_path):
    lines = convert_text(json.dumps(ADVERSARIES), vendor="fallback")
    recs = [json.loads(x) for x in lines]
    assert recs[0] == {"record": "round", "round": "wizard_spider_sandworm"}
    assert recs[1]["vendor"] == "Acme" and recs[1]["platforms"] == ["windows", "linux"]
    dets = [r for r in recs if r["record"] == "detection"]
    assert len(dets) == 4
    assert {d["platform"] for d in dets if d["step"] == "9.A.1"} == {"linux"}
    assert [r for r in recs if r["record"] == "protection"][0]["category"] == "Blocked"

    (tmp_path / "acme.json").write_text(json.dumps(ADVERSARIES))
    rnd = normalize_round(parse_round(tmp_path))
    top = [d for d in rnd.detections if d.step == "1.A.1"][0]
    assert top.category is Category.TECHNIQUE and top.discarded == 1
    assert top.technique_id == "T1204.002"


def test_techniques_layout(tmp_path):
    doc = {"Techniques": [{"TechniqueId": "T1055", "TechniqueName": "Process Injection",
                           "Tactics": [{"TacticName": "Defense Evasion"}],
                           "Steps": [{"SubStep": "2.B.1", "Detections": [
                               {"DetectionType": "MSSP", "Modifiers": ["Correlated"]}]}]}]}
    d = tmp_path / "apt29"
    d.mkdir()
    (d / "vendor.json").write_text(json.dumps(doc))
    rnd = normalize_round(parse_round(d))
    assert rnd.round_id == "apt29" and rnd.legacy_mapped
    assert rnd.detections[0].category is Category.GENERAL


def test_unrecognized_layout():
    with pytest.raises(ParseError):
        convert_text(json.dumps({"something": 1}))
    with pytest.raises(ParseError):
        convert_text("{broken")
