"""Convert MITRE-published per-vendor result files into ingestion records.

Two layouts are understood:

* the ``Adversaries`` layout (2020 onward): a list whose first element holds
  ``Adversaries[*].Detections_By_Step`` and ``Adversaries[*].Protections``;
* the ``Techniques`` layout (2019): ``Techniques[*].Steps[*].Detections``.

The published files carry no host or platform for a substep. When a substep
lacks ``Host``/``Platform`` keys the scenario name stands in for the host and
the platform defaults to windows, except that a ``Linux`` word in the
scenario or criteria text selects linux.
"""

from __future__ import annotations

import json
import logging

from . import registry
from .errors import ConfigError, ParseError

log = logging.getLogger(__name__)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _guess_platform(*texts):
    return "linux" if any("linux" in (t or "").lower() for t in texts) else "windows"


def _host_platform(sub, scenario):
    host = sub.get("Host") or sub.get("Hostname") or scenario
    platform = (sub.get("Platform") or "").lower()
    if platform not in ("windows", "linux"):
        platform = _guess_platform(scenario, sub.get("Criteria"))
    return str(host), platform


def _data_sources(detection):
    out = []
    for shot in detection.get("Screenshots") or ():
        for ds in shot.get("Data_Sources") or ():
            if ds not in out:
                out.append(ds)
    for ds in detection.get("Data_Sources") or detection.get("DataSources") or ():
        if ds not in out:
            out.append(ds)
    return out


def _pick_adversary(doc, round_id):
    adversaries = doc.get("Adversaries") or []
    if not adversaries:
        raise ParseError("no Adversaries entry")
    if round_id is None:
        return adversaries[0]
    for adv in adversaries:
        name = adv.get("Adversary_Name", "")
        try:
            if registry.resolve_round(name) == round_id:
                return adv
        except ConfigError:
            continue
    return adversaries[0]


def _adversaries_layout(data, vendor, round_id, source):
    doc = data[0] if isinstance(data, list) else data
    vendor = doc.get("Participant_Name") or vendor
    adv = _pick_adversary(doc, round_id)
    if round_id is None:
        round_id = registry.resolve_round(adv.get("Adversary_Name", ""))
    lines = [_dump({"record": "round", "round": round_id})]
    caps = " ".join(adv.get("Participant_Capabilities") or ())
    platforms = ["windows"] + (["linux"] if "linux" in caps.lower() else [])
    lines.append(_dump({"record": "participant", "vendor": vendor, "platforms": platforms}))

    for scenario, body in sorted((adv.get("Detections_By_Step") or {}).items()):
        for step in body.get("Steps") or ():
            for sub in step.get("Substeps") or ():
                host, platform = _host_platform(sub, scenario)
                technique = sub.get("Technique") or {}
                tactic = sub.get("Tactic") or {}
                base = {
                    "record": "detection", "vendor": vendor, "step": sub["Substep"],
                    "technique_id": (sub.get("Subtechnique") or {}).get("Subtechnique_Id")
                    or technique.get("Technique_Id"),
                    "technique_name": technique.get("Technique_Name", ""),
                    "tactic": tactic.get("Tactic_Name", ""),
                    "platform": platform, "host": host,
                }
                detections = sub.get("Detections") or []
                if not detections:
                    lines.append(_dump({**base, "category": "None", "modifiers": [], "data_sources": []}))
                for det in detections:
                    lines.append(_dump({
                        **base,
                        "category": det.get("Detection_Type") or "None",
                        "modifiers": list(det.get("Modifiers") or ()),
                        "data_sources": _data_sources(det),
                    }))

    tests = (adv.get("Protections") or {}).get("Protection_Tests") or ()
    for number, test in enumerate(tests, start=1):
        number = test.get("Test_Num", number)
        for sub in test.get("Substeps") or ():
            host, platform = _host_platform(sub, f"protection-{number}")
            lines.append(_dump({
                "record": "protection", "vendor": vendor, "test": int(number), "step": sub["Substep"],
                "technique_id": (sub.get("Technique") or {}).get("Technique_Id"),
                "category": sub.get("Protection_Type") or "None",
                "platform": platform, "host": host,
            }))
    return lines


def _techniques_layout(doc, vendor, round_id, source):
    if round_id is None:
        raise ParseError("Techniques-layout file needs a round id (name the directory after the round)", source)
    lines = [_dump({"record": "round", "round": round_id}),
             _dump({"record": "participant", "vendor": vendor, "platforms": ["windows"]})]
    for tech in doc["Techniques"]:
        tactics = tech.get("Tactics") or []
        tactic = ", ".join(t.get("TacticName", "") for t in tactics)
        for step in tech.get("Steps") or ():
            host, platform = _host_platform(step, "scenario")
            base = {
                "record": "detection", "vendor": vendor, "step": step["SubStep"],
                "technique_id": tech.get("TechniqueId"), "technique_name": tech.get("TechniqueName", ""),
                "tactic": tactic, "platform": platform, "host": host,
            }
            detections = step.get("Detections") or []
            if not detections:
                lines.append(_dump({**base, "category": "None", "modifiers": [], "data_sources": []}))
            for det in detections:
                lines.append(_dump({
                    **base,
                    "category": det.get("DetectionType") or "None",
                    "modifiers": list(det.get("Modifiers") or ()),
                    "data_sources": _data_sources(det),
                }))
    return lines


def convert_text(text: str, source: str = "<memory>", vendor: str = "vendor", round_id: str | None = None) -> list[str]:
    """Return ingestion-format lines for one MITRE result file."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", source) from None
    try:
        if isinstance(data, list) or (isinstance(data, dict) and "Adversaries" in data):
            return _adversaries_layout(data, vendor, round_id, source)
        if isinstance(data, dict) and "Techniques" in data:
            return _techniques_layout(data, vendor, round_id, source)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"unexpected result layout ({exc!r})", source) from None
    raise ParseError("unrecognized result-file layout", source)
