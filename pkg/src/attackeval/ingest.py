"""Round-local records and the line-delimited ingestion format.

Every line of an ingestion file is one JSON object whose ``record`` key names
its type (``round``, ``participant``, ``substep``, ``detection``,
``protection``). See ``docs/format.md`` for the field reference.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import registry
from .errors import ConfigError, ParseError
from .steps import is_step_id, major_step, step_key

log = logging.getLogger(__name__)

PLATFORMS = ("windows", "linux")


@dataclass(frozen=True)
class RawDetectionRecord:
    round_id: str
    vendor: str
    step: str
    technique_id: str
    technique_name: str
    tactic: str
    category: str
    modifiers: tuple[str, ...]
    data_sources: tuple[str, ...]
    platform: str
    host: str


@dataclass(frozen=True)
class RawProtectionRecord:
    round_id: str
    vendor: str
    test: int
    step: str
    technique_id: str
    category: str
    platform: str
    host: str


@dataclass(frozen=True)
class Substep:
    step: str
    host: str
    platform: str
    technique_id: str
    technique_name: str = ""
    tactic: str = ""


@dataclass(frozen=True)
class ParseSummary:
    participants: int
    techniques: int
    substeps: int
    major_steps: int
    hosts: int
    detection_records: int
    protection_records: int
    duplicate_detections: int


@dataclass(frozen=True)
class EvaluationRound:
    round_id: str
    year: int
    adversaries: tuple[str, ...]
    participants: tuple[str, ...]
    platform_support: dict[str, frozenset[str]]
    detections: tuple[RawDetectionRecord, ...]
    protections: tuple[RawProtectionRecord, ...]
    substeps: tuple[Substep, ...]
    summary: ParseSummary
    warnings: tuple[str, ...] = ()

    @property
    def info(self) -> registry.RoundInfo:
        return registry.rounds()[self.round_id]

    def substep_universe(self) -> frozenset[tuple[str, str]]:
        return frozenset((s.step, s.host) for s in self.substeps)


@dataclass(frozen=True)
class ArchiveHandle:
    """Files making up one round, as returned by fetch or built from a directory."""

    round_id: str | None
    directory: Path
    files: tuple[Path, ...]
    checksums: dict[str, str] = field(default_factory=dict, compare=False)

    @classmethod
    def from_path(cls, path: str | Path, round_id: str | None = None) -> "ArchiveHandle":
        path = Path(path)
        if path.is_dir():
            files = sorted(p for p in path.iterdir() if p.suffix in (".jsonl", ".json") and p.is_file())
            directory = path
        elif path.is_file():
            files, directory = [path], path.parent
        else:
            raise ConfigError(f"no such round directory or file: {path}")
        if not files:
            raise ConfigError(f"{path} contains no .jsonl or .json result files")
        return cls(round_id=round_id, directory=directory, files=tuple(files))


def summarize(rnd: EvaluationRound) -> ParseSummary:
    """Recount the summary figures directly from the record lists."""
    pairs = Counter((d.vendor, d.step) for d in rnd.detections)
    return ParseSummary(
        participants=len(rnd.participants),
        techniques=len({s.technique_id for s in rnd.substeps}),
        substeps=len(rnd.substeps),
        major_steps=len({major_step(s.step) for s in rnd.substeps}),
        hosts=len({s.host for s in rnd.substeps}),
        detection_records=len(rnd.detections),
        protection_records=len(rnd.protections),
        duplicate_detections=sum(n - 1 for n in pairs.values() if n > 1),
    )


# -- parsing -----------------------------------------------------------------

_DETECTION_REQUIRED = ("vendor", "step", "technique_id", "category", "platform", "host")
_PROTECTION_REQUIRED = ("vendor", "test", "step", "technique_id", "category", "platform", "host")
_SUBSTEP_REQUIRED = ("step", "host", "platform", "technique_id")


def _require(obj, keys, source, index):
    for k in keys:
        v = obj.get(k)
        if v is None or (isinstance(v, str) and not v.strip()):
            raise ParseError(f"missing required field {k!r}", source, index)


def _check_step(text, source, index):
    if not isinstance(text, str) or not is_step_id(text):
        raise ParseError(f"malformed step id {text!r}", source, index)


def _check_platform(text, source, index):
    if text not in PLATFORMS:
        raise ParseError(f"platform must be one of {PLATFORMS}, got {text!r}", source, index)


def _str_list(value, name, source, index) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise ParseError(f"{name!r} must be a list of strings", source, index)
    return tuple(value)


def iter_records(lines: Iterable[str], source: str):
    """Yield ``(index, obj)`` for each non-blank line; index is 1-based."""
    for index, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", source, index) from None
        if not isinstance(obj, dict) or "record" not in obj:
            raise ParseError("line is not an object with a 'record' key", source, index)
        yield index, obj


class _Builder:
    def __init__(self):
        self.round_ids: dict[str, str] = {}
        self.year = None
        self.adversaries: tuple[str, ...] = ()
        self.declared: dict[str, frozenset[str]] = {}
        self.substeps: dict[str, Substep] = {}
        self.raw_det: list[tuple[dict, str, int]] = []
        self.raw_prot: list[tuple[dict, str, int]] = []
        self.counts = Counter()

    def add(self, obj: dict, source: str, index: int) -> None:
        kind = obj["record"]
        if kind == "round":
            _require(obj, ("round",), source, index)
            self.round_ids[obj["round"]] = f"{source}:{index}"
            if obj.get("year") is not None:
                self.year = int(obj["year"])
            if obj.get("adversaries"):
                self.adversaries = _str_list(obj["adversaries"], "adversaries", source, index)
        elif kind == "participant":
            _require(obj, ("vendor",), source, index)
            platforms = _str_list(obj.get("platforms"), "platforms", source, index)
            for p in platforms:
                _check_platform(p, source, index)
            vendor = obj["vendor"]
            self.declared[vendor] = self.declared.get(vendor, frozenset()) | frozenset(platforms)
        elif kind == "substep":
            _require(obj, _SUBSTEP_REQUIRED, source, index)
            _check_step(obj["step"], source, index)
            _check_platform(obj["platform"], source, index)
            sub = Substep(
                step=obj["step"],
                host=obj["host"],
                platform=obj["platform"],
                technique_id=obj["technique_id"],
                technique_name=obj.get("technique_name") or "",
                tactic=obj.get("tactic") or "",
            )
            old = self.substeps.get(sub.step)
            if old is not None and old != sub:
                raise ParseError(f"substep {sub.step} declared twice with different fields", source, index)
            self.substeps[sub.step] = sub
        elif kind == "detection":
            _require(obj, _DETECTION_REQUIRED, source, index)
            _check_step(obj["step"], source, index)
            _check_platform(obj["platform"], source, index)
            _str_list(obj.get("modifiers"), "modifiers", source, index)
            _str_list(obj.get("data_sources"), "data_sources", source, index)
            self.raw_det.append((obj, source, index))
            self.counts["detection"] += 1
        elif kind == "protection":
            _require(obj, _PROTECTION_REQUIRED, source, index)
            _check_step(obj["step"], source, index)
            _check_platform(obj["platform"], source, index)
            test = obj["test"]
            if not isinstance(test, int) or isinstance(test, bool) or test < 1:
                raise ParseError(f"test number must be an integer >= 1, got {test!r}", source, index)
            self.raw_prot.append((obj, source, index))
            self.counts["protection"] += 1
        else:
            raise ParseError(f"unknown record type {kind!r}", source, index)

    def build(self, fallback_round: str | None) -> EvaluationRound:
        names = set(self.round_ids) or ({fallback_round} if fallback_round else set())
        if not names:
            raise ParseError("no 'round' record found and no round id supplied")
        resolved = {registry.resolve_round(n) for n in names}
        if len(resolved) > 1:
            raise ParseError(f"files disagree on round id: {sorted(resolved)}")
        round_id = resolved.pop()
        info = registry.rounds()[round_id]

        record_vendors = {o["vendor"] for o, _, _ in self.raw_det} | {o["vendor"] for o, _, _ in self.raw_prot}
        if self.declared:
            for obj, source, index in self.raw_det + self.raw_prot:
                if obj["vendor"] not in self.declared:
                    raise ParseError(f"vendor {obj['vendor']!r} is not a declared participant", source, index)
            participants = tuple(sorted(self.declared))
        else:
            participants = tuple(sorted(record_vendors))
        if not participants:
            raise ParseError("empty participant list")

        detections = []
        for obj, source, index in self.raw_det:
            step = obj["step"]
            detections.append(RawDetectionRecord(
                round_id=round_id,
                vendor=obj["vendor"],
                step=step,
                technique_id=obj["technique_id"],
                technique_name=obj.get("technique_name") or "",
                tactic=obj.get("tactic") or "",
                category=obj["category"],
                modifiers=tuple(obj.get("modifiers") or ()),
                data_sources=tuple(obj.get("data_sources") or ()),
                platform=obj["platform"],
                host=obj["host"],
            ))
            self._note_substep(step, obj, source, index)
        protections = []
        for obj, source, index in self.raw_prot:
            protections.append(RawProtectionRecord(
                round_id=round_id,
                vendor=obj["vendor"],
                test=obj["test"],
                step=obj["step"],
                technique_id=obj["technique_id"],
                category=obj["category"],
                platform=obj["platform"],
                host=obj["host"],
            ))

        detections.sort(key=_detection_sort_key)
        protections.sort(key=lambda p: (p.vendor, p.test, step_key(p.step), p.technique_id, p.category, p.host))
        substeps = tuple(sorted(self.substeps.values(), key=lambda s: step_key(s.step)))

        pairs = Counter((d.vendor, d.step) for d in detections)
        warnings = tuple(
            f"vendor {v!r} has {n} detection records for step {s}"
            for (v, s), n in sorted(pairs.items(), key=lambda kv: (kv[0][0], step_key(kv[0][1])))
            if n > 1 and info.counting == "max"
        )
        if warnings:
            log.warning("%s: %d (vendor, step) pairs carry multiple detection records; all retained",
                        round_id, len(warnings))

        summary = ParseSummary(
            participants=len(participants),
            techniques=len({s.technique_id for s in substeps}),
            substeps=len(substeps),
            major_steps=len({major_step(s.step) for s in substeps}),
            hosts=len({s.host for s in substeps}),
            detection_records=self.counts["detection"],
            protection_records=self.counts["protection"],
            duplicate_detections=sum(n - 1 for n in pairs.values() if n > 1),
        )
        log.info("parsed %s: %d participants, %d techniques, %d substeps in %d major steps",
                 round_id, summary.participants, summary.techniques, summary.substeps, summary.major_steps)
        return EvaluationRound(
            round_id=round_id,
            year=self.year if self.year is not None else info.year,
            adversaries=self.adversaries or info.adversaries,
            participants=participants,
            platform_support={v: self.declared.get(v, frozenset()) for v in participants},
            detections=tuple(detections),
            protections=tuple(protections),
            substeps=substeps,
            summary=summary,
            warnings=warnings,
        )

    def _note_substep(self, step, obj, source, index):
        old = self.substeps.get(step)
        if old is None:
            # first writer wins; records are visited in canonical order below
            self.substeps[step] = Substep(
                step=step,
                host=obj["host"],
                platform=obj["platform"],
                technique_id=obj["technique_id"],
                technique_name=obj.get("technique_name") or "",
                tactic=obj.get("tactic") or "",
            )
        elif old.host != obj["host"] or old.platform != obj["platform"]:
            raise ParseError(
                f"step {step} recorded on host {obj['host']}/{obj['platform']} "
                f"but previously on {old.host}/{old.platform}", source, index)


def _detection_sort_key(d: RawDetectionRecord):
    return (d.vendor, step_key(d.step), d.category, d.modifiers, d.data_sources,
            d.technique_id, d.technique_name, d.tactic, d.host, d.platform)


def parse_lines(lines: Iterable[str], source: str = "<memory>", round_id: str | None = None) -> EvaluationRound:
    b = _Builder()
    for index, obj in iter_records(lines, source):
        b.add(obj, source, index)
    b.raw_det.sort(key=lambda t: _raw_sort_key(t[0]))
    return b.build(round_id)


def _raw_sort_key(obj: dict):
    return json.dumps(obj, sort_keys=True)


def parse_round(files: ArchiveHandle | str | Path | Sequence[str | Path]) -> EvaluationRound:
    """Parse a round from an archive handle, a directory, or a list of files.

    ``.jsonl`` files are read in the documented ingestion format; ``.json``
    files are treated as MITRE-published result files and converted first.
    """
    from . import mitre_adapter

    if isinstance(files, ArchiveHandle):
        handle = files
    elif isinstance(files, (str, Path)):
        handle = ArchiveHandle.from_path(files)
    else:
        paths = tuple(sorted(Path(p) for p in files))
        if not paths:
            raise ConfigError("no files given")
        handle = ArchiveHandle(round_id=None, directory=paths[0].parent, files=paths)

    fallback = handle.round_id
    if fallback is None:
        try:
            fallback = registry.resolve_round(handle.directory.name)
        except ConfigError:
            fallback = None

    b = _Builder()
    for path in handle.files:
        source = path.name
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read: {exc}", str(path)) from exc
        if path.suffix == ".json":
            lines = mitre_adapter.convert_text(text, source=source, vendor=path.stem, round_id=fallback)
        else:
            lines = text.splitlines()
        for index, obj in iter_records(lines, source):
            b.add(obj, source, index)
    b.raw_det.sort(key=lambda t: _raw_sort_key(t[0]))
    return b.build(fallback)


# -- serialization -----------------------------------------------------------

def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def vendor_slug(vendor: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", vendor.lower()).strip("-") or "vendor"


def dumps_round(rnd: EvaluationRound) -> dict[str, str]:
    """Render a round as ``{file name: text}`` in the ingestion format."""
    files: dict[str, list[str]] = {}
    head = [_dump({"record": "round", "round": rnd.round_id, "year": rnd.year,
                   "adversaries": list(rnd.adversaries)})]
    for s in rnd.substeps:
        head.append(_dump({"record": "substep", "step": s.step, "host": s.host, "platform": s.platform,
                           "technique_id": s.technique_id, "technique_name": s.technique_name,
                           "tactic": s.tactic}))
    files["round.jsonl"] = head

    names: dict[str, str] = {}
    for vendor in rnd.participants:
        name = vendor_slug(vendor) + ".jsonl"
        n = 2
        while name in files or name == "round.jsonl":
            name = f"{vendor_slug(vendor)}-{n}.jsonl"
            n += 1
        names[vendor] = name
        files[name] = [_dump({"record": "participant", "vendor": vendor,
                              "platforms": sorted(rnd.platform_support.get(vendor, ()))})]
    for d in rnd.detections:
        files[names[d.vendor]].append(_dump({
            "record": "detection", "vendor": d.vendor, "step": d.step,
            "technique_id": d.technique_id, "technique_name": d.technique_name, "tactic": d.tactic,
            "category": d.category, "modifiers": list(d.modifiers), "data_sources": list(d.data_sources),
            "platform": d.platform, "host": d.host}))
    for p in rnd.protections:
        files[names[p.vendor]].append(_dump({
            "record": "protection", "vendor": p.vendor, "test": p.test, "step": p.step,
            "technique_id": p.technique_id, "category": p.category,
            "platform": p.platform, "host": p.host}))
    return {name: "\n".join(lines) + "\n" for name, lines in files.items()}


def write_round(rnd: EvaluationRound, directory: str | Path) -> ArchiveHandle:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in sorted(dumps_round(rnd).items()):
        path = directory / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return ArchiveHandle(round_id=rnd.round_id, directory=directory, files=tuple(paths))


# -- validation --------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    kind: str
    severity: str  # "error" | "warning" | "info"
    message: str
    vendor: str = ""
    step: str = ""
    host: str = ""


@dataclass(frozen=True)
class ValidationReport:
    round_id: str
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def of_kind(self, kind: str) -> list[Finding]:
        return [f for f in self.findings if f.kind == kind]


def _in_labels(label: str, allowed: frozenset[str]) -> bool:
    folded = label.strip().casefold()
    return any(a.casefold() == folded for a in allowed)


def validate_round(rnd: EvaluationRound) -> ValidationReport:
    """Collect invariant violations without raising."""
    info = rnd.info
    findings: list[Finding] = []

    foreign = Counter(d.category for d in rnd.detections if not _in_labels(d.category, info.categories))
    for label, n in sorted(foreign.items()):
        findings.append(Finding("foreign-category", "error",
                                f"category {label!r} foreign to {rnd.round_id} taxonomy ({n} records)"))
    mods = Counter(m for d in rnd.detections for m in d.modifiers if not _in_labels(m, info.modifiers))
    for label, n in sorted(mods.items()):
        findings.append(Finding("unknown-modifier", "warning",
                                f"modifier {label!r} unknown for {rnd.round_id}; dropped ({n} records)"))
    pcats = Counter(p.category for p in rnd.protections if not _in_labels(p.category, info.protection_categories))
    for label, n in sorted(pcats.items()):
        findings.append(Finding("foreign-protection-category", "error",
                                f"protection category {label!r} foreign to {rnd.round_id} ({n} records)"))
    if info.protection_tests is not None:
        bad = sorted({p.test for p in rnd.protections if p.test > info.protection_tests})
        for t in bad:
            findings.append(Finding("test-out-of-range", "error",
                                    f"protection test {t} exceeds the {info.protection_tests} tests of {rnd.round_id}"))

    host_steps: dict[str, set[str]] = defaultdict(set)
    for s in rnd.substeps:
        host_steps[s.host].add(s.step)
    seen: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
    for d in rnd.detections:
        seen[d.vendor][d.host].add(d.step)
    hosts_with_records = {d.host for d in rnd.detections}
    for host in sorted(host_steps):
        if host not in hosts_with_records:
            findings.append(Finding("empty-host", "warning", f"host {host} has no detection records", host=host))
    for vendor in rnd.participants:
        for host in sorted(host_steps):
            got = seen[vendor].get(host, set())
            if not got:
                if host in hosts_with_records:
                    findings.append(Finding("platform-gap", "info",
                                            f"vendor {vendor} has no records for host {host}",
                                            vendor=vendor, host=host))
                continue
            missing = host_steps[host] - got
            if missing:
                first = min(missing, key=step_key)
                findings.append(Finding("incomplete-coverage", "error",
                                        f"vendor {vendor} lacks {len(missing)} substeps on host {host} "
                                        f"(first: {first})", vendor=vendor, step=first, host=host))
    return ValidationReport(rnd.round_id, tuple(findings))
