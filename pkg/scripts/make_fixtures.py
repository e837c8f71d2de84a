#!/usr/bin/env python3
"""Generate the synthetic evaluation rounds shipped under ``fixtures/rounds``
and the small trend rounds under ``tests/fixtures/trend``.

The rounds are synthetic: vendor names are ``vendor-NN`` and detection
outcomes are drawn from a seeded generator. Their shape (participants,
substeps, techniques, hosts, platform support, protection block counts,
data-source rankings) is pinned so the analyses have known answers; see
``docs/format.md`` for the layout and ``tests/`` for what is checked.

Usage: python3 scripts/make_fixtures.py [--out DIR] [--seed N]
"""

from __future__ import annotations

import argparse
import json
import random
import shutil
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

# (technique id, name, tactic) -- a pool of real ATT&CK enterprise techniques
TECHNIQUES = [
    ("T1003.001", "OS Credential Dumping: LSASS Memory", "Credential Access"),
    ("T1005", "Data from Local System", "Collection"),
    ("T1012", "Query Registry", "Discovery"),
    ("T1016", "System Network Configuration Discovery", "Discovery"),
    ("T1018", "Remote System Discovery", "Discovery"),
    ("T1021.001", "Remote Services: Remote Desktop Protocol", "Lateral Movement"),
    ("T1021.002", "Remote Services: SMB/Windows Admin Shares", "Lateral Movement"),
    ("T1021.004", "Remote Services: SSH", "Lateral Movement"),
    ("T1027", "Obfuscated Files or Information", "Defense Evasion"),
    ("T1033", "System Owner/User Discovery", "Discovery"),
    ("T1036.005", "Masquerading: Match Legitimate Name or Location", "Defense Evasion"),
    ("T1041", "Exfiltration Over C2 Channel", "Exfiltration"),
    ("T1047", "Windows Management Instrumentation", "Execution"),
    ("T1053.005", "Scheduled Task/Job: Scheduled Task", "Persistence"),
    ("T1055", "Process Injection", "Defense Evasion"),
    ("T1056.001", "Input Capture: Keylogging", "Collection"),
    ("T1057", "Process Discovery", "Discovery"),
    ("T1059.001", "Command and Scripting Interpreter: PowerShell", "Execution"),
    ("T1059.003", "Command and Scripting Interpreter: Windows Command Shell", "Execution"),
    ("T1059.004", "Command and Scripting Interpreter: Unix Shell", "Execution"),
    ("T1059.005", "Command and Scripting Interpreter: Visual Basic", "Execution"),
    ("T1069.002", "Permission Groups Discovery: Domain Groups", "Discovery"),
    ("T1070.004", "Indicator Removal: File Deletion", "Defense Evasion"),
    ("T1071.001", "Application Layer Protocol: Web Protocols", "Command and Control"),
    ("T1074.001", "Data Staged: Local Data Staging", "Collection"),
    ("T1082", "System Information Discovery", "Discovery"),
    ("T1083", "File and Directory Discovery", "Discovery"),
    ("T1087.002", "Account Discovery: Domain Account", "Discovery"),
    ("T1105", "Ingress Tool Transfer", "Command and Control"),
    ("T1106", "Native API", "Execution"),
    ("T1110.003", "Brute Force: Password Spraying", "Credential Access"),
    ("T1112", "Modify Registry", "Defense Evasion"),
    ("T1113", "Screen Capture", "Collection"),
    ("T1114.001", "Email Collection: Local Email Collection", "Collection"),
    ("T1115", "Clipboard Data", "Collection"),
    ("T1129", "Shared Modules", "Execution"),
    ("T1135", "Network Share Discovery", "Discovery"),
    ("T1140", "Deobfuscate/Decode Files or Information", "Defense Evasion"),
    ("T1204.002", "User Execution: Malicious File", "Execution"),
    ("T1218.011", "System Binary Proxy Execution: Rundll32", "Defense Evasion"),
    ("T1482", "Domain Trust Discovery", "Discovery"),
    ("T1485", "Data Destruction", "Impact"),
    ("T1486", "Data Encrypted for Impact", "Impact"),
    ("T1489", "Service Stop", "Impact"),
    ("T1490", "Inhibit System Recovery", "Impact"),
    ("T1543.003", "Create or Modify System Process: Windows Service", "Persistence"),
    ("T1547.001", "Boot or Logon Autostart Execution: Registry Run Keys / Startup Folder", "Persistence"),
    ("T1552.001", "Unsecured Credentials: Credentials In Files", "Credential Access"),
    ("T1555.003", "Credentials from Password Stores: Credentials from Web Browsers", "Credential Access"),
    ("T1558.003", "Steal or Forge Kerberos Tickets: Kerberoasting", "Credential Access"),
    ("T1560.001", "Archive Collected Data: Archive via Utility", "Collection"),
    ("T1569.002", "System Services: Service Execution", "Execution"),
    ("T1570", "Lateral Tool Transfer", "Lateral Movement"),
    ("T1573", "Encrypted Channel", "Command and Control"),
    ("T1574.002", "Hijack Execution Flow: DLL Side-Loading", "Defense Evasion"),
    ("T1003.003", "OS Credential Dumping: NTDS", "Credential Access"),
    ("T1007", "System Service Discovery", "Discovery"),
    ("T1049", "System Network Connections Discovery", "Discovery"),
    ("T1078.002", "Valid Accounts: Domain Accounts", "Defense Evasion"),
    ("T1095", "Non-Application Layer Protocol", "Command and Control"),
]
TACTIC_OF = {t: tac for t, _, tac in TECHNIQUES}
NAME_OF = {t: name for t, name, _ in TECHNIQUES}

# data-source categories in descending weight; the first five are the intended top five
DS_2022 = ["Process", "File", "Network Traffic", "OS API Execution", "Logon Session"] + [
    "Command", "Script", "Windows Registry", "Module", "Named Pipe", "User Account", "Scheduled Job",
    "Service", "Driver", "WMI", "Active Directory", "Application Log", "Network Share", "Kernel",
    "Sensor Health", "Drive", "Certificate", "Firewall", "Group", "Image", "Instance", "Volume",
    "Snapshot", "Web Credential", "Domain Name", "Firmware", "Cloud Storage", "Cloud Service",
    "Container", "Pod", "Persona", "Malware Repository", "Internet Scan", "Cluster",
    "Application Vulnerability", "User Interface",
]
DS_2020 = ["Process", "File", "Network Traffic", "Script", "OS API Execution"] + [
    "Command", "Windows Registry", "Module", "Logon Session", "User Account", "Named Pipe", "Service",
    "WMI", "Active Directory", "Scheduled Job", "Driver", "Kernel", "Application Log", "Network Share",
    "Group", "Sensor Health", "Drive", "Firewall", "Image", "Certificate",
]
DS_2019 = ["File", "Command", "Process", "Script", "Network Traffic",
           "Windows Registry", "Module", "OS API Execution", "Logon Session"]
SUBCATEGORY = {
    "Process": ["Process Creation", "Process Access", "OS API Execution"],
    "File": ["File Creation", "File Modification", "File Access"],
    "Command": ["Command Execution"],
    "Network Traffic": ["Network Connection Creation", "Network Traffic Content"],
}


def dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def weighted_sources(rng, names, k):
    """Pick ``k`` distinct categories with weights strongly favouring the head."""
    weights = [40, 28, 20, 14, 10] + [2] * (len(names) - 5)
    out = []
    while len(out) < k:
        c = rng.choices(names, weights)[0]
        if c not in out:
            out.append(c)
    return out


class RoundWriter:
    def __init__(self, round_id: str, year: int, adversaries: list[str]):
        self.round_id, self.year, self.adversaries = round_id, year, adversaries
        self.substeps: list[dict] = []
        self.vendors: dict[str, list[str]] = {}
        self.records: dict[str, list[dict]] = {}

    def substep(self, step, host, platform, technique):
        self.substeps.append({"record": "substep", "step": step, "host": host, "platform": platform,
                              "technique_id": technique, "technique_name": NAME_OF.get(technique, ""),
                              "tactic": TACTIC_OF.get(technique, "")})

    def vendor(self, name, platforms):
        self.vendors[name] = platforms
        self.records[name] = []

    def detection(self, vendor, sub, category, modifiers=(), data_sources=()):
        self.records[vendor].append({
            "record": "detection", "vendor": vendor, "step": sub["step"],
            "technique_id": sub["technique_id"], "technique_name": sub["technique_name"],
            "tactic": sub["tactic"], "category": category, "modifiers": list(modifiers),
            "data_sources": list(data_sources), "platform": sub["platform"], "host": sub["host"],
        })

    def protection(self, vendor, test, step, technique, category, platform, host):
        self.records[vendor].append({
            "record": "protection", "vendor": vendor, "test": test, "step": step,
            "technique_id": technique, "category": category, "platform": platform, "host": host,
        })

    def write(self, directory: Path) -> None:
        if directory.exists():
            shutil.rmtree(directory)
        directory.mkdir(parents=True)
        head = [dump({"record": "round", "round": self.round_id, "year": self.year,
                      "adversaries": self.adversaries})]
        head += [dump(s) for s in self.substeps]
        (directory / "round.jsonl").write_text("\n".join(head) + "\n", encoding="utf-8")
        for vendor, platforms in self.vendors.items():
            lines = [dump({"record": "participant", "vendor": vendor, "platforms": platforms})]
            lines += [dump(r) for r in self.records[vendor]]
            (directory / f"{vendor}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def layout(rng, writer, hosts, per_host, first_major, n_techniques, fixed=()):
    """Add substeps host by host; ``fixed`` are pre-made (step, host, platform, technique) tuples.

    Exactly ``n_techniques`` distinct techniques are used overall.
    """
    fixed_tech = {f[3] for f in fixed}
    pool = [t for t, _, _ in TECHNIQUES if t not in fixed_tech]
    rng.shuffle(pool)
    pool = sorted(fixed_tech) + pool[: n_techniques - len(fixed_tech)]
    unused = [t for t in pool if t not in fixed_tech]
    for step, host, platform, tech in fixed:
        writer.substep(step, host, platform, tech)
    major = first_major
    for (host, platform), count in zip(hosts, per_host):
        made = 0
        while made < count:
            size = min(rng.randint(3, 7), count - made)
            for i in range(size):
                tech = unused.pop() if unused else rng.choice(pool)
                writer.substep(f"{major}.A.{i + 1}", host, platform, tech)
            made += size
            major += 1
    assert not unused, "not enough substeps to cover the technique count"


def vendor_profile(rng):
    return {"vis": rng.uniform(0.70, 0.97), "ana": rng.uniform(0.35, 0.85), "tech": rng.uniform(0.4, 0.8)}


def draw_category(rng, prof):
    if rng.random() >= prof["vis"]:
        return "None"
    if rng.random() >= prof["ana"]:
        return "Telemetry"
    r = rng.random()
    if r < prof["tech"]:
        return "Technique"
    return "Tactic" if r < prof["tech"] + (1 - prof["tech"]) * 0.6 else "General"


def modifiers_for(rng, category, delayed="Delayed", config="Configuration Change"):
    if category in ("None", "N/A"):
        return []
    mods = []
    if rng.random() < 0.06:
        mods.append(delayed)
    if rng.random() < 0.05:
        mods.append(config)
    return mods


def sources_for(rng, category, names, style):
    if category in ("None", "N/A") or style is None:
        return []
    picked = weighted_sources(rng, names, rng.choice((1, 1, 2)))
    if style == "plain":
        return picked
    return [f"{c}: {rng.choice(SUBCATEGORY.get(c, ['Activity']))}" for c in picked]


# -- 2022 ----------------------------------------------------------------------

def read_scenario(path):
    steps = []
    for line in path.read_text(encoding="utf-8").splitlines():
        obj = json.loads(line)
        if obj["record"] == "step":
            steps.append(obj)
    return steps


def make_wss(rng, out: Path):
    w = RoundWriter("wizard_spider_sandworm", 2022, ["Wizard Spider", "Sandworm"])
    scenario = read_scenario(ROOT / "scenarios" / "wss.jsonl")
    fixed = [(s["step"], s["host"], "windows", s["technique_id"]) for s in scenario]
    hosts = [("win-02", "windows"), ("win-03", "windows"), ("win-05", "windows"), ("lin-01", "linux")]
    layout(rng, w, hosts, [21, 20, 20, 22], first_major=8, n_techniques=46, fixed=fixed)
    assert len(w.substeps) == 109

    vendors = [f"vendor-{i:02d}" for i in range(1, 31)]
    windows_only = {f"vendor-{i:02d}" for i in (18, 19, 20, 21, 22, 28, 29, 30)}
    for v in vendors:
        w.vendor(v, ["windows"] if v in windows_only else ["windows", "linux"])

    # pinned cells: step 1.A.4 seen by 27 of 30; step 5.A.3 seen by 18 of 28 applicable
    blind_14 = set(rng.sample(vendors, 3))
    na_53 = set(rng.sample(vendors, 2))
    rest = [v for v in vendors if v not in na_53]
    seen_53 = set(rng.sample(rest, 18))

    profiles = {v: vendor_profile(rng) for v in vendors}
    for v in vendors:
        prof = profiles[v]
        for sub in w.substeps:
            if sub["platform"] == "linux" and v in windows_only:
                continue  # left for the normalizer to fill as not applicable
            cat = draw_category(rng, prof)
            if sub["step"] == "1.A.4":
                cat = "None" if v in blind_14 else (cat if cat != "None" else "Telemetry")
            elif sub["step"] == "5.A.3":
                if v in na_53:
                    cat = "N/A"
                elif v in seen_53:
                    cat = cat if cat != "None" else "Telemetry"
                else:
                    cat = "None"
            w.detection(v, sub, cat, modifiers_for(rng, cat), sources_for(rng, cat, DS_2022, "sub"))

    # protection: vendors 01-22 take part; 01-17 also run the linux test (test 7)
    protection_vendors = vendors[:22]
    tech_of = {s["step"]: (s["technique_id"], s["host"]) for s in scenario}
    tests = {
        1: ["1.A.1", "1.A.2", "1.A.3", "1.A.4", "1.A.5", "1.A.7", "1.A.8", "2.A.1", "4.A.1"],
        2: ["5.A.1", "5.A.2", "5.A.3", "5.A.4", "6.A.1", "6.A.2", "6.A.3", "7.A.1", "7.A.2"],
    }
    extra_hosts = {3: "win-02", 4: "win-02", 5: "win-03", 6: "win-03", 7: "lin-01", 8: "win-05", 9: "win-05"}
    for t, host in extra_hosts.items():
        steps = [f"{20 + t}.A.{i}" for i in range(1, 6)]
        tests[t] = steps
        for i, s in enumerate(steps):
            tech = [x for x, _, _ in TECHNIQUES][(t * 5 + i) % len(TECHNIQUES)]
            tech_of[s] = (tech, host)
    blocked_counts = {1: 21, 2: 21, 3: 16, 4: 12, 5: 15, 6: 20, 7: 9, 8: 20, 9: 18}

    def block_plan(test):
        members = [v for v in protection_vendors if not (test == 7 and v in windows_only)]
        order = members[:]
        rng.shuffle(order)
        steps = tests[test]
        plan = {}
        if test == 1:
            # 14 at the first step, 3 more before the baseline, 2 at it, 2 after, 1 never
            spots = ["1.A.1"] * 14 + ["1.A.4"] * 3 + ["1.A.7"] * 2 + ["1.A.8", "4.A.1"] + [None]
        elif test == 2:
            spots = ["5.A.3"] * 6 + ["5.A.4"] * 5 + ["6.A.1"] * 6 + ["6.A.2"] * 4 + [None]
        else:
            n = blocked_counts[test]
            spots = [rng.choice(steps) for _ in range(n)] + [None] * (len(members) - n)
        for v, spot in zip(order, spots):
            plan[v] = spot
        return plan

    for test in range(1, 10):
        plan = block_plan(test)
        for v in protection_vendors:
            spot = plan.get(v)
            done = False
            for s in tests[test]:
                tech, host = tech_of[s]
                platform = "linux" if host.startswith("lin") else "windows"
                if v not in plan or done:
                    cat = "N/A"
                elif s == spot:
                    cat, done = "Blocked", True
                else:
                    cat = "None"
                w.protection(v, test, s, tech, cat, platform, host)
    w.write(out / "wizard_spider_sandworm")


# -- 2020 ----------------------------------------------------------------------

def make_carbanak(rng, out: Path):
    w = RoundWriter("carbanak_fin7", 2020, ["Carbanak", "FIN7"])
    hosts = [("hotelmanager", "windows"), ("itadmin", "windows"), ("accounting", "windows"),
             ("bankfileserver", "linux"), ("cfo", "windows")]
    layout(rng, w, hosts, [40, 36, 36, 26, 36], first_major=1, n_techniques=46)
    assert len(w.substeps) == 174
    vendors = [f"vendor-{i:02d}" for i in range(1, 30)]
    windows_only = {f"vendor-{i:02d}" for i in (4, 9, 13, 17, 21, 25, 29)}
    for v in vendors:
        w.vendor(v, ["windows"] if v in windows_only else ["windows", "linux"])

    # vendor-07: 22 of 174 substeps unseen; 88 of the 152 seen only at telemetry
    pinned = "vendor-07"
    order = list(range(174))
    rng.shuffle(order)
    unseen, tele = set(order[:22]), set(order[22:110])

    for v in vendors:
        prof = vendor_profile(rng)
        for idx, sub in enumerate(w.substeps):
            if sub["platform"] == "linux" and v in windows_only:
                continue
            if v == pinned:
                cat = "None" if idx in unseen else "Telemetry" if idx in tele else rng.choice(
                    ["Technique", "Technique", "Tactic", "General"])
            else:
                cat = draw_category(rng, prof)
            mods = modifiers_for(rng, cat, config="Config Change")
            w.detection(v, sub, cat, mods, sources_for(rng, cat, DS_2020, "plain"))
            # several detections per substep were reported before 2022
            if cat in ("Technique", "Tactic", "General") and v != pinned and rng.random() < 0.3:
                w.detection(v, sub, "Telemetry", [], sources_for(rng, "Telemetry", DS_2020, "plain"))
    w.write(out / "carbanak_fin7")


# -- 2019 / 2018 -----------------------------------------------------------------

def make_apt29(rng, out: Path):
    w = RoundWriter("apt29", 2019, ["APT29"])
    layout(rng, w, [("nashua", "windows"), ("scranton", "windows"), ("utica", "windows")],
           [50, 44, 40], first_major=1, n_techniques=53)
    assert len(w.substeps) == 134
    vendors = [f"vendor-{i:02d}" for i in range(1, 22)]
    for v in vendors:
        w.vendor(v, ["windows"])
    for v in vendors:
        prof = vendor_profile(rng)
        for sub in w.substeps:
            cat = draw_category(rng, prof)
            if cat == "General" and rng.random() < 0.3:
                cat = "MSSP"
            mods = modifiers_for(rng, cat, delayed="Delayed (Processing)", config="Configuration Change (UX)")
            if cat not in ("None",) and rng.random() < 0.2:
                mods.append("Correlated")
            w.detection(v, sub, cat, mods, sources_for(rng, cat, DS_2019, "sub"))
            if cat in ("Technique", "Tactic", "General", "MSSP") and rng.random() < 0.3:
                w.detection(v, sub, "Telemetry", [], sources_for(rng, "Telemetry", DS_2019, "sub"))
    w.write(out / "apt29")


def make_apt3(rng, out: Path):
    w = RoundWriter("apt3", 2018, ["APT3"])
    layout(rng, w, [("conficker", "windows"), ("creeper", "windows"), ("morris", "windows")],
           [50, 46, 40], first_major=1, n_techniques=51)
    assert len(w.substeps) == 136
    vendors = [f"vendor-{i:02d}" for i in range(1, 13)]
    legacy = {"Technique": "Specific Behavior", "Tactic": "General Behavior", "General": "Enrichment",
              "Telemetry": "Telemetry", "None": "None"}
    for v in vendors:
        w.vendor(v, ["windows"])
    for v in vendors:
        prof = vendor_profile(rng)
        for sub in w.substeps:
            cat = legacy[draw_category(rng, prof)]
            if cat == "Telemetry" and rng.random() < 0.3:
                cat = "Indicator of Compromise"
            mods = modifiers_for(rng, cat, config="Tainted")
            w.detection(v, sub, cat, mods, [])
    w.write(out / "apt3")


# -- trend fixtures ----------------------------------------------------------

TREND = {
    # round -> list of per-technique category counts (technique, tactic, general, telemetry)
    ("apt29", 2019): [(0, 0, 0, 4), (0, 0, 4, 0), (0, 4, 0, 0)],  # 0.25, 0.50, 0.75
    ("carbanak_fin7", 2020): [(0, 0, 4, 0), (8, 10, 3, 4), (6, 4, 0, 0)],  # 0.50, 0.72, 0.90
    ("wizard_spider_sandworm", 2022): [(0, 0, 2, 0), (12, 12, 0, 0), (15, 9, 1, 0), (4, 0, 0, 0)],
    # 0.50, 0.875, 0.89, 1.00 -> median 0.8825
}


def make_trend(out: Path):
    labels = ("Technique", "Tactic", "General", "Telemetry")
    techniques = [t for t, _, _ in TECHNIQUES]
    for (rid, year), rows in TREND.items():
        w = RoundWriter(rid, year, [])
        w.vendor("vendor-01", ["windows"])
        major = 1
        for tindex, counts in enumerate(rows):
            tech = techniques[tindex]
            step = 0
            for label, n in zip(labels, counts):
                for _ in range(n):
                    step += 1
                    w.substep(f"{major}.A.{step}", "host-1", "windows", tech)
                    w.detection("vendor-01", w.substeps[-1], label)
            # one unseen substep per technique: does not move confidence
            step += 1
            w.substep(f"{major}.A.{step}", "host-1", "windows", tech)
            w.detection("vendor-01", w.substeps[-1], "None")
            major += 1
        w.write(out / rid)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "fixtures" / "rounds"))
    ap.add_argument("--trend-out", default=str(ROOT / "tests" / "fixtures" / "trend"))
    ap.add_argument("--seed", type=int, default=20221)
    args = ap.parse_args(argv)
    out = Path(args.out)
    make_wss(random.Random(args.seed), out)
    make_carbanak(random.Random(args.seed + 1), out)
    make_apt29(random.Random(args.seed + 2), out)
    make_apt3(random.Random(args.seed + 3), out)
    make_trend(Path(args.trend_out))


if __name__ == "__main__":
    main()
