"""Download and cache published result files, pinned by ``rounds.lock``.

The lockfile is JSON::

    {"version": 1,
     "rounds": {"wizard_spider_sandworm": [
         {"name": "acme.json", "url": "https://...", "sha256": "ab12..."}]}}

``sha256`` may be null for a file that has not been pinned yet; the digest
observed on first download is reported in the handle so it can be written
back with ``fetch --update-lock``.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import registry
from .errors import ConfigError, FetchError, IntegrityError
from .ingest import ArchiveHandle

CACHE_ENV = "ATTACK_EVAL_CACHE"
DEFAULT_CACHE = Path.home() / ".cache" / "attackeval"


@dataclass(frozen=True)
class LockEntry:
    name: str
    url: str
    sha256: str | None = None


def cache_dir_from(flag: str | None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else DEFAULT_CACHE


def read_lock(path: str | Path) -> dict[str, list[LockEntry]]:
    path = Path(path)
    if not path.exists():
        return {}
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from None
    out: dict[str, list[LockEntry]] = {}
    for key, entries in (doc.get("rounds") or {}).items():
        rid = registry.resolve_round(key)
        out[rid] = [LockEntry(e["name"], e["url"], e.get("sha256")) for e in entries]
    return out


def write_lock(path: str | Path, entries: dict[str, list[LockEntry]]) -> None:
    doc = {"version": 1, "rounds": {
        rid: [{"name": e.name, "url": e.url, "sha256": e.sha256} for e in sorted(items, key=lambda e: e.name)]
        for rid, items in sorted(entries.items())
    }}
    atomic_write_bytes(Path(path), (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _default_opener(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def fetch_round(
    round_id: str,
    cache_dir: str | Path,
    *,
    lockfile: str | Path | None = None,
    urls: list[str] | None = None,
    opener: Callable[[str], bytes] | None = None,
    workers: int = 4,
) -> ArchiveHandle:
    """Ensure every listed file for ``round_id`` is in the cache; return a handle.

    Files already present in the cache are verified against pinned digests and
    never re-downloaded.
    """
    rid = registry.resolve_round(round_id)
    entries = list(read_lock(lockfile).get(rid, [])) if lockfile else []
    for url in urls or ():
        name = url.rstrip("/").rsplit("/", 1)[-1].split("?")[0] or "result.json"
        if not any(e.name == name for e in entries):
            entries.append(LockEntry(name, url, None))

    target = Path(cache_dir) / rid
    if not entries:
        cached = sorted(target.glob("*.json*")) if target.is_dir() else []
        if cached:
            return ArchiveHandle(rid, target, tuple(cached), {p.name: _sha256(p.read_bytes()) for p in cached})
        raise ConfigError(f"no source files listed for round {rid}; add entries to the lockfile or pass --url")

    opener = opener or _default_opener

    def one(entry: LockEntry) -> tuple[str, str]:
        path = target / entry.name
        if path.exists():
            data = path.read_bytes()
        else:
            try:
                data = opener(entry.url)
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                raise FetchError(entry.url, exc) from exc
            if entry.sha256 and _sha256(data) != entry.sha256:
                raise IntegrityError(f"{entry.url}: checksum {_sha256(data)} does not match lockfile {entry.sha256}")
            atomic_write_bytes(path, data)
        digest = _sha256(data)
        if entry.sha256 and digest != entry.sha256:
            raise IntegrityError(f"cached {path}: checksum {digest} does not match lockfile {entry.sha256}")
        return entry.name, digest

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, entries))
    files = tuple(sorted(target / name for name, _ in results))
    return ArchiveHandle(rid, target, files, dict(results))
