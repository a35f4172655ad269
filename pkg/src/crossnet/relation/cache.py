"""Append-only JSONL cache of edge classifications."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import threading
from pathlib import Path

from ..errors import LoadError


def cache_key(pair: tuple[str, str], year: int, template_version: str) -> str:
    a, b = sorted(pair)
    blob = json.dumps([a, b, int(year), template_version], separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ClassificationCache:
    """Classification records keyed by ``(sorted pair, vintage year, template version)``.

    With ``path=None`` the cache lives in memory only. Records are appended
    one per line; on reload the first record for a key wins, so replaying
    a file is idempotent.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for n, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        raise LoadError(f"{self.path}:{n}: malformed cache record") from None
                    self._records.setdefault(rec["key"], rec)

    def __len__(self) -> int:
        return len(self._records)

    def get(self, pair, year: int, template_version: str) -> dict | None:
        return self._records.get(cache_key(pair, year, template_version))

    def put(self, pair, year: int, template_version: str, label: str, evidence_a: str, evidence_b: str) -> bool:
        """Store one record; returns False if the key was already present."""
        key = cache_key(pair, year, template_version)
        rec = {
            "key": key,
            "pair": list(pair),
            "year": int(year),
            "template_version": template_version,
            "label": label,
            "evidence_a": evidence_a,
            "evidence_b": evidence_b,
            "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        }
        with self._lock:
            if key in self._records:
                return False
            self._records[key] = rec
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return True
