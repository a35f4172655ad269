"""Classifier clients.

A client is any callable taking a :class:`ClassificationRequest` and returning
the raw response text. Only ``prompt`` goes over the wire; ``pair`` and
``year`` exist so that test doubles can answer without an LLM.
"""

from __future__ import annotations

import csv
import json
import os
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from ..errors import ConfigError, LoadError
from .prompt import LABELS


@dataclass(frozen=True)
class ClassificationRequest:
    prompt: str
    pair: tuple[str, str]
    year: int


def response_json(label: str, evidence_a: str = "", evidence_b: str = "") -> str:
    return json.dumps({"label": label, "evidence_span_A": evidence_a, "evidence_span_B": evidence_b})


class MockClient:
    """Deterministic fixture client: answers from a ``pair -> label`` map.

    Pairs absent from the map get ``default``. Every call is counted.
    """

    def __init__(self, labels: Mapping[tuple[str, str], str], default: str = "unrelated"):
        self.labels = {tuple(sorted(k)): v for k, v in labels.items()}
        bad = {v for v in self.labels.values() if v not in LABELS} | ({default} - set(LABELS))
        if bad:
            raise ConfigError(f"fixture labels outside the taxonomy: {sorted(bad)}")
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_csv(cls, path: str | Path, default: str = "unrelated") -> MockClient:
        """Read a ``stock_i,stock_j,label`` fixture file."""
        path = Path(path)
        if not path.exists():
            raise LoadError(f"{path}: no such file")
        with open(path, newline="", encoding="utf-8") as fh:
            labels = {
                (row["stock_i"].strip(), row["stock_j"].strip()): row["label"].strip()
                for row in csv.DictReader(fh)
            }
        return cls(labels, default)

    def __call__(self, request: ClassificationRequest) -> str:
        with self._lock:
            self.calls += 1
        label = self.labels.get(tuple(sorted(request.pair)), self.default)
        if label == "unrelated":
            return response_json(label)
        return response_json(label, f"fixture evidence for {label} (A)", f"fixture evidence for {label} (B)")


class HttpClient:
    """OpenAI-compatible chat-completions client with temperature 0.

    The API key is read from the environment variable ``api_key_env`` at call
    time and never stored.
    """

    def __init__(
        self,
        url: str,
        model: str,
        api_key_env: str | None = None,
        timeout: float = 60.0,
    ):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, request: ClassificationRequest) -> str:
        with self._lock:
            self.calls += 1
        body = json.dumps(
            {
                "model": self.model,
                "temperature": 0,
                "messages": [{"role": "user", "content": request.prompt}],
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ConfigError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ValueError("unexpected chat-completions payload") from None
