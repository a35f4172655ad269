"""Run configuration: a JSON file with fixed sections and keys.

Schema (every key optional, defaults in ``DEFAULTS``)::

    {
      "data": {"returns", "membership", "embeddings", "filings", "sic", "names", "factors"},
      "backtest": {"K", "train_len", "test_len", "groups", "rebalance", "graph_mode",
                   "weighting", "relation_filter", "seed", "nw_lags"},
      "relation_weights": {label: weight, ...},
      "classifier": {"kind", "url", "model", "api_key_env", "timeout", "retries",
                     "backoff", "parallelism", "call_budget", "fixture"},
      "snippet_budgets": {"business_description", "segments", "competitors"},
      "cache": "cache/classifications.jsonl",
      "output": "results",
      "workers": 1
    }

Relative paths resolve against the config file's directory. Unknown keys are
rejected. Precedence: built-in defaults < config file < ``--set`` overrides <
dedicated command-line flags.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .backtest import BacktestConfig
from .errors import ConfigError
from .relation import DEFAULT_RELATION_WEIGHTS
from .relation.snippets import DEFAULT_BUDGETS

DEFAULTS: dict[str, Any] = {
    "data": {
        "returns": "returns.csv",
        "membership": "membership.csv",
        "embeddings": "embeddings",
        "filings": "filings",
        "sic": None,
        "names": None,
        "factors": None,
    },
    "backtest": {
        "K": 5,
        "train_len": 180,
        "test_len": 42,
        "groups": 5,
        "rebalance": "daily",
        "graph_mode": "semantic",
        "weighting": "softmax",
        "relation_filter": True,
        "seed": 0,
        "nw_lags": None,
    },
    "relation_weights": dict(DEFAULT_RELATION_WEIGHTS),
    "classifier": {
        "kind": "http",
        "url": "https://api.deepseek.com/chat/completions",
        "model": "deepseek-chat",
        "api_key_env": "CROSSNET_API_KEY",
        "timeout": 60.0,
        "retries": 3,
        "backoff": 0.5,
        "parallelism": 4,
        "call_budget": None,
        "fixture": None,
    },
    "snippet_budgets": dict(DEFAULT_BUDGETS),
    "cache": "cache/classifications.jsonl",
    "output": "results",
    "workers": 1,
}

PATH_KEYS = {("data", k) for k in DEFAULTS["data"]} | {("classifier", "fixture"), ("cache",), ("output",)}
CLASSIFIER_KINDS = ("http", "mock")


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path} must be an object")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``"backtest.K=10"`` -> ``(["backtest", "K"], 10)``; values are read as JSON, else as strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def _nest(path: list[str], value) -> dict:
    d: Any = value
    for part in reversed(path):
        d = {part: d}
    return d


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] = (), base_dir: Path | None = None) -> RunConfig:
        raw: dict = {}
        if path is not None:
            path = Path(path)
            try:
                with open(path, encoding="utf-8") as fh:
                    raw = json.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"{path}: no such config file") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
            if not isinstance(raw, dict):
                raise ConfigError(f"{path}: top level must be an object")
            base_dir = base_dir or path.parent
        merged = _merge(DEFAULTS, raw)
        for text in overrides:
            keys, value = parse_override(text)
            merged = _merge(merged, _nest(keys, value))
        cfg = cls(merged, (base_dir or Path.cwd()).resolve())
        cfg.validate()
        return cfg

    def set(self, dotted: str, value) -> None:
        self.raw = _merge(self.raw, _nest(dotted.split("."), value))
        self.validate()

    def validate(self) -> None:
        self.backtest_config()
        c = self.raw["classifier"]
        if c["kind"] not in CLASSIFIER_KINDS:
            raise ConfigError(f"classifier.kind must be one of {CLASSIFIER_KINDS}")
        if c["kind"] == "mock" and not c["fixture"]:
            raise ConfigError("classifier.kind 'mock' requires classifier.fixture")
        for key in ("retries", "parallelism"):
            if not isinstance(c[key], int) or c[key] < (0 if key == "retries" else 1):
                raise ConfigError(f"classifier.{key} has invalid value {c[key]!r}")
        if c["retries"] > 3:
            raise ConfigError("classifier.retries is capped at 3")
        if c["call_budget"] is not None and (not isinstance(c["call_budget"], int) or c["call_budget"] < 0):
            raise ConfigError("classifier.call_budget must be a non-negative integer or null")
        if not isinstance(self.raw["workers"], int) or self.raw["workers"] < 1:
            raise ConfigError("workers must be a positive integer")
        for k, v in self.raw["snippet_budgets"].items():
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"snippet_budgets.{k} must be a positive integer")

    def backtest_config(self) -> BacktestConfig:
        return BacktestConfig(**self.raw["backtest"], relation_weights=self.raw["relation_weights"])

    def path(self, *keys: str) -> Path | None:
        value = self.raw
        for k in keys:
            value = value[k]
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def effective(self) -> dict:
        """Fully resolved configuration with absolute paths, for echoing into outputs."""
        out = copy.deepcopy(self.raw)
        for keys in sorted(PATH_KEYS):
            p = self.path(*keys)
            target = out
            for k in keys[:-1]:
                target = target[k]
            target[keys[-1]] = str(p) if p is not None else None
        out["relation_weights"] = self.backtest_config().relation_weights
        return out
