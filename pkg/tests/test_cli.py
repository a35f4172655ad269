import json
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pandas as pd
import pytest

from crossnet.cli import ABLATIONS, _load_config, build_parser, main
from crossnet.config import RunConfig
from crossnet.errors import ConfigError
from crossnet.graph import read_edges
from crossnet.relation import ClassificationCache, response_json

SPEC = {"n_stocks": 30, "n_days": 400, "n_clusters": 5, "embed_dim": 8, "seed": 11}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def stats(stdout: str) -> dict:
    lines = dict(line.split(": ", 1) for line in stdout.strip().splitlines())
    return {k: (int(v) if v.isdigit() else v) for k, v in lines.items()}


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", str(root / "spec.json"), str(root / "data")]) == 0
    return root


@pytest.fixture
def config(workspace, tmp_path):
    """Run config over the shared dataset with a per-test cache and output dir."""
    cfg = {
        "data": {
            "returns": str(workspace / "data/returns.csv"),
            "membership": str(workspace / "data/membership.csv"),
            "embeddings": str(workspace / "data/embeddings"),
            "filings": str(workspace / "data/filings"),
            "sic": str(workspace / "data/sic.csv"),
            "names": str(workspace / "data/names.csv"),
        },
        "backtest": {"K": 3, "train_len": 120, "test_len": 40},
        "classifier": {"kind": "mock", "fixture": str(workspace / "data/truth.csv"), "backoff": 0},
        "cache": "cache.jsonl",
        "output": "results",
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSynth:
    def test_writes_manifest(self, workspace, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", workspace / "spec.json", tmp_path / "d")
        assert code == 0 and "seed 11" in out
        manifest = json.loads((tmp_path / "d/manifest.json").read_text())
        assert manifest["spec"]["n_stocks"] == 30

    def test_byte_identical(self, workspace, capsys, tmp_path):
        run(capsys, "synth", workspace / "spec.json", tmp_path / "d")
        files = sorted(p.relative_to(workspace / "data") for p in (workspace / "data").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "d" / f).read_bytes() == (workspace / "data" / f).read_bytes()

    def test_unwritable_target(self, workspace, capsys, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = run(capsys, "synth", workspace / "spec.json", blocker / "sub")
        assert code == 2 and "error" in err

    def test_bad_spec(self, capsys, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"kappa": 2}))
        assert run(capsys, "synth", tmp_path / "s.json", tmp_path / "d")[0] == 2
        assert not (tmp_path / "d").exists()


class TestConfigHandling:
    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run(capsys, "ingest-check", "-c", tmp_path / "nope.json")
        assert code == 2 and "no such config file" in err

    def test_unknown_key(self, capsys, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"backtest": {"KK": 3}}))
        code, _, err = run(capsys, "ingest-check", "-c", tmp_path / "c.json")
        assert code == 2 and "backtest.KK" in err

    def test_precedence(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"backtest": {"seed": 1, "K": 7}}))
        args = build_parser().parse_args(["backtest", "-c", str(tmp_path / "c.json"), "--set", "backtest.seed=2", "--seed", "3"])
        cfg = _load_config(args)
        assert cfg.raw["backtest"]["seed"] == 3 and cfg.raw["backtest"]["K"] == 7
        args = build_parser().parse_args(["backtest", "-c", str(tmp_path / "c.json"), "--set", "backtest.seed=2"])
        assert _load_config(args).raw["backtest"]["seed"] == 2
        assert RunConfig.load(None).raw["backtest"]["seed"] == 0

    def test_relative_paths_follow_config_file(self, tmp_path):
        (tmp_path / "c.json").write_text("{}")
        cfg = RunConfig.load(tmp_path / "c.json")
        assert cfg.path("data", "returns") == (tmp_path / "returns.csv").resolve()

    @pytest.mark.parametrize(
        "override",
        ["classifier.retries=4", "classifier.kind=smoke", "workers=0", "backtest.groups=1", "snippet_budgets.segments=0"],
    )
    def test_invalid_values(self, override):
        with pytest.raises(ConfigError):
            RunConfig.load(None, [override])


class TestIngestAndGraph:
    def test_ingest_check(self, config, capsys):
        code, out, _ = run(capsys, "ingest-check", "-c", config)
        assert code == 0 and "windows: 7" in out

    def test_build_graph(self, config, capsys, tmp_path):
        code, _, _ = run(capsys, "build-graph", "-c", config, "--window", 1, "--edges-out", tmp_path / "e.csv")
        assert code == 0
        g = read_edges(tmp_path / "e.csv")
        assert all(d >= 3 for d in g.degree().values())

    def test_window_error_exit(self, config, capsys):
        code, _, err = run(capsys, "backtest", "-c", config, "--set", "backtest.K=40", "--no-filter")
        assert code == 1 and "window 0" in err


class TestClassify:
    def test_warm_cache_and_histogram(self, config, workspace, capsys, tmp_path):
        run(capsys, "build-graph", "-c", config, "--edges-out", tmp_path / "e.csv")
        year = pd.Timestamp("2011-01-03").year - 1
        code, out, _ = run(capsys, "classify", "-c", config, "--edges", tmp_path / "e.csv", "--year", year)
        first = stats(out)
        assert code == 0 and first["live calls"] == first["edges"] > 0
        truth = pd.read_csv(workspace / "data/truth.csv")
        labels = {(r.stock_i, r.stock_j): r.label for r in truth.itertuples()}
        expected = Counter(labels.get(e, "unrelated") for e in read_edges(tmp_path / "e.csv").edges)
        got = dict(kv.split("=") for kv in first["labels"].split(", "))
        assert {k: int(v) for k, v in got.items() if int(v)} == dict(expected)

        code, out, _ = run(capsys, "classify", "-c", config, "--edges", tmp_path / "e.csv", "--year", year)
        second = stats(out)
        assert second["live calls"] == 0 and second["cache hits"] == first["edges"]

    def test_windows_union(self, config, capsys):
        code, out, _ = run(capsys, "classify", "-c", config)
        assert code == 0 and stats(out)["warnings"] == 0

    def test_budget_exit(self, config, capsys, tmp_path):
        code, _, err = run(capsys, "classify", "-c", config, "--set", "classifier.call_budget=5")
        assert code == 3 and "budget" in err
        assert len(ClassificationCache(tmp_path / "cache.jsonl")) == 5

    def test_unreachable_endpoint_falls_back(self, config, capsys, tmp_path):
        run(capsys, "build-graph", "-c", config, "--edges-out", tmp_path / "e.csv")
        n = len(read_edges(tmp_path / "e.csv").edges)
        code, out, _ = run(
            capsys, "classify", "-c", config, "--edges", tmp_path / "e.csv", "--year", 2010,
            "--set", "classifier.kind=http", "--set", "classifier.url=http://127.0.0.1:9/none",
            "--set", "classifier.api_key_env=null", "--set", "classifier.retries=0", "--set", "classifier.timeout=2",
        )
        s = stats(out)
        assert code == 0 and s["warnings"] == n and s["labels"].endswith(f"unrelated={n}")
        assert len(ClassificationCache(tmp_path / "cache.jsonl")) == 0

    def test_missing_api_key_is_config_error(self, config, capsys, monkeypatch):
        monkeypatch.delenv("CROSSNET_TEST_KEY", raising=False)
        code, _, err = run(
            capsys, "classify", "-c", config, "--set", "classifier.kind=http",
            "--set", "classifier.api_key_env=CROSSNET_TEST_KEY",
        )
        assert code == 2 and "CROSSNET_TEST_KEY" in err


class _FakeChat(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.seen.append((self.headers.get("Authorization"), body["temperature"], body["model"]))
        payload = {"choices": [{"message": {"content": "Sure:\n" + response_json("peer", "x", "y")}}]}
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def fake_endpoint():
    server = HTTPServer(("127.0.0.1", 0), _FakeChat)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _FakeChat.seen = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_http_client_against_fake_endpoint(config, capsys, tmp_path, monkeypatch, fake_endpoint):
    monkeypatch.setenv("CROSSNET_TEST_KEY", "sk-test")
    run(capsys, "build-graph", "-c", config, "--edges-out", tmp_path / "e.csv")
    code, out, _ = run(
        capsys, "classify", "-c", config, "--edges", tmp_path / "e.csv", "--year", 2010,
        "--set", "classifier.kind=http", "--set", f"classifier.url={fake_endpoint}",
        "--set", "classifier.api_key_env=CROSSNET_TEST_KEY", "--set", "classifier.model=test-model",
    )
    s = stats(out)
    assert code == 0 and s["warnings"] == 0 and f"peer={s['edges']}," in s["labels"]
    assert set(_FakeChat.seen) == {("Bearer sk-test", 0, "test-model")}


class TestBacktest:
    def test_smoke_and_report(self, config, capsys, tmp_path):
        code, out, _ = run(capsys, "backtest", "-c", config, "--signals")
        assert code == 0 and "sharpe" in out
        res = tmp_path / "results"
        summary = json.loads((res / "summary.json").read_text())
        assert summary["config"]["backtest"]["K"] == 3
        assert len(pd.read_csv(res / "ls_returns.csv")) == 7 * 40
        assert len(list((res / "signals").iterdir())) == 7
        assert not [p for p in tmp_path.iterdir() if ".tmp-" in p.name]

        code, out, _ = run(capsys, "report", res)
        assert code == 0
        assert json.loads(out)["metrics"]["sharpe"] == pytest.approx(summary["metrics"]["sharpe"], rel=1e-12)

    def test_report_with_factors(self, config, capsys, tmp_path):
        run(capsys, "backtest", "-c", config, "--no-filter")
        ls = pd.read_csv(tmp_path / "results/ls_returns.csv")
        factors = pd.DataFrame({"date": ls["date"], "mkt": ls["r_ls"] * 0.5 + 0.001 * (ls.index % 7)})
        factors.to_csv(tmp_path / "f.csv", index=False)
        code, out, _ = run(capsys, "report", tmp_path / "results", "--factors", tmp_path / "f.csv", "--lags", 3)
        assert code == 0
        assert json.loads(out)["factor_regression"]["n_obs"] == len(ls)

    def test_random_mode_deterministic(self, config, capsys, tmp_path):
        def ls(seed, name):
            run(capsys, "backtest", "-c", config, "--graph-mode", "random", "--seed", seed, "--out", tmp_path / name)
            return (tmp_path / name / "ls_returns.csv").read_bytes()

        assert ls(4, "a") == ls(4, "b")
        assert ls(4, "a") != ls(5, "c")

    def test_ablations(self, config, capsys, tmp_path):
        code, out, _ = run(capsys, "backtest", "-c", config, "--ablations")
        assert code == 0
        rows = json.loads((tmp_path / "results/ablations.json").read_text())
        assert [r["name"] for r in rows] == [name for name, _ in ABLATIONS]
        for name, over in ABLATIONS:
            echoed = json.loads((tmp_path / "results" / name / "summary.json").read_text())["config"]["backtest"]
            assert all(echoed[k] == v for k, v in over.items())

    def test_budget_exit_leaves_no_results(self, config, capsys, tmp_path):
        code, _, _ = run(capsys, "backtest", "-c", config, "--set", "classifier.call_budget=3")
        assert code == 3
        assert not (tmp_path / "results").exists()

    def test_rerun_replaces_results(self, config, capsys, tmp_path):
        run(capsys, "backtest", "-c", config, "--no-filter")
        (tmp_path / "results" / "stale.txt").write_text("x")
        run(capsys, "backtest", "-c", config, "--no-filter")
        assert not (tmp_path / "results" / "stale.txt").exists()
        assert Path(tmp_path / "results" / "summary.json").exists()
