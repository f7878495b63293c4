import json

import numpy as np
import pytest

from ligp.cli import (EXIT_INPUT, EXIT_OK, digest, main, read_config, replay, resolve,
                      write_json)
from ligp.design import RawDesign, write_csv
from ligp.errors import InputError


def _write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def toy(tmp_path):
    train = _write(tmp_path / "train.csv", "x1,y\n0.0,1.0\n0.5,2.0\n1.0,0.5\n")
    test = _write(tmp_path / "test.csv", "x1\n0.25\n")
    return tmp_path, train, test


def test_read_config_and_resolve(tmp_path):
    cfg = _write(tmp_path / "run.cfg", "# comment\nnbar = 30\nm = 5  # inline\n"
                 "g_bounds = 1e-6, 1\ntheta = none\n")
    vals = read_config(cfg)
    assert vals == {"nbar": "30", "m": "5", "g_bounds": "1e-6, 1", "theta": "none"}
    out = resolve("predict", vals, {"seed": 4})
    assert out["nbar"] == 30 and out["m"] == 5 and out["theta"] is None
    assert out["g_bounds"] == [1e-6, 1.0] and out["seed"] == 4
    with pytest.raises(InputError, match="unknown configuration key"):
        resolve("predict", {"nbr": "3"}, {})
    with pytest.raises(InputError, match="'nbar'"):
        resolve("predict", {"nbar": "many"}, {})
    _write(tmp_path / "bad.cfg", "nbar 30\n")
    with pytest.raises(InputError, match=":1"):
        read_config(tmp_path / "bad.cfg")


def test_toy_predict(toy, capsys):
    out, train, test = toy
    code = main(["predict", "--train", train, "--test", test, "--out-dir", str(out / "run"),
                 "--nbar", "3", "--m", "2", "--workers", "1"])
    assert code in (EXIT_OK, 3)
    rows = (out / "run" / "predictions.csv").read_text().strip().splitlines()
    assert len(rows) == 2
    manifest = json.loads((out / "run" / "manifest.json").read_text())
    assert manifest["command"] == "predict" and "predictions.csv" in manifest["outputs"]


def test_missing_y_column(tmp_path, capsys):
    train = _write(tmp_path / "train.csv", "x1,x2\n0,1\n")
    test = _write(tmp_path / "test.csv", "x1,x2\n0,1\n")
    code = main(["predict", "--train", train, "--test", test, "--out-dir", str(tmp_path)])
    assert code == EXIT_INPUT
    assert "missing column 'y'" in capsys.readouterr().err


def test_predict_replay_across_workers(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(300, 2))
    X = np.repeat(X, 2, axis=0)
    y = np.sin(4 * X[:, 0]) + rng.normal(scale=0.1, size=X.shape[0])
    train, test = tmp_path / "train.csv", tmp_path / "test.csv"
    write_csv(train, RawDesign(X, y))
    T = rng.uniform(size=(300, 2))
    write_csv(test, RawDesign(T, np.zeros(300)))
    run = tmp_path / "run"
    assert main(["predict", "--train", str(train), "--test", str(test), "--out-dir", str(run),
                 "--nbar", "20", "--m", "5", "--workers", "1", "--set", "chunk_size=64"]) == 0
    code, bad = replay(run / "manifest.json", tmp_path / "again", workers=3)
    assert code == EXIT_OK and bad == []
    assert digest(run / "predictions.csv") == digest(tmp_path / "again" / "predictions.csv")


def test_benchmark_smoke_and_repeatability(tmp_path):
    args = ["benchmark", "herbie", "--n-unique", "200", "--n-test", "200", "--seed", "3",
            "--workers", "1", "--nbar", "30", "--m", "6"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    m = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert {"rmse", "score", "wall_time"} <= set(m)
    for name in ("metrics.json", "predictions.csv", "design.csv", "plotdata.csv"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_price_dry_run_and_validation(tmp_path, capsys):
    assert main(["price", "--preset", "5d", "--dry-run", "--out-dir", str(tmp_path)]) == 0
    assert not (tmp_path / "pricing.json").exists()
    assert main(["price-maxcall", "--preset", "none", "--dry-run",
                 "--out-dir", str(tmp_path)]) == EXIT_INPUT
    assert "model parameters missing" in capsys.readouterr().err


def test_price_minimal_chain_and_replay(tmp_path):
    run = tmp_path / "run"
    code = main(["price", "--preset", "2d", "--K-steps", "2", "--n-paths", "2000",
                 "--set", "n_candidates=200", "--set", "a=5", "--set", "grid=11",
                 "--workers", "1", "--out-dir", str(run)])
    assert code == 0
    body = json.loads((run / "pricing.json").read_text())
    assert body["design_sizes"].keys() == {"1"}
    assert body["price"] >= body["european_price"] - 2 * body["european_stderr"]
    lines = (run / "boundary.csv").read_text().strip().splitlines()
    assert lines[0] == "step,x1,x2,timing_value" and len(lines) == 1 + 121
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["resolved_ligp"]["theta"] == 1.0
    code, bad = replay(run / "manifest.json", tmp_path / "again", workers=2)
    assert code == 0 and bad == []


def test_json_digest_ignores_timing(tmp_path):
    write_json(tmp_path / "a.json", {"rmse": 1.0, "wall_time": 3.0})
    write_json(tmp_path / "b.json", {"rmse": 1.0, "wall_time": 7.0})
    write_json(tmp_path / "c.json", {"rmse": 2.0, "wall_time": 3.0})
    assert digest(tmp_path / "a.json") == digest(tmp_path / "b.json")
    assert digest(tmp_path / "a.json") != digest(tmp_path / "c.json")


def test_selfcheck_command(capsys):
    assert main(["selfcheck", "--instances", "5"]) == 0
    assert "PASS predictive_mean" in capsys.readouterr().out
