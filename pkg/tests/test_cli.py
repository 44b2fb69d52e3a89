import csv
import json

import numpy as np
import pytest

from unstart.cli import main

SMALL = ["--set", "train.run.total_steps=150", "--set", "train.run.start_steps=60",
         "--set", "train.surrogate.n_sensors=15", "--set", "train.surrogate.episode_steps=20",
         "--set", "train.td3.batch_size=16", "--set", "train.sac.batch_size=16"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _manifest(d):
    return json.loads((d / "manifest.json").read_text())


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    rc = main(["train", "--toy-env", "--seed", "3", "--out-dir", str(out), *SMALL])
    assert rc == 0
    return out


def test_train_outputs(trained):
    man = _manifest(trained)
    assert man["status"] == "ok" and man["seed"] == 3
    assert (trained / "checkpoints" / "final.bin").exists()
    log = _rows(trained / "training_log.csv")
    summary = json.loads((trained / "summary.json").read_text())
    assert len(log) - 1 == summary["updates"] > 0
    assert "normalized_score" in summary


def test_train_is_deterministic(trained, tmp_path):
    rc = main(["train", "--toy-env", "--seed", "3", "--out-dir", str(tmp_path), *SMALL])
    assert rc == 0
    assert _rows(tmp_path / "training_log.csv") == _rows(trained / "training_log.csv")


def test_infer_writes_episode(trained, tmp_path):
    ck = trained / "checkpoints" / "final.bin"
    rc = main(["infer", "--toy-env", "--checkpoint", str(ck), "--out-dir", str(tmp_path),
               "--noise-pct", "5", "--tr", "34", *SMALL])
    assert rc == 0
    rows = _rows(tmp_path / "action_reward.csv")
    assert rows[0] == ["t_s", "lambda_b", "lambda_s1", "lambda_s2", "beta_rad", "reward"]
    assert len(rows) == 21
    assert _manifest(tmp_path)["checkpoint_kind"] == "td3"


def test_infer_rejects_other_sensor_count(trained, tmp_path):
    ck = trained / "checkpoints" / "final.bin"
    rc = main(["infer", "--toy-env", "--checkpoint", str(ck), "--out-dir", str(tmp_path),
               *SMALL, "--set", "train.surrogate.n_sensors=100"])
    assert rc == 4
    man = _manifest(tmp_path)
    assert man["status"] == "incompatible" and "15" in man["failure"]
    assert not (tmp_path / "episode.csv").exists()


def test_zero_length_episode_is_header_only(trained, tmp_path):
    ck = trained / "checkpoints" / "final.bin"
    rc = main(["infer", "--toy-env", "--checkpoint", str(ck), "--out-dir", str(tmp_path),
               *SMALL, "--set", "train.surrogate.episode_steps=0"])
    assert rc == 0
    assert len(_rows(tmp_path / "episode.csv")) == 1
    assert len(_rows(tmp_path / "action_reward.csv")) == 1


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("case:\n  bogus: 1\n")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path / "a")]) == 2
    assert main(["train", "--out-dir", str(tmp_path / "b")]) == 2  # CFD training without baseline
    assert _manifest(tmp_path / "b")["status"] == "config_error"
    assert main(["infer", "--toy-env", "--out-dir", str(tmp_path / "c")]) == 2  # no checkpoint
    assert main(["simulate", "--set", "case.geometry.throttle_ratio=150",
                 "--out-dir", str(tmp_path / "d")]) == 2


def test_sensors_command(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 4)) @ rng.standard_normal((4, 40))
    snap = tmp_path / "snap.csv"
    with open(snap, "w", newline="") as fh:
        csv.writer(fh).writerows(X.tolist())
    rc = main(["sensors", "--snapshots", str(snap), "--r", "2,4", "--out-dir", str(tmp_path / "o")])
    assert rc == 0
    for r in (2, 4):
        doc = json.loads((tmp_path / "o" / f"sensors_r{r:03d}.json").read_text())
        assert len(doc["indices"]) == r
    assert len(_rows(tmp_path / "o" / "sensors_summary.csv")) == 3


def test_sensors_bad_csv_names_line(tmp_path, capsys):
    snap = tmp_path / "snap.csv"
    snap.write_text("1,2,3\n4,5,6\n7,x,9\n")
    rc = main(["sensors", "--snapshots", str(snap), "--r", "1", "--out-dir", str(tmp_path / "o")])
    assert rc == 2
    assert "snap.csv:3" in capsys.readouterr().err
