import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from liberate.cli import main, pow_bench
from liberate.config import ConfigError, ExperimentConfig, parse_override
from liberate.ledger import RecordType, load_chain

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "u10_i40.toml"
FAST = ["--set", "hyper.iterations=5", "--set", "hyper.l=10", "--set", "ledger.difficulty=1"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_lists_flags():
    proc = subprocess.run([sys.executable, "-m", "liberate", "train", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for flag in ("--config", "--set", "--out", "--seed", "--json"):
        assert flag in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "liberate", "pow-bench", "--help"], capture_output=True, text=True)
    assert "--difficulty" in proc.stdout and "--blocks" in proc.stdout


def test_train_smoke(tmp_path, capsys):
    code, out, _ = run(["train", "--config", str(CONFIG), "--set", "privacy.enabled=false", *FAST, "--out", str(tmp_path)], capsys)
    assert code == 0
    for name in ("metrics.csv", "ledger.tsv", "summary.json"):
        assert str(tmp_path / name) in out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["final_test_rmse"] > 0 and 0 <= summary["final_test_ndcg"] <= 1
    assert summary["epsilon_total"] is None
    assert summary["rounds"] == 5


def test_no_sharing_ledger(tmp_path, capsys):
    code, _, _ = run(["train", "--config", str(CONFIG), "--set", "share.fraction=0.0", *FAST, "--out", str(tmp_path)], capsys)
    assert code == 0
    chain = load_chain(tmp_path / "ledger.tsv")
    kinds = [b.record_type for b in chain]
    assert kinds == [RecordType.GENESIS] + [RecordType.MODEL_UPDATE] * 5


def test_reproducible_artifacts(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(["train", "--config", str(CONFIG), *FAST, "--seed", "3", "--out", str(tmp_path / d)], capsys)[0] == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "ledger.tsv").read_bytes() == (b / "ledger.tsv").read_bytes()
    strip = lambda p: [line.split(",")[:6] for line in p.read_text().splitlines()]  # wall-clock columns excluded
    assert strip(a / "metrics.csv") == strip(b / "metrics.csv")


def test_env_out_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LIBERATE_OUT", str(tmp_path / "env"))
    assert run(["train", "--config", str(CONFIG), *FAST], capsys)[0] == 0
    assert (tmp_path / "env" / "ledger.tsv").exists()


def test_verify_trace_anomalies(tmp_path, capsys):
    assert run(["train", "--config", str(CONFIG), *FAST, "--out", str(tmp_path)], capsys)[0] == 0
    ledger = str(tmp_path / "ledger.tsv")
    code, out, _ = run(["verify", "--ledger", ledger, "--json"], capsys)
    assert code == 0 and json.loads(out)["ok"]
    code, out, _ = run(["trace", "--ledger", ledger, "--user", "0", "--json"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["model_update_rounds"] == [1, 2, 3, 4, 5]
    code, out, _ = run(["trace", "--ledger", ledger, "--user", "999"], capsys)
    assert code == 0 and "shares in (0)" in out and "shares out (0)" in out
    code, out, _ = run(["anomalies", "--ledger", ledger, "--z", "1.5", "--json"], capsys)
    assert code == 0 and isinstance(json.loads(out), list)


def test_tampered_ledger_exit_4(tmp_path, capsys):
    assert run(["train", "--config", str(CONFIG), *FAST, "--out", str(tmp_path)], capsys)[0] == 0
    path = tmp_path / "ledger.tsv"
    lines = path.read_text().splitlines()
    fields = lines[2].split("\t")
    fields[3] = fields[3][:-2] + ("00" if fields[3][-2:] != "00" else "11")
    lines[2] = "\t".join(fields)
    path.write_text("\n".join(lines) + "\n")
    code, _, err = run(["trace", "--ledger", str(path), "--user", "0"], capsys)
    assert code == 4 and "block 2" in err
    code, out, _ = run(["verify", "--ledger", str(path)], capsys)
    assert code == 4 and "block 2" in out


def test_unreadable_ledger_exit_4(tmp_path, capsys):
    (tmp_path / "bad.tsv").write_text("not a ledger\n")
    assert run(["verify", "--ledger", str(tmp_path / "bad.tsv")], capsys)[0] == 4


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(["train", "--set", "hyper.gamma=oops", "--out", str(tmp_path)], capsys)[0] == 2
    assert run(["train", "--set", "hyper.nope=1", "--out", str(tmp_path)], capsys)[0] == 2
    assert run(["train", "--out", str(tmp_path)], capsys)[0] == 2  # no data path
    bad = tmp_path / "bad.toml"
    bad.write_text("[extra]\nx = 1\n")
    code, _, err = run(["train", "--config", str(bad), "--out", str(tmp_path)], capsys)
    assert code == 2 and "unknown section" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_abort_exit_3(tmp_path, capsys):
    code, _, err = run(["train", "--config", str(CONFIG), "--set", "hyper.gamma=5.0", "--set", "privacy.enabled=false",
                        "--set", "hyper.iterations=40", "--set", "ledger.difficulty=0", "--out", str(tmp_path)], capsys)
    assert code == 3 and "round" in err


def test_sweep_table(tmp_path, capsys):
    code, out, _ = run(["sweep", "--config", str(CONFIG), *FAST, "--param", "share.fraction", "--values", "0.1,0.3",
                        "--seeds", "2", "--out", str(tmp_path)], capsys)
    assert code == 0
    table = (tmp_path / "sweep_table.csv").read_text().splitlines()
    assert table[0].startswith("param,value,runs,test_rmse_mean")
    assert len(table) == 3
    assert len((tmp_path / "sweep_runs.csv").read_text().splitlines()) == 5


def test_pow_bench(capsys):
    rows = pow_bench([0, 1], 20)
    assert rows[0]["mean_attempts"] == 1.0
    code, out, _ = run(["pow-bench", "--difficulty", "0-1", "--blocks", "5", "--json"], capsys)
    assert code == 0 and [r["difficulty"] for r in json.loads(out)] == [0, 1]
    assert run(["pow-bench", "--difficulty", "9", "--blocks", "1"], capsys)[0] == 2


def test_config_parsing():
    assert parse_override("hyper.gamma=0.01") == ("hyper", "gamma", 0.01)
    assert parse_override("run.mode=centralized") == ("run", "mode", "centralized")
    assert parse_override("privacy.enabled=false")[2] is False
    with pytest.raises(ConfigError):
        parse_override("gamma")
    cfg = ExperimentConfig.load(CONFIG, ["run.seed=5", "hyper.gamma=1"])
    assert cfg["hyper"]["gamma"] == 1.0
    rc = cfg.run_config()
    assert rc.privacy.seed == cfg.seed_for("ldp") != cfg.seed_for("share") == rc.share_plan.seed
    with pytest.raises(ConfigError):
        ExperimentConfig.load(None, ["ledger.clock=lunar"])
    with pytest.raises(ConfigError):
        ExperimentConfig.load(None, ["share.fraction=2.0"])
