"""End-to-end runs of the command line through main() in process."""

import csv
import json
import os

import numpy as np
import pytest

from iqpforge.cli import (EXIT_CAPACITY, EXIT_CONFIG, EXIT_DIVERGENCE,
                          EXIT_OK, main, resolve_workers)
from iqpforge.training import Checkpoint, TrainConfig, load_checkpoint, \
    model_circuit, save_checkpoint


def _write_config(path, **overrides):
    doc = {"schema_version": 1, "n": 4, "steps": 3, "seed": 7,
           "backend": "oracle"}
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_writes_checkpoint_log_and_manifest(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    code = main(["train", "--config", str(cfg), "--out-dir", str(out)])
    assert code == EXIT_OK

    ckpt = load_checkpoint(out / "checkpoint.json")
    assert ckpt.step == 3
    assert len(ckpt.loss_history) == 4

    rows = _read_csv(out / "loss.csv")
    assert rows[0] == ["step", "loss", "grad_norm", "wall_ms"]
    assert len(rows) == 4
    assert float(rows[1][1]) == pytest.approx(ckpt.loss_history[0])

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "train"
    assert manifest["config_digest"] == ckpt.config.digest()
    assert manifest["seed"] == 7
    assert str(out / "checkpoint.json") in manifest["outputs"]


def test_train_is_deterministic(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["train", "--config", str(cfg),
                     "--out-dir", str(out)]) == EXIT_OK
        outs.append((out / "checkpoint.json").read_text())
    assert outs[0] == outs[1]


def test_train_seed_flag_overrides_config(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--seed", "99",
                 "--out-dir", str(out)]) == EXIT_OK
    assert load_checkpoint(out / "checkpoint.json").config.seed == 99


def test_train_rejects_unknown_field(tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json", bogus=1)
    out = tmp_path / "run"
    code = main(["train", "--config", str(cfg), "--out-dir", str(out)])
    assert code == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    assert (out / "manifest.json").exists()


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json"),
                 "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_bad_subcommand_writes_fallback_manifest(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["frobnicate"]) == EXIT_CONFIG
    capsys.readouterr()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "unknown"


def test_divergence_exit_code_and_partial_log(tmp_path, capsys):
    # a resume checkpoint with a tiny recorded initial loss trips the guard
    cfg_path = _write_config(tmp_path / "cfg.json", steps=2, seed=29)
    doc = json.loads(cfg_path.read_text())
    doc.pop("schema_version")
    config = TrainConfig(**doc)
    theta = np.zeros(model_circuit(config).param_count)
    ckpt = Checkpoint(theta=theta, step=1, loss_history=[1e-12, 1e-12],
                      config=config, adam_m=np.zeros_like(theta),
                      adam_v=np.zeros_like(theta))
    save_checkpoint(tmp_path / "resume.json", ckpt)
    out = tmp_path / "run"
    code = main(["train", "--config", str(cfg_path),
                 "--resume", str(tmp_path / "resume.json"),
                 "--out-dir", str(out)])
    assert code == EXIT_DIVERGENCE
    assert "diverged" in capsys.readouterr().err
    assert (out / "loss.csv").exists()
    assert not (out / "checkpoint.json").exists()
    assert (out / "manifest.json").exists()


def test_sample_counts_csv(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg),
                 "--out-dir", str(out)]) == EXIT_OK
    assert main(["sample", "--checkpoint", str(out / "checkpoint.json"),
                 "--shots", "5000", "--out-dir", str(out)]) == EXIT_OK
    rows = _read_csv(out / "counts.csv")
    assert rows[0] == ["bitstring", "count", "frequency"]
    body = rows[1:]
    assert sum(int(r[1]) for r in body) == 5000
    assert all(len(r[0]) == 4 for r in body)
    assert body == sorted(body, key=lambda r: r[0])
    for r in body:
        assert float(r[2]) == pytest.approx(int(r[1]) / 5000)


def test_sample_zero_shots(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg),
                 "--out-dir", str(out)]) == EXIT_OK
    assert main(["sample", "--checkpoint", str(out / "checkpoint.json"),
                 "--shots", "0", "--out-dir", str(out)]) == EXIT_OK
    assert _read_csv(out / "counts.csv") == [["bitstring", "count",
                                              "frequency"]]


def test_sample_capacity_exit_code(tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json", n=6, oracle_cap=4)
    out = tmp_path / "run"
    # training itself would hit the cap, so build the checkpoint directly
    doc = json.loads(cfg.read_text())
    doc.pop("schema_version")
    config = TrainConfig(**doc)
    theta = np.zeros(model_circuit(config).param_count)
    ckpt = Checkpoint(theta=theta, step=0, loss_history=[0.0], config=config,
                      adam_m=np.zeros_like(theta), adam_v=np.zeros_like(theta))
    save_checkpoint(tmp_path / "ck.json", ckpt)
    code = main(["sample", "--checkpoint", str(tmp_path / "ck.json"),
                 "--out-dir", str(out)])
    assert code == EXIT_CAPACITY
    assert "capacity" in capsys.readouterr().err


def test_oracle_family_table(tmp_path):
    out = tmp_path / "run"
    assert main(["oracle", "--family", "iqp", "--n", "5", "--seed", "3",
                 "--out-dir", str(out)]) == EXIT_OK
    from iqpforge.statevector import read_probability_table
    table = read_probability_table(out / "table.bin")
    assert table.n == 5
    assert table.probs.sum() == pytest.approx(1.0)


def test_oracle_requires_source(tmp_path):
    assert main(["oracle", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_diagnose_with_config(tmp_path):
    cfg = tmp_path / "diag.json"
    cfg.write_text(json.dumps({"families": ["iqp"], "ns": [6], "trials": 2,
                               "seed": 5, "xeb_shots": 50}))
    out = tmp_path / "run"
    assert main(["diagnose", "--config", str(cfg), "--workers", "1",
                 "--out-dir", str(out)]) == EXIT_OK
    rows = _read_csv(out / "diagnostics.csv")
    assert rows[0] == ["family", "n", "trial", "anti_concentration", "tv",
                       "delta_h", "delta_h_stderr"]
    assert len(rows) == 3
    from iqpforge.diagnostics import DEFAULT_EPS_GRID
    curve = _read_csv(out / "tsparse.csv")
    assert curve[0] == ["family", "n", "trial", "inv_eps", "f"]
    assert len(curve) == 1 + 2 * len(DEFAULT_EPS_GRID)


def test_diagnose_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "diag.json"
    cfg.write_text(json.dumps({"familes": ["iqp"]}))
    assert main(["diagnose", "--config", str(cfg),
                 "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_complexity_sweep_csv(tmp_path):
    cfg = tmp_path / "cx.json"
    cfg.write_text(json.dumps({"families": ["product", "iqp"], "ns": [4, 8]}))
    out = tmp_path / "run"
    assert main(["complexity", "--config", str(cfg),
                 "--out-dir", str(out)]) == EXIT_OK
    rows = _read_csv(out / "complexity.csv")
    assert rows[0] == ["family", "n", "max_rank", "est_log2_cost"]
    assert len(rows) == 5


def test_resolve_workers_priority(monkeypatch):
    class Args:
        workers = None

    monkeypatch.delenv("IQPFORGE_WORKERS", raising=False)
    assert resolve_workers(Args()) == (os.cpu_count() or 1)
    monkeypatch.setenv("IQPFORGE_WORKERS", "3")
    assert resolve_workers(Args()) == 3
    Args.workers = 2
    assert resolve_workers(Args()) == 2
