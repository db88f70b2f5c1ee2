"""Command-line tests: every subcommand end to end on a small config,
exit codes on bad input, byte-stable outputs, and the selftest gate.
"""

import json
import os

import pytest

from topkqp import constraints, selftest
from topkqp.cli import main
from topkqp.config import config_hash
from topkqp.constraints import OrderMatrix

TINY = {
    "data": {"classes": 6, "samples": 300, "dims": 16, "sigma": 0.06},
    "model": {"hidden": [12], "feature_dim": 8},
    "train": {"epochs": 40},
    "attack": {"methods": ["cwk"], "k_values": [2], "budgets": ["1x6"],
               "init_sigma": 0.05},
    "eval": {"num_images": 4, "groups_per_image": 2},
}


def write_config(tmp_path, extra=None, name="config.json"):
    doc = json.loads(json.dumps(TINY))
    for key, table in (extra or {}).items():
        doc.setdefault(key, {})
        if isinstance(table, dict):
            doc[key].update(table)
        else:
            doc[key] = table
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_writes_dataset_and_counts(tmp_path, capsys):
    out = str(tmp_path / "data")
    rc = main(["gen-data", "--out", out, "--seed", "3", "--classes", "5",
               "--samples", "100", "--dims", "8"])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "per-class counts: 20 20 20 20 20" in stdout
    data = json.loads((tmp_path / "data" / "dataset.json").read_text())
    eff = json.loads((tmp_path / "data" / "effective_config.json").read_text())
    assert eff["data"]["classes"] == 5 and eff["data"]["samples"] == 100
    assert eff["data"]["dims"] == 8 and eff["seed"] == 3
    assert data["num_classes"] == 5


def test_gen_data_deterministic_across_out_dirs(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["gen-data", "--out", a, "--seed", "1"]) == 0
    assert main(["gen-data", "--out", b, "--seed", "1"]) == 0
    bytes_a = (tmp_path / "a" / "dataset.json").read_bytes()
    bytes_b = (tmp_path / "b" / "dataset.json").read_bytes()
    assert bytes_a == bytes_b


def test_gen_data_rejects_single_class(tmp_path, capsys):
    rc = main(["gen-data", "--out", str(tmp_path / "x"), "--classes", "1"])
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")


# ---------------------------------------------------------------------------
# train


def test_train_writes_reproducible_checkpoint(tmp_path, capsys):
    data_out = str(tmp_path / "data")
    assert main(["gen-data", "--out", data_out, "--seed", "2", "--classes", "6",
                 "--samples", "300", "--dims", "16"]) == 0
    cfg = write_config(tmp_path, {"data": {"path": os.path.join(data_out, "dataset.json")}})
    one, two = str(tmp_path / "m1"), str(tmp_path / "m2")
    assert main(["train", "--config", cfg, "--out", one, "--seed", "2"]) == 0
    assert "train accuracy" in capsys.readouterr().out
    assert main(["train", "--config", cfg, "--out", two, "--seed", "2"]) == 0
    assert (tmp_path / "m1" / "model.json").read_bytes() == \
           (tmp_path / "m2" / "model.json").read_bytes()


def test_train_missing_dataset_file(tmp_path, capsys):
    cfg = write_config(tmp_path, {"data": {"path": str(tmp_path / "nope.json")}})
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "m")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# attack


def test_attack_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "run")
    rc = main(["attack", "--config", cfg, "--out", out, "--seed", "1"])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "top-2 cwk 1x6: ASR" in stdout
    lines = (tmp_path / "run" / "report.csv").read_text().splitlines()
    assert len(lines) == 3  # stamp, header, one (method, K, budget) row
    assert lines[2].startswith("top-2,cwk,1x6,")
    doc = json.loads((tmp_path / "run" / "summary.json").read_text())
    eff = json.loads((tmp_path / "run" / "effective_config.json").read_text())
    assert doc["config_hash"] == config_hash(eff)
    assert lines[0] == f"# config_hash={doc['config_hash']} seed=1"
    assert len(doc["rows"]) == 1
    assert "jobs" not in doc["config"] and "out" not in doc["config"]


def test_attack_outputs_identical_across_jobs_and_out(tmp_path):
    cfg = write_config(tmp_path)
    runs = {}
    for name, jobs in (("r1", None), ("r2", None), ("r3", "2")):
        out = str(tmp_path / name)
        argv = ["attack", "--config", cfg, "--out", out, "--seed", "4"]
        if jobs is not None:
            argv += ["--jobs", jobs]
        assert main(argv) == 0
        runs[name] = ((tmp_path / name / "report.csv").read_bytes(),
                      (tmp_path / name / "summary.json").read_bytes())
    assert runs["r1"] == runs["r2"]
    assert runs["r1"] == runs["r3"]


def test_attack_traces_flag_writes_jsonl(tmp_path):
    cfg = write_config(tmp_path, {"attack": {"traces": True}})
    out = str(tmp_path / "run")
    assert main(["attack", "--config", cfg, "--out", out, "--seed", "1"]) == 0
    traces = sorted(os.listdir(tmp_path / "run" / "traces"))
    assert len(traces) == 8  # 4 images x 2 groups
    first = (tmp_path / "run" / "traces" / traces[0]).read_text().splitlines()
    assert len(first) == 6 and json.loads(first[0])["iteration"] == 0


def test_attack_validates_k_before_any_work(tmp_path, capsys):
    cfg = write_config(tmp_path, {"attack": {"k_values": [7]}})
    out = str(tmp_path / "run")
    rc = main(["attack", "--config", cfg, "--out", out])
    assert rc == 2
    assert "K=7" in capsys.readouterr().err
    assert not os.path.exists(out)  # rejected before creating anything


def test_attack_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"attack": {"stepsize": 0.1}}))
    rc = main(["attack", "--config", str(path), "--out", str(tmp_path / "run")])
    assert rc == 2
    assert "attack.stepsize" in capsys.readouterr().err


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, {"seed": 5})
    out = str(tmp_path / "data")
    assert main(["gen-data", "--config", cfg, "--out", out, "--seed", "9"]) == 0
    eff = json.loads((tmp_path / "data" / "effective_config.json").read_text())
    assert eff["seed"] == 9


# ---------------------------------------------------------------------------
# sweep


def test_sweep_writes_tradeoff_grid(tmp_path, capsys):
    cfg = write_config(tmp_path, {"sweep": {"method": "cwk", "k": 2, "budget": "3x5"}})
    out = str(tmp_path / "sweep")
    rc = main(["sweep", "--config", cfg, "--out", out, "--seed", "1"])
    assert rc == 0
    assert "weight 1:" in capsys.readouterr().out
    lines = (tmp_path / "sweep" / "tradeoff.csv").read_text().splitlines()
    assert len(lines) == 5  # stamp, header, three weights
    weights = [line.split(",")[3] for line in lines[2:]]
    assert weights == ["1.0", "10.0", "19.0"]
    doc = json.loads((tmp_path / "sweep" / "sweep_summary.json").read_text())
    assert len(doc["tradeoff"]) == 3 and doc["rows"] == []


def test_sweep_rejects_oversized_k(tmp_path, capsys):
    cfg = write_config(tmp_path, {"sweep": {"method": "cwk", "k": 7, "budget": "3x5"}})
    rc = main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")])
    assert rc == 2
    assert "K=7" in capsys.readouterr().err


def test_sweep_rejects_malformed_budget(tmp_path, capsys):
    cfg = write_config(tmp_path, {"sweep": {"method": "cwk", "k": 2, "budget": "0x5"}})
    rc = main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# report


def test_report_renders_figures_from_run_dir(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run = str(tmp_path / "run")
    assert main(["attack", "--config", cfg, "--out", run, "--seed", "1"]) == 0
    capsys.readouterr()
    assert main(["report", "--run", run]) == 0
    out = capsys.readouterr().out
    for fname in ("asr.png", "energy_l2.png"):
        path = tmp_path / "run" / fname
        assert path.exists() and path.stat().st_size > 0
        assert str(path) in out


def test_report_renders_tradeoff_to_separate_out(tmp_path):
    cfg = write_config(tmp_path, {"sweep": {"method": "cwk", "k": 2, "budget": "3x5"}})
    run = str(tmp_path / "sweep")
    assert main(["sweep", "--config", cfg, "--out", run, "--seed", "1"]) == 0
    figs = str(tmp_path / "figs")
    assert main(["report", "--run", run, "--out", figs]) == 0
    assert (tmp_path / "figs" / "tradeoff.png").stat().st_size > 0
    assert not (tmp_path / "sweep" / "tradeoff.png").exists()


def test_report_empty_dir_fails(tmp_path, capsys):
    rc = main(["report", "--run", str(tmp_path)])
    assert rc == 2
    assert "no report.csv" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# selftest


def test_selftest_passes_and_names_every_check(capsys):
    rc = main(["selftest"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("[PASS]") == len(selftest.CHECKS) == 7
    for name in ("order-matrix-golden", "order-equivalence", "qp-kkt",
                 "qp-projection-oracle", "margin-feasibility",
                 "gradient-checks", "cw-zero-loss"):
        assert f"[PASS] {name}:" in out
    assert "all 7 checks passed" in out


def test_selftest_catches_sign_flipped_order_matrix(monkeypatch, capsys):
    real = constraints.build_order_matrix

    def flipped(tl):
        om = real(tl)
        return OrderMatrix(rows=-om.rows, source=tl)

    monkeypatch.setattr(constraints, "build_order_matrix", flipped)
    rc = main(["selftest"])
    out = capsys.readouterr().out
    assert rc == 1
    assert "[FAIL] order-matrix-golden:" in out
