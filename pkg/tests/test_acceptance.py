"""Acceptance gate: the ten headline requirements, one test each, in order.

Every test prints a single ``[PASS]/[FAIL] name: detail (elapsed)`` line
(visible under ``pytest -s``; the assert message carries the same line on
failure) and enforces both the stated tolerance and the stated time budget.
The named consistency checks are reused from the selftest module at their
full sizes; the end-to-end tests drive the real protocol and CLI.
"""

import json
import time

import numpy as np
import pytest

from topkqp import selftest
from topkqp.cli import main
from topkqp.harness import ExperimentConfig, run_protocol
from topkqp.nn import accuracy


def report(name, ok, detail, t0, budget):
    elapsed = time.time() - t0
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({elapsed:.1f}s)"
    print(line)
    assert ok, line
    assert elapsed < budget, f"{name} exceeded its {budget}s budget: {elapsed:.1f}s"


def test_01_order_matrix_golden():
    t0 = time.time()
    r = selftest.check_order_matrix_golden()
    report("order-matrix-golden", r.passed, r.detail, t0, budget=5)


def test_02_order_equivalence_100k_draws():
    t0 = time.time()
    r = selftest.check_order_equivalence(draws=100000, max_classes=10)
    report("order-equivalence-100k", r.passed, r.detail, t0, budget=5)


def test_03_qp_kkt_1000_problems():
    t0 = time.time()
    r = selftest.check_qp_kkt(problems=1000, tol=1e-8, max_dim=32, max_ineq=16)
    report("qp-kkt-1000", r.passed, r.detail, t0, budget=30)


def test_04_projection_oracle_1000_problems():
    t0 = time.time()
    r = selftest.check_projection_oracle(problems=1000, tol=1e-6, max_dim=8,
                                         max_ineq=6, feasible_tol=1e-9)
    report("projection-oracle-1000", r.passed, r.detail, t0, budget=60)


def test_05_margin_feasibility():
    t0 = time.time()
    r = selftest.check_margin_feasibility(instances=200, margin=0.2, slack=1e-6)
    report("margin-feasibility", r.passed, r.detail, t0, budget=10)


def test_06_gradient_checks_100_states():
    t0 = time.time()
    r = selftest.check_gradients(states=100, tol=1e-4)
    report("gradient-checks-100", r.passed, r.detail, t0, budget=30)


def test_07_cw_zero_loss_equivalence():
    t0 = time.time()
    r = selftest.check_cw_zero_loss(draws_per_case=1000)
    report("cw-zero-loss", r.passed, r.detail, t0, budget=10)


def test_08_end_to_end_toy_ordering(blob_model, blob_data):
    t0 = time.time()
    acc = accuracy(blob_model, blob_data)
    assert acc >= 0.95, f"toy model accuracy {acc:.4f} below 0.95"
    exp = ExperimentConfig(methods=("latentqp", "cwk", "ad"), k_values=(3, 5),
                           budgets=((1, 60),), num_images=200, groups_per_image=5,
                           seed=0)
    rows = run_protocol(blob_model, blob_data, exp, jobs=1)
    mean = {(r.method, r.protocol): r.asr_mean for r in rows}
    checks = []
    for proto in ("top-3", "top-5"):
        for baseline in ("cwk", "ad"):
            checks.append(mean[("latentqp", proto)] >= mean[(baseline, proto)])
    checks.append(mean[("latentqp", "top-3")] >= 0.9)
    detail = "; ".join(
        f"{proto} latentqp {mean[('latentqp', proto)]:.3f} "
        f"cwk {mean[('cwk', proto)]:.3f} ad {mean[('ad', proto)]:.3f}"
        for proto in ("top-3", "top-5"))
    report("end-to-end-toy", all(checks), f"acc {acc:.3f}; mean ASR {detail}",
           t0, budget=600)


def test_09_warmup_ablation(blob_model, blob_data):
    t0 = time.time()
    common = dict(methods=("latentqp",), k_values=(3,), budgets=((1, 60),),
                  num_images=40, groups_per_image=5, seed=0)
    [warm] = run_protocol(blob_model, blob_data,
                          ExperimentConfig(warmup_steps=5, **common), jobs=1)
    [cold] = run_protocol(blob_model, blob_data,
                          ExperimentConfig(warmup_steps=0, **common), jobs=1)
    ok = (warm.l2_mean is not None and cold.l2_mean is not None
          and warm.l2_mean <= cold.l2_mean)
    detail = (f"mean l2 of successes over 200 instances: "
              f"warmup {warm.l2_mean:.4f} <= no-warmup {cold.l2_mean:.4f}")
    report("warmup-ablation", ok, detail, t0, budget=600)


def test_10_determinism_across_worker_counts(tmp_path, capsys):
    # two full CLI attack runs, identical config, --jobs 1 vs --jobs 8:
    # the result files must match byte for byte
    t0 = time.time()
    cfg = {
        "attack": {"methods": ["latentqp", "cwk", "ad"], "k_values": [3],
                   "budgets": ["1x30"]},
        "eval": {"num_images": 20, "groups_per_image": 2},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    blobs = {}
    for name, jobs in (("serial", "1"), ("parallel", "8")):
        out = str(tmp_path / name)
        rc = main(["attack", "--config", str(cfg_path), "--out", out,
                   "--seed", "0", "--jobs", jobs])
        assert rc == 0
        blobs[name] = ((tmp_path / name / "report.csv").read_bytes(),
                       (tmp_path / name / "summary.json").read_bytes())
    capsys.readouterr()
    ok = blobs["serial"] == blobs["parallel"]
    csv_bytes = len(blobs["serial"][0])
    report("determinism-jobs", ok,
           f"report.csv ({csv_bytes} bytes) and summary.json identical at --jobs 1 and 8",
           t0, budget=1200)
