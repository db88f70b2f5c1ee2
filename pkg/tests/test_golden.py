"""Byte-level regression pins against the frozen files in tests/golden/.

Each test recomputes one pipeline layer from scratch and demands the exact
frozen bytes: any numerical drift in the solver, autodiff, attack loop, or
writers shows up here first. Regenerate deliberately via
``python3 tests/golden/regen.py`` and review the diff.
"""

import json
import os

import numpy as np

from topkqp.attacks import AttackConfig, run_attack, run_attack_assignments
from topkqp.cli import main
from topkqp.constraints import TargetList
from topkqp.harness import ExperimentConfig, budget_sweep, write_tradeoff_csv
from topkqp.nn import forward

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")


def first_correct_instance(model, data, k=3):
    for x, y in zip(data.inputs, data.labels):
        y = int(y)
        _, logits, _ = forward(model, x)
        if int(np.argmax(logits.data)) == y:
            targets = tuple(t for t in range(model.num_classes) if t != y)[:k]
            return x, TargetList(targets=targets, ground_truth=y,
                                 num_classes=model.num_classes)
    raise AssertionError("model misclassifies every sample")


def trace_config():
    return AttackConfig(method="latentqp", k=3, steps=60, warmup_steps=5, seed=0)


def test_latentqp_trace_matches_golden(small_model, small_data):
    x, tl = first_correct_instance(small_model, small_data)
    records = []
    run_attack_assignments(small_model, x, tl, trace_config(),
                           on_iteration=records.append)
    got = [json.dumps(rec) for rec in records]
    frozen = open(os.path.join(GOLDEN, "trace_latentqp.jsonl")).read().splitlines()
    assert len(got) == len(frozen) == 60
    for i, (g, f) in enumerate(zip(got, frozen)):
        assert g == f, f"trace diverges at iteration {i}"


def test_attack_result_matches_golden(small_model, small_data):
    x, tl = first_correct_instance(small_model, small_data)
    res = run_attack(small_model, x, tl, trace_config())
    doc = json.load(open(os.path.join(GOLDEN, "attack_result.json")))
    assert res.success == doc["success"]
    assert res.l1 == doc["l1"]
    assert res.l2 == doc["l2"]
    assert res.linf == doc["linf"]
    assert res.iterations_to_first_success == doc["iterations_to_first_success"]
    assert res.assignment_index == doc["assignment_index"]
    assert res.loss_weight == doc["loss_weight"]
    assert res.infeasible_projections == doc["infeasible_projections"]
    assert np.array_equal(res.delta, np.asarray(doc["delta"]))


def test_weight_sweep_csv_matches_golden(small_model, small_data, tmp_path):
    exp = ExperimentConfig(methods=("latentqp",), k_values=(3,), budgets=((9, 30),),
                           num_images=3, groups_per_image=2, seed=1)
    points = budget_sweep(small_model, small_data, exp, method="latentqp", k=3,
                          n=9, m=30)
    path = tmp_path / "sweep.csv"
    write_tradeoff_csv(points, path, config_hash="frozen", seed=1)
    frozen = open(os.path.join(GOLDEN, "sweep_9x30.csv"), "rb").read()
    assert path.read_bytes() == frozen


def test_cli_attack_run_matches_golden(tmp_path, capsys):
    cfg_path = os.path.join(GOLDEN, "e2e_config.json")
    out = str(tmp_path / "run")
    assert main(["attack", "--config", cfg_path, "--out", out, "--seed", "1"]) == 0
    capsys.readouterr()
    for produced, frozen in (("report.csv", "e2e_report.csv"),
                             ("summary.json", "e2e_summary.json")):
        got = (tmp_path / "run" / produced).read_bytes()
        want = open(os.path.join(GOLDEN, frozen), "rb").read()
        assert got == want, f"{produced} differs from {frozen}"
