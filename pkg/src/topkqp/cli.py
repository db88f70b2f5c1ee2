"""Command-line front end.

Subcommands: gen-data, train, attack, sweep, report, selftest. A JSON
config file (--config) supplies everything; --seed/--jobs/--out override
it, and the fully materialized effective config is echoed and saved with
every run so outputs are reproducible from their own directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import nn, report, selftest
from .config import ConfigError, config_hash, effective_config, parse_budget
from .harness import (
    ExperimentConfig,
    budget_sweep,
    run_protocol,
    tradeoff_curve,
    write_report_csv,
    write_summary_json,
    write_tradeoff_csv,
)
from .qp import SolverConfig

__all__ = ["main", "build_parser"]


def _echo_config(cfg: dict) -> None:
    print(json.dumps(cfg, indent=2))


def _save_effective(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2)
        fh.write("\n")


def _resolve_dataset(cfg: dict) -> nn.Dataset:
    d = cfg["data"]
    if d["path"]:
        return nn.load_dataset(d["path"])
    return nn.make_blobs(num_classes=d["classes"], samples=d["samples"],
                         input_dim=d["dims"], sigma=d["sigma"], seed=cfg["seed"])


def _resolve_model(cfg: dict, data: nn.Dataset) -> nn.Model:
    m = cfg["model"]
    if m["path"]:
        return nn.load_model(m["path"])
    model, acc = nn.train_toy(
        data, kind=m["kind"], hidden=tuple(m["hidden"]), feature_dim=m["feature_dim"],
        epochs=cfg["train"]["epochs"], step_size=cfg["train"]["step_size"],
        seed=cfg["seed"], kernel=m["kernel"], conv_channels=tuple(m["conv_channels"]))
    print(f"trained {m['kind']} model: accuracy {acc:.4f}")
    return model


def _experiment(cfg: dict, budgets: tuple[tuple[int, int], ...]) -> ExperimentConfig:
    a, e, s = cfg["attack"], cfg["eval"], cfg["solver"]
    penalty = a["penalty_norm"]
    return ExperimentConfig(
        methods=tuple(a["methods"]), k_values=tuple(a["k_values"]), budgets=budgets,
        num_images=e["num_images"], groups_per_image=e["groups_per_image"],
        seed=cfg["seed"], margin=a["margin"], warmup_steps=a["warmup_steps"],
        penalty_norm=float("inf") if penalty in ("inf", "Infinity") else penalty,
        init_sigma=a["init_sigma"], step_size=a["step_size"], loss_weight=a["loss_weight"],
        weight_range=tuple(a["weight_range"]), ad_decay=a["ad_decay"],
        ad_complement_mass=a["ad_complement_mass"], family=a["family"],
        solver=SolverConfig(tol=s["tol"], max_iter=s["max_iter"],
                            regularization=s["regularization"]))


def _load_cfg(args) -> dict:
    return effective_config(args.config, seed=args.seed, jobs=args.jobs, out=args.out)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    d = cfg["data"]
    if args.classes is not None:
        d["classes"] = args.classes
    if args.samples is not None:
        d["samples"] = args.samples
    if args.dims is not None:
        d["dims"] = args.dims
    _echo_config(cfg)
    data = nn.make_blobs(num_classes=d["classes"], samples=d["samples"],
                         input_dim=d["dims"], sigma=d["sigma"], seed=cfg["seed"])
    os.makedirs(cfg["out"], exist_ok=True)
    _save_effective(cfg, cfg["out"])
    path = os.path.join(cfg["out"], "dataset.json")
    nn.save_dataset(data, path)
    counts = np.bincount(data.labels, minlength=data.num_classes)
    print(f"wrote {path}: {data.inputs.shape[0]} samples, "
          f"{data.num_classes} classes, dims {data.inputs.shape[1]}")
    print("per-class counts:", " ".join(str(int(c)) for c in counts))
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    _echo_config(cfg)
    data = _resolve_dataset(cfg)
    model = _resolve_model(cfg, data)
    acc = nn.accuracy(model, data)
    os.makedirs(cfg["out"], exist_ok=True)
    _save_effective(cfg, cfg["out"])
    path = os.path.join(cfg["out"], "model.json")
    nn.save_model(model, path)
    print(f"wrote {path}: train accuracy {acc:.4f}")
    return 0


def _validate_attack_targets(cfg: dict, num_classes: int) -> None:
    for k in cfg["attack"]["k_values"]:
        if not 1 <= k <= num_classes - 1:
            raise ConfigError(f"K={k} invalid for {num_classes} classes")


def cmd_attack(args) -> int:
    cfg = _load_cfg(args)
    _echo_config(cfg)
    budgets = tuple(parse_budget(b) for b in cfg["attack"]["budgets"])
    _validate_attack_targets(cfg, cfg["data"]["classes"])
    data = _resolve_dataset(cfg)
    _validate_attack_targets(cfg, data.num_classes)
    model = _resolve_model(cfg, data)
    exp = _experiment(cfg, budgets)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    _save_effective(cfg, out_dir)
    trace_dir = os.path.join(out_dir, "traces") if cfg["attack"]["traces"] else None
    rows = run_protocol(model, data, exp, jobs=cfg["jobs"], trace_dir=trace_dir)
    h = config_hash(cfg)
    csv_path = os.path.join(out_dir, "report.csv")
    json_path = os.path.join(out_dir, "summary.json")
    write_report_csv(rows, csv_path, config_hash=h, seed=cfg["seed"])
    write_summary_json(json_path, config_doc=cfgmod.result_config(cfg),
                       config_hash=h, seed=cfg["seed"], rows=rows)
    for row in rows:
        print(f"{row.protocol} {row.method} {row.budget}: "
              f"ASR best {row.asr_best:.4f} mean {row.asr_mean:.4f} worst {row.asr_worst:.4f}")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    _echo_config(cfg)
    sw = cfg["sweep"]
    n, m = parse_budget(sw["budget"])
    if not 1 <= sw["k"] <= cfg["data"]["classes"] - 1:
        raise ConfigError(f"K={sw['k']} invalid for {cfg['data']['classes']} classes")
    data = _resolve_dataset(cfg)
    model = _resolve_model(cfg, data)
    exp = _experiment(cfg, budgets=((n, m),))
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    _save_effective(cfg, out_dir)
    points = budget_sweep(model, data, exp, method=sw["method"], k=sw["k"], n=n, m=m,
                          jobs=cfg["jobs"])
    h = config_hash(cfg)
    csv_path = os.path.join(out_dir, "tradeoff.csv")
    json_path = os.path.join(out_dir, "sweep_summary.json")
    write_tradeoff_csv(points, csv_path, config_hash=h, seed=cfg["seed"])
    write_summary_json(json_path, config_doc=cfgmod.result_config(cfg), config_hash=h,
                       seed=cfg["seed"], rows=[], tradeoff=points)
    for p in points:
        l2txt = "NA" if p.mean_l2 is None else f"{p.mean_l2:.4f}"
        print(f"weight {p.weight:g}: ASR {p.asr:.4f} mean_l2 {l2txt}")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_report(args) -> int:
    run_dir = args.run
    out_dir = args.out or run_dir
    written = report.render_run(run_dir, out_dir)
    if not written:
        print(f"error: no report.csv or tradeoff.csv under {run_dir}", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_selftest(args) -> int:
    results = selftest.run_checks()
    failed = 0
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        print(f"[{tag}] {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topkqp",
        description="Ordered top-K targeted attacks on a toy classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=None, help="worker processes")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("gen-data", help="generate the Gaussian-blob dataset")
    common(p)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--dims", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the toy classifier")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run the attack protocol grid")
    common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="loss-weight sweep for trade-off curves")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render figures from a run directory")
    p.add_argument("--run", required=True, help="directory with report.csv / tradeoff.csv")
    p.add_argument("--out", default=None, help="figure output directory (default: run dir)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the named consistency checks")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
