"""Evaluation protocol: attack success rates and perturbation energies.

For every (method, K, budget) cell the harness attacks each selected
image under several independently sampled target groups, then reports
Best/Mean/Worst statistics over the per-group attack success rates along
with mean l1/l2/linf energies of the successful perturbations. Success is
always recomputed from the stored perturbation with a fresh forward pass;
the attack loop's own flags are never trusted.

Output is CSV/JSON only; figure rendering lives in the report module.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import METHODS, AttackConfig, default_loss_weight, derive_seed, run_attack
from .constraints import TargetList, check_order
from .nn import Dataset, Model, forward
from .qp import SolverConfig

__all__ = [
    "ExperimentConfig",
    "InstanceOutcome",
    "MetricsRow",
    "TradeoffPoint",
    "ConfigError",
    "select_correct",
    "sample_targets",
    "aggregate",
    "run_protocol",
    "budget_sweep",
    "tradeoff_curve",
    "write_report_csv",
    "write_tradeoff_csv",
    "write_summary_json",
    "CSV_COLUMNS",
    "TRADEOFF_COLUMNS",
]

CSV_COLUMNS = [
    "protocol", "method", "budget",
    "asr_best", "l1_best", "l2_best", "linf_best",
    "asr_mean", "l1_mean", "l2_mean", "linf_mean",
    "asr_worst", "l1_worst", "l2_worst", "linf_worst",
]

TRADEOFF_COLUMNS = ["method", "K", "budget", "lambda", "asr", "mean_l2"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    methods: tuple[str, ...] = ("latentqp", "cwk", "ad")
    k_values: tuple[int, ...] = (1, 3, 5)
    budgets: tuple[tuple[int, int], ...] = ((1, 60),)
    num_images: int = 200
    groups_per_image: int = 5
    seed: int = 0
    margin: float = 0.2
    warmup_steps: int = 5
    penalty_norm: float = 2
    init_sigma: float = 1e-3
    step_size: float | None = None
    loss_weight: float | None = None
    weight_range: tuple[float, float] = (1.0, 19.0)
    ad_decay: float = 0.5
    ad_complement_mass: float = 0.1
    family: str = "toy"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ConfigError("k_values must be positive")
        if not self.budgets or any(n < 1 or m < 1 for n, m in self.budgets):
            raise ConfigError("budgets must be pairs of positive ints")
        if self.num_images < 1 or self.groups_per_image < 1:
            raise ConfigError("need at least one image and one group")


@dataclass
class InstanceOutcome:
    success: bool
    l1: float
    l2: float
    linf: float


@dataclass
class MetricsRow:
    protocol: str
    method: str
    budget: str
    asr_best: float
    l1_best: float | None
    l2_best: float | None
    linf_best: float | None
    asr_mean: float
    l1_mean: float | None
    l2_mean: float | None
    linf_mean: float | None
    asr_worst: float
    l1_worst: float | None
    l2_worst: float | None
    linf_worst: float | None
    # mean energies as mean-of-group-means, reported only in the JSON summary
    groupavg: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.asr_best, self.asr_mean, self.asr_worst):
            if not 0.0 <= a <= 1.0:
                raise ValueError("ASR outside [0, 1]")
        if not self.asr_worst <= self.asr_mean + 1e-12 or not self.asr_mean <= self.asr_best + 1e-12:
            raise ValueError("ASR ordering violated (worst <= mean <= best)")

    def csv_cells(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class TradeoffPoint:
    method: str
    k: int
    budget: str
    weight: float
    asr: float
    mean_l2: float | None

    def csv_cells(self) -> list:
        return [self.method, self.k, self.budget, self.weight, self.asr, self.mean_l2]


# ---------------------------------------------------------------------------
# instance selection


def select_correct(model: Model, data: Dataset) -> np.ndarray:
    """Dataset indices the model classifies correctly; empty is a config error."""
    _, logits, _ = forward(model, data.inputs)
    idx = np.flatnonzero(np.argmax(logits.data, axis=1) == data.labels)
    if idx.size == 0:
        raise ConfigError("model classifies no evaluation image correctly")
    return idx


def sample_targets(num_classes: int, k: int, ground_truth: int, groups: int,
                   seed_seq) -> list[TargetList]:
    """Uniform ordered K-tuples from the non-label classes, one per group."""
    rng = np.random.default_rng(seed_seq)
    pool = np.asarray([c for c in range(num_classes) if c != ground_truth])
    out = []
    for _ in range(groups):
        draw = rng.permutation(pool)[:k]
        out.append(TargetList(tuple(int(v) for v in draw), ground_truth, num_classes))
    return out


# ---------------------------------------------------------------------------
# aggregation


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _group_stats(group: list[InstanceOutcome]):
    asr = float(np.mean([o.success for o in group]))
    wins = [o for o in group if o.success]
    return asr, (_mean_or_none([o.l1 for o in wins]),
                 _mean_or_none([o.l2 for o in wins]),
                 _mean_or_none([o.linf for o in wins]))


def aggregate(groups: list[list[InstanceOutcome]], protocol: str, method: str,
              budget: str) -> MetricsRow:
    """Best/Mean/Worst over per-group ASRs.

    Energy columns come from the extremal group's successes; the Mean
    columns pool successes across all groups (the group-mean-of-means
    variant is kept alongside under ``groupavg``). Groups with no
    successes report absent energies, never zero.
    """
    if not groups:
        raise ValueError("no groups to aggregate")
    sizes = {len(g) for g in groups}
    if len(sizes) != 1 or 0 in sizes:
        raise ValueError("groups must cover the identical instance count")
    stats = [_group_stats(g) for g in groups]
    asrs = [s[0] for s in stats]
    best_i = int(np.argmax(asrs))
    worst_i = int(np.argmin(asrs))
    pooled = [o for g in groups for o in g if o.success]
    pooled_energy = (_mean_or_none([o.l1 for o in pooled]),
                     _mean_or_none([o.l2 for o in pooled]),
                     _mean_or_none([o.linf for o in pooled]))
    per_group_energies = [s[1] for s in stats]
    groupavg = {}
    for j, name in enumerate(("l1", "l2", "linf")):
        have = [e[j] for e in per_group_energies if e[j] is not None]
        groupavg[f"{name}_mean_groupavg"] = _mean_or_none(have)
    return MetricsRow(
        protocol=protocol, method=method, budget=budget,
        asr_best=asrs[best_i], l1_best=stats[best_i][1][0],
        l2_best=stats[best_i][1][1], linf_best=stats[best_i][1][2],
        asr_mean=float(np.mean(asrs)), l1_mean=pooled_energy[0],
        l2_mean=pooled_energy[1], linf_mean=pooled_energy[2],
        asr_worst=asrs[worst_i], l1_worst=stats[worst_i][1][0],
        l2_worst=stats[worst_i][1][1], linf_worst=stats[worst_i][1][2],
        groupavg=groupavg,
    )


# ---------------------------------------------------------------------------
# task execution (optionally across processes)


@dataclass
class _Task:
    method: str
    k: int
    n: int
    m: int
    image_index: int
    group_index: int
    x: np.ndarray
    targets: TargetList
    seed: int
    step_size: float | None
    loss_weight: float | None
    trace_path: str | None = None


_WORKER_MODEL: Model | None = None
_WORKER_EXP: ExperimentConfig | None = None


def _init_worker(model: Model, exp: ExperimentConfig) -> None:
    global _WORKER_MODEL, _WORKER_EXP
    _WORKER_MODEL = model
    _WORKER_EXP = exp


def _attack_config(exp: ExperimentConfig, task: _Task) -> AttackConfig:
    warmup = min(exp.warmup_steps, task.m - 1) if task.m > 0 else 0
    return AttackConfig(
        method=task.method, k=task.k, steps=task.m, warmup_steps=warmup,
        step_size=task.step_size, loss_weight=task.loss_weight,
        margin=exp.margin, penalty_norm=exp.penalty_norm,
        init_sigma=exp.init_sigma, num_assignments=task.n,
        weight_range=exp.weight_range, ad_decay=exp.ad_decay,
        ad_complement_mass=exp.ad_complement_mass, family=exp.family,
        seed=task.seed)


def _solve_task(task: _Task) -> np.ndarray:
    model, exp = _WORKER_MODEL, _WORKER_EXP
    cfg = _attack_config(exp, task)
    sink = None
    records: list[dict] = []
    if task.trace_path is not None:
        sink = records.append
    result = run_attack(model, task.x, task.targets, cfg, exp.solver, on_iteration=sink)
    if task.trace_path is not None:
        with open(task.trace_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    return result.delta


def _execute(tasks: list[_Task], model: Model, exp: ExperimentConfig, jobs: int) -> list[np.ndarray]:
    if jobs <= 1:
        _init_worker(model, exp)
        return [_solve_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(model, exp)) as pool:
        return list(pool.map(_solve_task, tasks, chunksize=8))


def _verify_outcome(model: Model, x: np.ndarray, tl: TargetList, delta: np.ndarray) -> InstanceOutcome:
    _, logits, _ = forward(model, x + delta)
    ok = check_order(logits.data, tl)
    return InstanceOutcome(success=ok,
                           l1=float(np.abs(delta).sum()),
                           l2=float(np.sqrt(np.dot(delta, delta))),
                           linf=float(np.abs(delta).max()))


def _instance_seed(exp_seed: int, image_index: int, k: int, group: int) -> int:
    # method- and budget-independent so every attack sees identical noise
    return int(derive_seed(exp_seed, 2, image_index, k, group).generate_state(1, np.uint64)[0])


def _choose_images(model: Model, data: Dataset, exp: ExperimentConfig) -> np.ndarray:
    correct = select_correct(model, data)
    if correct.size < exp.num_images:
        raise ConfigError(
            f"only {correct.size} correctly classified images, need {exp.num_images}")
    rng = np.random.default_rng(derive_seed(exp.seed, 0))
    return np.sort(rng.choice(correct, size=exp.num_images, replace=False))


def run_protocol(model: Model, data: Dataset, exp: ExperimentConfig, *,
                 jobs: int = 1, trace_dir: str | None = None) -> list[MetricsRow]:
    """Full grid over methods x K x budgets; rows in that nesting order."""
    images = _choose_images(model, data, exp)
    group_lists: dict[tuple[int, int], list[TargetList]] = {}
    for img in images:
        gt = int(data.labels[img])
        for k in exp.k_values:
            if k > data.num_classes - 1:
                raise ConfigError(f"K={k} needs at least {k + 1} classes")
            group_lists[(img, k)] = sample_targets(
                data.num_classes, k, gt, exp.groups_per_image, derive_seed(exp.seed, 1, img, k))

    if trace_dir is not None:
        os.makedirs(trace_dir, exist_ok=True)

    tasks: list[_Task] = []
    for method in exp.methods:
        for k in exp.k_values:
            for n, m in exp.budgets:
                for img in images:
                    for g in range(exp.groups_per_image):
                        trace_path = None
                        if trace_dir is not None:
                            trace_path = os.path.join(
                                trace_dir, f"{method}_k{k}_n{n}x{m}_img{img}_grp{g}.jsonl")
                        tasks.append(_Task(
                            method=method, k=k, n=n, m=m, image_index=int(img),
                            group_index=g, x=data.inputs[img],
                            targets=group_lists[(img, k)][g],
                            seed=_instance_seed(exp.seed, int(img), k, g),
                            step_size=exp.step_size, loss_weight=exp.loss_weight,
                            trace_path=trace_path))

    deltas = _execute(tasks, model, exp, jobs)

    outcomes: dict[tuple, InstanceOutcome] = {}
    for task, delta in zip(tasks, deltas):
        key = (task.method, task.k, task.n, task.m, task.image_index, task.group_index)
        outcomes[key] = _verify_outcome(model, task.x, task.targets, delta)

    rows = []
    for method in exp.methods:
        for k in exp.k_values:
            for n, m in exp.budgets:
                groups = [[outcomes[(method, k, n, m, int(img), g)] for img in images]
                          for g in range(exp.groups_per_image)]
                rows.append(aggregate(groups, protocol=f"top-{k}", method=method,
                                      budget=f"{n}x{m}"))
    return rows


def tradeoff_curve(model: Model, data: Dataset, exp: ExperimentConfig, *, method: str,
                   k: int, steps: int, weights, jobs: int = 1) -> list[TradeoffPoint]:
    """ASR / mean-l2 as the loss weight sweeps a grid (one assignment each)."""
    images = _choose_images(model, data, exp)
    points = []
    for w in weights:
        tasks = []
        for img in images:
            gt = int(data.labels[img])
            groups = sample_targets(data.num_classes, k, gt, exp.groups_per_image,
                                    derive_seed(exp.seed, 1, img, k))
            for g in range(exp.groups_per_image):
                tasks.append(_Task(
                    method=method, k=k, n=1, m=steps, image_index=int(img),
                    group_index=g, x=data.inputs[img], targets=groups[g],
                    seed=_instance_seed(exp.seed, int(img), k, g),
                    step_size=exp.step_size, loss_weight=float(w)))
        deltas = _execute(tasks, model, exp, jobs)
        checked = [_verify_outcome(model, t.x, t.targets, d) for t, d in zip(tasks, deltas)]
        wins = [o.l2 for o in checked if o.success]
        points.append(TradeoffPoint(
            method=method, k=k, budget=f"1x{steps}", weight=float(w),
            asr=float(np.mean([o.success for o in checked])),
            mean_l2=_mean_or_none(wins)))
    return points


def budget_sweep(model: Model, data: Dataset, exp: ExperimentConfig, *, method: str,
                 k: int, n: int, m: int, jobs: int = 1) -> list[TradeoffPoint]:
    """Per-assignment view of an n x m budget: the weight grid spans
    exp.weight_range with n points, each run for m steps."""
    lo, hi = exp.weight_range
    weights = np.linspace(lo, hi, n) if n > 1 else np.asarray(
        [exp.loss_weight if exp.loss_weight is not None else default_loss_weight(method, k)])
    return tradeoff_curve(model, data, exp, method=method, k=k, steps=m,
                          weights=weights, jobs=jobs)


# ---------------------------------------------------------------------------
# delimited / JSON output (floats via repr for byte-stable files)


def _cell(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, columns, rows_of_cells, config_hash: str, seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash} seed={seed}\n")
        fh.write(",".join(columns) + "\n")
        for cells in rows_of_cells:
            fh.write(",".join(_cell(c) for c in cells) + "\n")


def write_report_csv(rows: list[MetricsRow], path, config_hash: str = "", seed: int = 0) -> None:
    _write_csv(path, CSV_COLUMNS, (r.csv_cells() for r in rows), config_hash, seed)


def write_tradeoff_csv(points: list[TradeoffPoint], path, config_hash: str = "",
                       seed: int = 0) -> None:
    _write_csv(path, TRADEOFF_COLUMNS, (p.csv_cells() for p in points), config_hash, seed)


def _row_doc(row: MetricsRow) -> dict:
    doc = {c: getattr(row, c) for c in CSV_COLUMNS}
    doc.update(row.groupavg)
    return doc


def write_summary_json(path, *, config_doc: dict, config_hash: str, seed: int,
                       rows: list[MetricsRow], tradeoff: list[TradeoffPoint] | None = None) -> None:
    doc = {
        "config_hash": config_hash,
        "seed": seed,
        "config": config_doc,
        "rows": [_row_doc(r) for r in rows],
        "tradeoff": [{c: v for c, v in zip(TRADEOFF_COLUMNS, p.csv_cells())}
                     for p in (tradeoff or [])],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
