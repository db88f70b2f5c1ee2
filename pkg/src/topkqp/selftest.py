"""Named consistency checks between independent computation routes.

Each check pits the implementation against an oracle that shares no code
with it: the sign-matrix ordering test against a sort-based one, the
interior-point solver against active-set enumeration, analytic gradients
against central differences, the hinge loss against the plain ordering
condition. The CLI ``selftest`` subcommand runs all checks at default
sizes; the acceptance tests reuse them at their full published sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import constraints
from .losses import ad_loss, ad_target_distribution, cw_topk_loss
from .nn import forward, init_model
from .qp import (QPNumericError, QPProblem, SolverConfig, SolverStatus,
                 brute_force_solve, kkt_residuals, solve)
from .tensor import Tensor, add, backward, l2_norm, scale, sub

__all__ = ["CheckResult", "run_checks", "CHECKS"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# helpers


def _random_target_list(rng, num_classes: int, k: int | None = None) -> constraints.TargetList:
    if k is None:
        k = int(rng.integers(1, num_classes))
    gt = int(rng.integers(num_classes))
    pool = [c for c in range(num_classes) if c != gt]
    draw = rng.permutation(pool)[:k]
    return constraints.TargetList(tuple(int(v) for v in draw), gt, num_classes)


def _ordered_logits_for(tl: constraints.TargetList, rng, strict: bool = True) -> np.ndarray:
    """Construct logits satisfying (strictly, or with one tie) the order."""
    c, k = tl.num_classes, tl.k
    vals = np.sort(rng.standard_normal(c))[::-1]
    if not strict and c > 1:
        j = int(rng.integers(c - 1))
        vals[j + 1] = vals[j]
    logits = np.empty(c)
    logits[list(tl.targets)] = vals[:k]
    rest = [i for i in range(c) if i not in tl.targets]
    logits[rest] = vals[k:][rng.permutation(c - k)]
    return logits


def check_order_matrix_golden(**_) -> CheckResult:
    """C = 5, targets (2, 3, 1) in 1-based labels: the known sign matrix."""
    tl = constraints.TargetList.from_one_based((2, 3, 1), ground_truth=5, num_classes=5)
    want = np.array([
        [0, 1, -1, 0, 0],
        [-1, 0, 1, 0, 0],
        [1, 0, 0, -1, 0],
        [1, 0, 0, 0, -1],
    ], dtype=np.float64)
    got = constraints.build_order_matrix(tl).rows
    ok = got.shape == want.shape and np.array_equal(got, want)
    return CheckResult("order-matrix-golden", ok,
                       "exact match" if ok else f"got\n{got}")


def check_order_equivalence(draws: int = 20000, max_classes: int = 10, seed: int = 0, **_) -> CheckResult:
    """M @ logits > 0 elementwise must agree with the sort-based test."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for i in range(draws):
        c = int(rng.integers(2, max_classes + 1))
        tl = _random_target_list(rng, c)
        # mix random logits with constructed satisfying ones so both
        # branches of the equivalence are exercised
        logits = (_ordered_logits_for(tl, rng) if i % 4 == 0
                  else rng.standard_normal(c))
        rows = constraints.build_order_matrix(tl).rows
        via_matrix = bool(np.all(rows @ logits > 0.0))
        via_sort = constraints.check_order(logits, tl)
        if via_matrix != via_sort:
            mismatches += 1
    return CheckResult("order-equivalence", mismatches == 0,
                       f"{mismatches} mismatches in {draws} draws")


def _random_qp(rng, max_dim: int = 32, max_ineq: int = 16) -> QPProblem:
    d = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(0, max_ineq + 1))
    mfac = rng.standard_normal((d, d))
    ridge = float(rng.choice([1e-3, 1e-1, 1.0]))
    q = mfac.T @ mfac + ridge * np.eye(d)
    p = rng.standard_normal(d)
    g = rng.standard_normal((m, d))
    # strictly feasible interior point guarantees a solvable instance
    z0 = rng.standard_normal(d)
    h = g @ z0 + np.abs(rng.standard_normal(m)) + 0.1
    weq = beq = None
    if rng.random() < 0.3 and d > 1:
        e = int(rng.integers(1, min(d, 4)))
        weq = rng.standard_normal((e, d))
        beq = weq @ z0
    return QPProblem(Q=q, p=p, G=g, h=h, W=weq, b=beq)


def check_qp_kkt(problems: int = 150, seed: int = 0, tol: float = 1e-8,
                 max_dim: int = 32, max_ineq: int = 16, **_) -> CheckResult:
    """All four KKT residuals below tol on every optimal random instance."""
    rng = np.random.default_rng(seed)
    cfg = SolverConfig()
    worst = 0.0
    failures = 0
    for _ in range(problems):
        prob = _random_qp(rng, max_dim, max_ineq)
        try:
            sol = solve(prob, cfg)
        except QPNumericError:
            failures += 1
            continue
        if sol.status != SolverStatus.OPTIMAL:
            failures += 1
            continue
        resid = max(kkt_residuals(prob, sol))
        worst = max(worst, resid)
        if resid > tol:
            failures += 1
    return CheckResult("qp-kkt", failures == 0,
                       f"{failures} failures, worst residual {worst:.2e} over {problems} problems")


def check_projection_oracle(problems: int = 100, seed: int = 0, tol: float = 1e-6,
                            max_dim: int = 8, max_ineq: int = 6,
                            feasible_tol: float = 1e-9, **_) -> CheckResult:
    """IPM projections match active-set enumeration; feasible points are fixed."""
    rng = np.random.default_rng(seed)
    cfg = SolverConfig()
    worst = 0.0
    failures = 0
    for i in range(problems):
        d = int(rng.integers(1, max_dim + 1))
        m = int(rng.integers(1, max_ineq + 1))
        center = rng.standard_normal(d)
        g = rng.standard_normal((m, d))
        if i % 3 == 0:
            # center strictly inside the polytope: projection must return it
            h = g @ center + np.abs(rng.standard_normal(m)) + 0.1
            prob = QPProblem(Q=2.0 * np.eye(d), p=-2.0 * center, G=g, h=h)
            sol = solve(prob, cfg)
            err = float(np.abs(sol.z - center).max())
            if sol.status != SolverStatus.OPTIMAL or err > feasible_tol:
                failures += 1
            continue
        z0 = rng.standard_normal(d)
        h = g @ z0 + np.abs(rng.standard_normal(m)) + 0.1
        prob = QPProblem(Q=2.0 * np.eye(d), p=-2.0 * center, G=g, h=h)
        sol = solve(prob, cfg)
        if sol.status != SolverStatus.OPTIMAL:
            failures += 1
            continue
        ref = brute_force_solve(prob)
        err = float(np.abs(sol.z - ref).max())
        worst = max(worst, err)
        if err > tol:
            failures += 1
    return CheckResult("qp-projection-oracle", failures == 0,
                       f"{failures} failures, worst gap {worst:.2e} over {problems} problems")


def check_margin_feasibility(instances: int = 100, seed: int = 0, margin: float = 0.2,
                             slack: float = 1e-6, num_classes: int = 10,
                             feature_dim: int = 32, **_) -> CheckResult:
    """Optimal projections satisfy every ordering row with the full margin."""
    rng = np.random.default_rng(seed)
    cfg = SolverConfig()
    failures = 0
    worst = np.inf
    for _ in range(instances):
        head_w = rng.standard_normal((num_classes, feature_dim))
        head_b = rng.standard_normal(num_classes)
        feat = rng.standard_normal(feature_dim)
        tl = _random_target_list(rng, num_classes)
        order = constraints.build_order_matrix(tl)
        prob = constraints.build_qp(order, head_w, head_b, feat, margin)
        sol = solve(prob, cfg)
        if sol.status != SolverStatus.OPTIMAL:
            failures += 1
            continue
        sep = order.rows @ (head_w @ sol.z + head_b)
        worst = min(worst, float(sep.min()))
        if sep.min() < margin - slack:
            failures += 1
        if not constraints.check_order(head_w @ sol.z + head_b, tl):
            failures += 1
    return CheckResult("margin-feasibility", failures == 0,
                       f"{failures} failures, weakest separation {worst:.6f} (margin {margin})")


def _fd_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy(); hi.flat[i] += eps
        lo = x.copy(); lo.flat[i] -= eps
        g.flat[i] = (f(hi) - f(lo)) / (2.0 * eps)
    return g


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.abs(a).max()), float(np.abs(b).max()), 1e-10)
    return float(np.abs(a - b).max()) / denom


def _random_attack_state(rng, model):
    """A perturbed input away from ReLU kinks, logit ties, and zero residuals."""
    for _ in range(100):
        x = rng.uniform(0.1, 0.9, model.input_dim)
        delta = 0.05 * rng.standard_normal(model.input_dim)
        w0, b0, _ = model.layers[0]
        pre = w0 @ (x + delta) + b0
        if np.abs(pre).min() < 1e-3:
            continue
        _, logits, _ = forward(model, x + delta)
        gaps = np.diff(np.sort(logits.data))
        if gaps.size and np.abs(gaps).min() < 1e-3:
            continue
        return x, delta
    raise RuntimeError("could not sample a kink-free attack state")


def check_gradients(states: int = 20, seed: int = 0, tol: float = 1e-4, **_) -> CheckResult:
    """Backprop gradients of the three attack losses vs central differences."""
    rng = np.random.default_rng(seed)
    model = init_model(input_dim=16, hidden=(12,), feature_dim=8, num_classes=6, seed=3)
    cfg = SolverConfig()
    worst = 0.0
    failures = 0
    for _ in range(states):
        # redraw until the latent residual is away from the norm kink
        for _ in range(100):
            x, delta = _random_attack_state(rng, model)
            tl = _random_target_list(rng, model.num_classes, k=int(rng.integers(1, 4)))
            base_feat, _, _ = forward(model, x + delta)
            order = constraints.build_order_matrix(tl)
            prob = constraints.build_qp(order, model.head_w, model.head_b, base_feat.data, 0.2)
            target = solve(prob, cfg).z  # frozen latent target
            if np.sqrt(np.sum((target - base_feat.data) ** 2)) > 1e-2:
                break
        else:
            raise RuntimeError("could not sample a non-degenerate latent residual")
        dist = ad_target_distribution(tl)
        weight = 5.0

        def latent_val(d):
            feat, _, _ = forward(model, x + d)
            r = target - feat.data
            return weight * float(np.sqrt(r @ r)) + float(np.sqrt(d @ d))

        def latent_grad(d):
            dt = Tensor(d, requires_grad=True)
            feat, _, _ = forward(model, add(dt, Tensor(x)))
            loss = add(scale(l2_norm(sub(Tensor(target), feat)), weight), l2_norm(dt))
            backward(loss)
            return dt.grad.copy()

        def cw_val(d):
            _, logits, _ = forward(model, x + d)
            return float(cw_topk_loss(logits, tl).data)

        def cw_grad(d):
            dt = Tensor(d, requires_grad=True)
            _, logits, _ = forward(model, add(dt, Tensor(x)))
            backward(cw_topk_loss(logits, tl))
            return dt.grad.copy() if dt.grad is not None else np.zeros_like(d)

        def ad_val(d):
            _, logits, _ = forward(model, x + d)
            return float(ad_loss(logits, dist).data)

        def ad_grad(d):
            dt = Tensor(d, requires_grad=True)
            _, logits, _ = forward(model, add(dt, Tensor(x)))
            backward(ad_loss(logits, dist))
            return dt.grad.copy()

        for val, grad in ((latent_val, latent_grad), (cw_val, cw_grad), (ad_val, ad_grad)):
            err = _rel_err(grad(delta), _fd_grad(val, delta))
            worst = max(worst, err)
            if err > tol:
                failures += 1
    return CheckResult("gradient-checks", failures == 0,
                       f"{failures} failures, worst relative error {worst:.2e} over {states} states")


def check_cw_zero_loss(draws_per_case: int = 200, seed: int = 0, **_) -> CheckResult:
    """Hinge loss is zero exactly when the non-strict ordering condition holds."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    total = 0
    for c in range(2, 6):
        for k in range(1, c):
            for i in range(draws_per_case):
                gt_pool = list(range(c))
                gt = int(rng.integers(c))
                pool = [v for v in gt_pool if v != gt]
                t = tuple(int(v) for v in rng.permutation(pool)[:k])
                tl = constraints.TargetList(t, gt, c)
                if i % 3 == 0:
                    logits = _ordered_logits_for(tl, rng, strict=True)
                elif i % 3 == 1:
                    logits = _ordered_logits_for(tl, rng, strict=False)
                else:
                    logits = np.round(rng.standard_normal(c), 1)  # ties likely
                loss = float(cw_topk_loss(Tensor(logits), tl).data)
                nonstrict = all(logits[t[j]] >= logits[t[j + 1]] for j in range(k - 1))
                rest = [v for v in range(c) if v not in t]
                if rest:
                    nonstrict = nonstrict and logits[t[-1]] >= max(logits[v] for v in rest)
                if (loss == 0.0) != nonstrict:
                    mismatches += 1
                total += 1
    return CheckResult("cw-zero-loss", mismatches == 0,
                       f"{mismatches} mismatches in {total} cases")


CHECKS = [
    check_order_matrix_golden,
    check_order_equivalence,
    check_qp_kkt,
    check_projection_oracle,
    check_margin_feasibility,
    check_gradients,
    check_cw_zero_loss,
]


def run_checks(**overrides) -> list[CheckResult]:
    results = []
    for fn in CHECKS:
        try:
            results.append(fn(**overrides))
        except Exception as exc:  # a crash is a failure, not an abort
            name = fn.__name__.replace("check_", "").replace("_", "-")
            results.append(CheckResult(name, False, f"raised {type(exc).__name__}: {exc}"))
    return results
