"""Dense convex QP solver (Mehrotra predictor-corrector interior point).

Solves

    minimize    0.5 z' Q z + p' z
    subject to  G z <= h,  W z = b

for small dense problems (tens of variables, tens of rows). The per-step
linear algebra reduces the KKT system to a Cholesky solve in the primal
block plus a Schur complement for the equality multipliers; inequality
slacks/multipliers are eliminated analytically.

A brute-force active-set enumerator is included as an independent oracle
for small instances, along with a plain-text problem dump format.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

__all__ = [
    "QPProblem",
    "QPSolution",
    "SolverConfig",
    "SolverStatus",
    "QPNumericError",
    "solve",
    "solve_batch",
    "kkt_residuals",
    "brute_force_solve",
    "dump_problem",
    "load_problem",
]

# dual magnitude past this while primal infeasibility persists => infeasible
_DIVERGENCE_CAP = 1e8


class QPNumericError(RuntimeError):
    pass


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 50
    regularization: float = 1e-10

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.regularization < 0.0:
            raise ValueError("regularization must be nonnegative")


@dataclass
class QPProblem:
    Q: np.ndarray
    p: np.ndarray
    G: np.ndarray
    h: np.ndarray
    W: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        self.G = np.asarray(self.G, dtype=np.float64).reshape(-1, self.dim)
        self.h = np.asarray(self.h, dtype=np.float64)
        if self.W is not None:
            self.W = np.asarray(self.W, dtype=np.float64).reshape(-1, self.dim)
            self.b = np.asarray(self.b, dtype=np.float64)
        d = self.dim
        if self.Q.shape != (d, d):
            raise ValueError("Q must be square and match p")
        if np.abs(self.Q - self.Q.T).max() > 1e-12:
            raise ValueError("Q must be symmetric within 1e-12")
        if self.h.shape != (self.n_ineq,):
            raise ValueError("h length must match G rows")
        if self.W is not None and (self.b is None or self.b.shape != (self.n_eq,)):
            raise ValueError("b length must match W rows")
        if self.W is None and self.b is not None:
            raise ValueError("b given without W")

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.G.shape[0]

    @property
    def n_eq(self) -> int:
        return 0 if self.W is None else self.W.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.Q @ z + self.p @ z)


@dataclass
class QPSolution:
    z: np.ndarray
    ineq_mult: np.ndarray
    eq_mult: np.ndarray
    slacks: np.ndarray
    status: SolverStatus
    iterations: int
    kkt_residual: float
    gap_history: list[float] = field(default_factory=list)


def kkt_residuals(problem: QPProblem, solution: QPSolution):
    """(stationarity, primal, dual, complementarity), all inf-norms."""
    z, lam, nu = solution.z, solution.ineq_mult, solution.eq_mult

    def linf(v):
        return float(np.abs(v).max()) if v.size else 0.0

    stat = problem.Q @ z + problem.p
    if problem.n_ineq:
        stat = stat + problem.G.T @ lam
    if problem.n_eq:
        stat = stat + problem.W.T @ nu
    resid_ineq = problem.G @ z - problem.h if problem.n_ineq else np.zeros(0)
    primal = linf(np.maximum(resid_ineq, 0.0))
    if problem.n_eq:
        primal = max(primal, linf(problem.W @ z - problem.b))
    dual = linf(np.minimum(lam, 0.0))
    comp = linf(lam * (-resid_ineq)) if problem.n_ineq else 0.0
    return float(linf(stat)), primal, dual, comp


def _solve_equality_only(problem: QPProblem, config: SolverConfig) -> QPSolution:
    d, e = problem.dim, problem.n_eq
    qreg = problem.Q + config.regularization * np.eye(d)
    try:
        if e:
            kkt = np.block([[qreg, problem.W.T], [problem.W, np.zeros((e, e))]])
            rhs = np.concatenate([-problem.p, problem.b])
            sol = np.linalg.solve(kkt, rhs)
            z, nu = sol[:d], sol[d:]
        else:
            c = cho_factor(qreg)
            z = cho_solve(c, -problem.p)
            nu = np.zeros(0)
    except (LinAlgError, np.linalg.LinAlgError) as exc:
        raise QPNumericError(f"KKT factorization failed: {exc}") from exc
    sol = QPSolution(z=z, ineq_mult=np.zeros(0), eq_mult=nu, slacks=np.zeros(0),
                     status=SolverStatus.OPTIMAL, iterations=0, kkt_residual=0.0)
    sol.kkt_residual = max(kkt_residuals(problem, sol))
    if sol.kkt_residual > max(config.tol, 1e-6 * (1.0 + np.abs(problem.p).max())):
        raise QPNumericError("direct KKT solve left a large residual")
    return sol


def _max_step(s, ds, lam, dlam) -> float:
    """Largest alpha in (0, 1] keeping s and lam strictly positive-ish."""
    alpha = 1.0
    for v, dv in ((s, ds), (lam, dlam)):
        neg = dv < 0.0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-v[neg] / dv[neg])))
    return alpha


def solve(problem: QPProblem, config: SolverConfig | None = None) -> QPSolution:
    """Mehrotra predictor-corrector IPM; statuses optimal/infeasible/max_iter."""
    config = config or SolverConfig()
    blocks = [problem.Q, problem.p, problem.G, problem.h]
    if problem.n_eq:
        blocks += [problem.W, problem.b]
    if not all(np.all(np.isfinite(blk)) for blk in blocks):
        raise QPNumericError("non-finite problem data")
    d, m, e = problem.dim, problem.n_ineq, problem.n_eq
    if m == 0:
        return _solve_equality_only(problem, config)

    qreg = problem.Q + config.regularization * np.eye(d)
    G, h = problem.G, problem.h
    W = problem.W if e else np.zeros((0, d))
    b = problem.b if e else np.zeros(0)

    if e == 0:
        # exact shortcut: a feasible unconstrained minimizer is the optimum
        try:
            z_free = cho_solve(cho_factor(qreg), -problem.p)
        except (LinAlgError, np.linalg.LinAlgError):
            z_free = None
        if z_free is not None and np.all(G @ z_free <= h):
            sol = QPSolution(z=z_free, ineq_mult=np.zeros(m), eq_mult=np.zeros(0),
                             slacks=h - G @ z_free, status=SolverStatus.OPTIMAL,
                             iterations=0, kkt_residual=0.0)
            sol.kkt_residual = max(kkt_residuals(problem, sol))
            if sol.kkt_residual <= config.tol:
                return sol

    z = np.zeros(d)
    s = np.ones(m)
    lam = np.ones(m)
    nu = np.zeros(e)
    gap_history: list[float] = []
    status = SolverStatus.MAX_ITER
    iterations = config.max_iter
    best = None       # lowest max-residual iterate seen, as a fallback
    best_resid = np.inf
    best_it = 0

    for it in range(config.max_iter):
        # residuals use the raw Q; regularization only enters the factorization
        r_dual = problem.Q @ z + problem.p + G.T @ lam + (W.T @ nu if e else 0.0)
        r_pri = G @ z + s - h
        r_eq = W @ z - b
        mu = float(s @ lam) / m
        gap_history.append(mu)

        ineq_violation = np.maximum(G @ z - h, 0.0)
        stat_r = float(np.abs(r_dual).max())
        pri_r = max(float(np.abs(r_pri).max()), float(ineq_violation.max()),
                    float(np.abs(r_eq).max()) if e else 0.0)
        comp_r = float(np.abs(lam * (h - G @ z)).max())
        max_resid = max(stat_r, pri_r, comp_r)
        if max_resid < best_resid:
            best_resid = max_resid
            best = (z.copy(), s.copy(), lam.copy(), nu.copy())
            best_it = it
        if max_resid <= config.tol:
            status = SolverStatus.OPTIMAL
            iterations = it
            break
        dual_mag = max(float(np.abs(lam).max()), float(np.abs(nu).max()) if e else 0.0)
        if dual_mag > _DIVERGENCE_CAP and pri_r > config.tol:
            status = SolverStatus.INFEASIBLE
            iterations = it
            break
        if it - best_it > 8:
            iterations = it   # stalled: conditioning has hit float64 limits
            break

        sigma_diag = lam / s
        kmat = qreg + G.T @ (sigma_diag[:, None] * G)
        # near convergence sigma spans ~16 orders of magnitude and rounding
        # can push kmat indefinite; retry with a boosted diagonal
        chol = None
        kscale = float(np.abs(kmat.diagonal()).max())
        for boost in (0.0, 1e-14, 1e-12, 1e-10):
            try:
                chol = cho_factor(kmat + boost * kscale * np.eye(d) if boost else kmat)
                break
            except (LinAlgError, np.linalg.LinAlgError):
                continue
        if chol is None:
            iterations = it   # factorization dead: fall back to best iterate
            break
        if e:
            u_eq = cho_solve(chol, W.T)           # d x e
            schur = W @ u_eq
        else:
            u_eq = schur = None

        def refined_solve(rhs):
            u = cho_solve(chol, rhs)
            return u + cho_solve(chol, rhs - kmat @ u)

        def solve_kkt(rc):
            # eliminate (ds, dlam):  ds = -r_pri - G dz,
            # dlam = -rc/s - sigma*ds  =>  (Q + G' Sigma G) dz + W' dnu = rhs
            rhs = -r_dual + G.T @ (rc / s - sigma_diag * r_pri)
            u = refined_solve(rhs)
            if e:
                dnu = np.linalg.solve(schur, W @ u + r_eq)
                dz = u - u_eq @ dnu
            else:
                dnu = np.zeros(0)
                dz = u
            ds = -r_pri - G @ dz
            dlam = -rc / s - sigma_diag * ds
            return dz, dnu, ds, dlam

        # predictor (affine scaling)
        dz_a, dnu_a, ds_a, dlam_a = solve_kkt(lam * s)
        alpha_a = _max_step(s, ds_a, lam, dlam_a)
        mu_aff = float((s + alpha_a * ds_a) @ (lam + alpha_a * dlam_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0.0 else 0.0

        # corrector with centering
        dz, dnu, ds, dlam = solve_kkt(lam * s + ds_a * dlam_a - sigma * mu)
        alpha = min(1.0, 0.99 * _max_step(s, ds, lam, dlam))
        z += alpha * dz
        s += alpha * ds
        lam += alpha * dlam
        if e:
            nu += alpha * dnu
        if not np.all(np.isfinite(z)):
            raise QPNumericError(f"iterates went non-finite at iteration {it}")

    if status != SolverStatus.OPTIMAL and best is not None:
        z, s, lam, nu = best
        if status == SolverStatus.MAX_ITER:
            polished = _polish(problem, config, z, lam, nu)
            if polished is not None:
                z, s, lam, nu = polished
    sol = QPSolution(z=z, ineq_mult=lam, eq_mult=nu, slacks=s, status=status,
                     iterations=iterations, kkt_residual=0.0, gap_history=gap_history)
    sol.kkt_residual = max(kkt_residuals(problem, sol))
    if status != SolverStatus.OPTIMAL and sol.kkt_residual <= config.tol:
        sol.status = SolverStatus.OPTIMAL
    return sol


def _polish(problem: QPProblem, config: SolverConfig, z, lam, nu):
    """Re-solve on the active set the interior iterate identified.

    Conditioning limits the IPM to ~1e-9 residuals on nasty instances; one
    direct equality-KKT solve on {i : lam_i >= s_i} reaches machine
    precision when that guess is right. Returns None when it is not.
    """
    d, m, e = problem.dim, problem.n_ineq, problem.n_eq
    active = np.flatnonzero(lam >= np.maximum(problem.h - problem.G @ z, 0.0))
    r = active.size
    ga = problem.G[active]
    n_rows = d + r + e
    kkt = np.zeros((n_rows, n_rows))
    kkt[:d, :d] = problem.Q
    rhs = np.concatenate([-problem.p, problem.h[active],
                          problem.b if e else np.zeros(0)])
    if r:
        kkt[:d, d:d + r] = ga.T
        kkt[d:d + r, :d] = ga
    if e:
        kkt[:d, d + r:] = problem.W.T
        kkt[d + r:, :d] = problem.W
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    z2, mult, nu2 = sol[:d], sol[d:d + r], sol[d + r:]
    if r and mult.min() < -config.tol:
        return None
    resid = problem.G @ z2 - problem.h
    if m and resid.max() > config.tol:
        return None
    lam2 = np.zeros(m)
    lam2[active] = np.maximum(mult, 0.0)
    return z2, np.maximum(-resid, 0.0), lam2, nu2


def solve_batch(problems, config: SolverConfig | None = None) -> list:
    """Solve sequentially, preserving order.

    Per-problem failures are captured as the raised exception object in the
    corresponding slot rather than aborting the remaining problems.
    """
    out = []
    for prob in problems:
        try:
            out.append(solve(prob, config))
        except (QPNumericError, ValueError) as exc:
            out.append(exc)
    return out


# ---------------------------------------------------------------------------
# independent oracle: enumerate active sets


def brute_force_solve(problem: QPProblem, feas_tol: float = 1e-8) -> np.ndarray:
    """Global minimizer by trying every inequality active set.

    Exponential in the row count; intended for cross-checking the IPM on
    small instances (Q must be positive definite so the minimizer is
    unique). Raises if no candidate satisfies feasibility + sign checks.
    """
    d, m, e = problem.dim, problem.n_ineq, problem.n_eq
    best_obj, best_z = np.inf, None
    for r in range(m + 1):
        for active in itertools.combinations(range(m), r):
            ga = problem.G[list(active)]
            n_rows = r + e
            kkt = np.zeros((d + n_rows, d + n_rows))
            kkt[:d, :d] = problem.Q
            rhs = np.concatenate([-problem.p, problem.h[list(active)],
                                  problem.b if e else np.zeros(0)])
            if r:
                kkt[:d, d:d + r] = ga.T
                kkt[d:d + r, :d] = ga
            if e:
                kkt[:d, d + r:] = problem.W.T
                kkt[d + r:, :d] = problem.W
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, mult = sol[:d], sol[d:d + r]
            if m and np.any(problem.G @ z - problem.h > feas_tol):
                continue
            if r and np.any(mult < -feas_tol):
                continue
            obj = problem.objective(z)
            if obj < best_obj - 1e-12:
                best_obj, best_z = obj, z
    if best_z is None:
        raise QPNumericError("active-set enumeration found no KKT point")
    return best_z


# ---------------------------------------------------------------------------
# problem dump / load (decimal text; floats round-trip exactly via repr)


def _arr_out(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _arr_in(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def dump_problem(problem: QPProblem, path) -> None:
    doc = {
        "Q": _arr_out(problem.Q),
        "p": _arr_out(problem.p),
        "G": _arr_out(problem.G),
        "h": _arr_out(problem.h),
        "W": _arr_out(problem.W) if problem.n_eq else None,
        "b": _arr_out(problem.b) if problem.n_eq else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_problem(path) -> QPProblem:
    with open(path) as fh:
        doc = json.load(fh)
    return QPProblem(Q=_arr_in(doc["Q"]), p=_arr_in(doc["p"]), G=_arr_in(doc["G"]),
                     h=_arr_in(doc["h"]),
                     W=_arr_in(doc["W"]) if doc["W"] is not None else None,
                     b=_arr_in(doc["b"]) if doc["b"] is not None else None)
