"""Ordered top-K target lists and the linear constraints they induce.

A target list fixes the desired descending order of the first K logits.
The full ordering condition compiles to C-1 pairwise rows: K-1 rows chain
consecutive targets, and C-K rows pin the last target above every
non-target class. Stacking the rows into a matrix M (one +1 and one -1
per row), the attack wants M @ logits >= margin elementwise; pulling the
logits back through the linear head turns that into inequality
constraints on the feature vector, giving a box-free projection QP.

Class indices are 0-based everywhere in code; the CLI boundary converts
from/to 1-based labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp import QPProblem

__all__ = [
    "TargetList",
    "OrderMatrix",
    "build_order_matrix",
    "build_qp",
    "check_order",
]


@dataclass(frozen=True)
class TargetList:
    """Distinct target classes in desired rank order, excluding the label."""

    targets: tuple[int, ...]
    ground_truth: int
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        c, k = self.num_classes, len(self.targets)
        if c < 2:
            raise ValueError("need at least two classes")
        if not 1 <= k <= c - 1:
            raise ValueError(f"K must be in [1, {c - 1}], got {k}")
        if len(set(self.targets)) != k:
            raise ValueError("targets must be distinct")
        if not all(0 <= t < c for t in self.targets):
            raise ValueError("target out of class range")
        if not 0 <= self.ground_truth < c:
            raise ValueError("ground truth out of class range")
        if self.ground_truth in self.targets:
            raise ValueError("ground truth may not be a target")

    @property
    def k(self) -> int:
        return len(self.targets)

    @classmethod
    def from_one_based(cls, targets, ground_truth: int, num_classes: int) -> "TargetList":
        return cls(tuple(t - 1 for t in targets), ground_truth - 1, num_classes)

    def to_one_based(self) -> tuple[tuple[int, ...], int]:
        return tuple(t + 1 for t in self.targets), self.ground_truth + 1


@dataclass(frozen=True)
class OrderMatrix:
    """(C-1) x C sign matrix encoding the ordering as M @ logits > 0."""

    rows: np.ndarray
    source: TargetList


def build_order_matrix(tl: TargetList) -> OrderMatrix:
    """Rows 0..K-2 chain consecutive targets; the rest dominate the
    complement, in ascending class index."""
    c, k, t = tl.num_classes, tl.k, tl.targets
    rows = np.zeros((c - 1, c))
    for i in range(k - 1):
        rows[i, t[i]] = 1.0
        rows[i, t[i + 1]] = -1.0
    complement = sorted(set(range(c)) - set(t))
    for r, j in enumerate(complement, start=k - 1):
        rows[r, t[-1]] = 1.0
        rows[r, j] = -1.0
    return OrderMatrix(rows=rows, source=tl)


def build_qp(order: OrderMatrix, head_w: np.ndarray, head_b: np.ndarray,
             feat: np.ndarray, margin: float = 0.2) -> QPProblem:
    """Projection QP: nearest feature vector whose logits obey the order.

        minimize ||zhat - feat||^2  s.t.  M (head_w zhat + head_b) >= margin

    in standard form Q = 2I, p = -2 feat, G = -M head_w, h = M head_b - margin.
    """
    if margin < 0.0:
        raise ValueError("margin must be nonnegative")
    head_w = np.asarray(head_w, dtype=np.float64)
    head_b = np.asarray(head_b, dtype=np.float64)
    feat = np.asarray(feat, dtype=np.float64)
    c = order.source.num_classes
    d = feat.shape[0]
    if head_w.shape != (c, d) or head_b.shape != (c,):
        raise ValueError("head shapes incompatible with order matrix / feature")
    return QPProblem(
        Q=2.0 * np.eye(d),
        p=-2.0 * feat,
        G=-order.rows @ head_w,
        h=order.rows @ head_b - margin,
    )


def check_order(logits: np.ndarray, tl: TargetList) -> bool:
    """Strict ordered top-K test, independent of the sign-matrix route.

    The descending argsort prefix must equal the target list, and every
    adjacent separation must be strict (any tie fails).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (tl.num_classes,):
        raise ValueError("logit length must equal the class count")
    k, t = tl.k, tl.targets
    ranked = np.argsort(-logits, kind="stable")
    if tuple(int(i) for i in ranked[:k]) != t:
        return False
    for i in range(k - 1):
        if not logits[t[i]] > logits[t[i + 1]]:
            return False
    if k < tl.num_classes and not logits[t[-1]] > logits[ranked[k]]:
        return False
    return True
