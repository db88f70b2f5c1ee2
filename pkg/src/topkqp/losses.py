"""Attack objectives on the logit vector.

Baseline losses for ordered top-K attacks: the extended Carlini-Wagner
hinge (sums, for each target prefix, the gap between the strongest
non-prefix logit and the weakest prefix logit) and an adversarial
distillation objective (KL between the model's softmax and a synthetic
strictly-ordered target distribution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import TargetList
from .tensor import Tensor, add, gather, relu, softmax_kl, sub, vec_max, vec_min

__all__ = [
    "cw_topk_loss",
    "AdTargetDistribution",
    "ad_target_distribution",
    "ad_loss",
]


def cw_topk_loss(logits: Tensor, tl: TargetList) -> Tensor:
    """Sum over prefixes i=1..K of max(0, max_{j not in prefix} l_j - min_{t in prefix} l_t).

    Zero exactly when the targets hold the top K slots in order, ties
    allowed. On ties the max/min subgradients flow to the first index.
    """
    t = tl.targets
    all_idx = np.arange(tl.num_classes)
    total = None
    for i in range(1, tl.k + 1):
        prefix = np.asarray(t[:i])
        others = all_idx[~np.isin(all_idx, prefix)]
        hinge = relu(sub(vec_max(gather(logits, others)), vec_min(gather(logits, prefix))))
        total = hinge if total is None else add(total, hinge)
    return total


@dataclass(frozen=True)
class AdTargetDistribution:
    """Synthetic label distribution: geometric masses on the targets
    (ratio ``decay``) scaled to 1 - complement_mass, uniform remainder."""

    probs: np.ndarray
    source: TargetList
    decay: float
    complement_mass: float


def ad_target_distribution(tl: TargetList, decay: float = 0.5,
                           complement_mass: float = 0.1) -> AdTargetDistribution:
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie in (0, 1)")
    if not 0.0 < complement_mass < 1.0:
        raise ValueError("complement_mass must lie in (0, 1)")
    c, k = tl.num_classes, tl.k
    raw = decay ** np.arange(k)
    target_mass = (1.0 - complement_mass) * raw / raw.sum()
    floor = complement_mass / (c - k)
    if target_mass[-1] <= floor:
        raise ValueError(
            f"weakest target mass {target_mass[-1]:.4g} does not exceed the "
            f"complement share {floor:.4g}; increase decay or lower complement_mass")
    probs = np.full(c, floor)
    probs[list(tl.targets)] = target_mass
    return AdTargetDistribution(probs=probs, source=tl, decay=decay,
                                complement_mass=complement_mass)


def ad_loss(logits: Tensor, dist: AdTargetDistribution) -> Tensor:
    """KL(softmax(logits) || dist.probs), evaluated in log space."""
    return softmax_kl(logits, dist.probs)
