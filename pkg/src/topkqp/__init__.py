"""Ordered top-K targeted attacks via latent-space QP projection.

Library layout:

* ``tensor``      reverse-mode autodiff over float64 numpy arrays
* ``nn``          toy classifier, Adam, dataset generation, checkpoints
* ``qp``          dense interior-point QP solver + active-set oracle
* ``constraints`` target lists, ordering sign matrix, projection QP
* ``losses``      CW top-K hinge and adversarial-distillation KL
* ``attacks``     the three attack loops and budget handling
* ``harness``     evaluation protocol, aggregation, CSV/JSON output
* ``report``      matplotlib figures from finished runs
* ``cli``         the ``topkqp`` command
"""

from .attacks import AttackConfig, AttackResult, run_attack
from .constraints import OrderMatrix, TargetList, build_order_matrix, build_qp, check_order
from .harness import ExperimentConfig, MetricsRow, TradeoffPoint, run_protocol
from .losses import AdTargetDistribution, ad_loss, ad_target_distribution, cw_topk_loss
from .nn import Adam, Dataset, Model, forward, make_blobs, train_toy
from .qp import QPProblem, QPSolution, SolverConfig, SolverStatus, kkt_residuals, solve
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "run_attack",
    "OrderMatrix", "TargetList", "build_order_matrix", "build_qp", "check_order",
    "ExperimentConfig", "MetricsRow", "TradeoffPoint", "run_protocol",
    "AdTargetDistribution", "ad_loss", "ad_target_distribution", "cw_topk_loss",
    "Adam", "Dataset", "Model", "forward", "make_blobs", "train_toy",
    "QPProblem", "QPSolution", "SolverConfig", "SolverStatus", "kkt_residuals", "solve",
    "Tensor", "backward",
    "__version__",
]
