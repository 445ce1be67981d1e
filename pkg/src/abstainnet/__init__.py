"""Reject-option binary classification with a double-sigmoid objective.

A small dense network emits a prediction score f(x) and a nonnegative
rejection bandwidth rho (shared scalar or instance-specific); the classifier
abstains whenever |f(x)| <= rho.  Training minimizes the smooth surrogate
2d sigma(yf - rho) + 2(1-d) sigma(yf + rho) for a rejection cost d in
(0, 0.5).  The package also ships the pointwise calibration oracle for that
surrogate, the excess-risk transform, a norm-based generalization-bound
calculator, and a reproducible experiment CLI.
"""

__version__ = "0.1.0"

from ._kernels import backend_name
from .losses import LossConfig, double_sigmoid_loss, zero_d_one_loss
from .network import AbstainNetwork, Decision, decide, forward, init_network
from .training import TrainConfig, evaluate, train

__all__ = [
    "AbstainNetwork", "Decision", "LossConfig", "TrainConfig", "backend_name",
    "decide", "double_sigmoid_loss", "evaluate", "forward", "init_network",
    "train", "zero_d_one_loss", "__version__",
]
