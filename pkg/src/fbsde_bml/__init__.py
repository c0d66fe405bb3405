"""Numerical solver for coupled forward-backward stochastic differential
equations: parameterize the backward solution with small networks, roll the
coupled forward surrogate, and minimize a measure-weighted backward residual
by stochastic gradient descent."""

__version__ = "0.1.0"

from .autodiff import Tensor, UnsupportedPrimitive, no_grad
from .errors import DivergenceError
from .net import (
    AdamState,
    NetworkArch,
    NetworkParams,
    adam_step,
    forward_u,
    forward_v,
    grad,
    init_network,
    load_checkpoint,
    save_checkpoint,
)
from .problems import (
    BUILTIN_NAMES,
    AnalyticTrial,
    FBSDEProblem,
    analytic_reference,
    builtin_problem,
    eval_coefficients,
)
from .rollout import LossSpec, RolloutBatch, bml, dist_mu, measure_weights, rollout
from .sampling import BrownianBatch, TimeGrid, derive_seed, make_grid, sample_brownian
from .trainer import (
    SolutionPaths,
    StepRecord,
    TrainConfig,
    TrainingRecord,
    export_solution,
    relative_error,
    train,
)

__all__ = [
    "__version__",
    "AdamState",
    "AnalyticTrial",
    "BrownianBatch",
    "BUILTIN_NAMES",
    "DivergenceError",
    "FBSDEProblem",
    "LossSpec",
    "NetworkArch",
    "NetworkParams",
    "RolloutBatch",
    "SolutionPaths",
    "StepRecord",
    "Tensor",
    "TimeGrid",
    "TrainConfig",
    "TrainingRecord",
    "UnsupportedPrimitive",
    "adam_step",
    "analytic_reference",
    "bml",
    "builtin_problem",
    "derive_seed",
    "dist_mu",
    "eval_coefficients",
    "export_solution",
    "forward_u",
    "forward_v",
    "grad",
    "init_network",
    "load_checkpoint",
    "make_grid",
    "measure_weights",
    "no_grad",
    "relative_error",
    "rollout",
    "sample_brownian",
    "save_checkpoint",
    "train",
]
