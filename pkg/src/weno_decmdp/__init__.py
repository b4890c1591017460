"""Interface-agent WENO flux reconstruction.

A second-order WENO finite-difference solver for 1D/2D hyperbolic
conservation laws, recast so that every cell interface is a small agent: the
agent observes the local split-flux stencils and emits the convex weights
that blend the sub-stencil reconstructions. A single shared network is
trained by differentiating entire rollouts (through time and through the
spatial coupling) with exact gradients, either on a scalar autodiff tape or
through a hand-written vectorized adjoint.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Var, backward, grad_check
from .config import Config, ConfigError, load_config_file, load_defaults
from .env import EpisodeConfig, MLPPolicy, WenoOracle, run_episode, solve_2d
from .physics import ConservedState1D, ConservedState2D, EquationSpec
from .policy import PolicyParams, init_params, load_checkpoint, save_checkpoint
from .training import EvalReport, TrainConfig, bptts_gradient, evaluate, train
from .weno import BlowUpError, Trajectory, weno_solve, weno_step

__all__ = [
    "__version__",
    "Tape",
    "Var",
    "backward",
    "grad_check",
    "Config",
    "ConfigError",
    "load_config_file",
    "load_defaults",
    "EpisodeConfig",
    "MLPPolicy",
    "WenoOracle",
    "run_episode",
    "solve_2d",
    "ConservedState1D",
    "ConservedState2D",
    "EquationSpec",
    "PolicyParams",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "EvalReport",
    "TrainConfig",
    "bptts_gradient",
    "evaluate",
    "train",
    "BlowUpError",
    "Trajectory",
    "weno_solve",
    "weno_step",
]
