"""
PDPM Lab - Python Components
============================
GANs with a pairwise diversity penalty, trained from scratch on 2D mixtures.

Components:
- autodiff: define-by-run reverse-mode tensors (second-order capable)
- similarity: normalized / scaled Gram matrices and the diversity penalty
- models, losses, optim, training: MLPs, objectives, Adam and the schedule
- synthetic_data, seeding: ring / grid mixtures and named RNG streams
- metrics: mode coverage, Frechet distance, collapse probe
- config, harness, plotting, cli: experiments on disk
"""

from .autodiff import Tensor, backward, finite_diff_check, no_grad
from .errors import (ConfigError, ContractError, DegenerateInputError, IncompleteComparison,
                     InsufficientDataError, LabError, NumericError, ShapeError, TrainingAborted)
from .similarity import diversity_penalty, dp_loss, raw_gram, scaled_gram
from .synthetic_data import MixtureSpec, make_grid, make_ring
from .training import TrainConfig, train

__version__ = "0.1.0"
