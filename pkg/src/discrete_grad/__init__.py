"""Decoupled straight-through Gumbel-Softmax estimators with exact-gradient checks."""
from . import autodiff, data, estimators, models, oracle, training
from .autodiff import Tensor, backward, straight_through
from .estimators import EstimatorConfig, Schedule, estimate, hard_sample, relax, sample_gumbel, schedule_value

__version__ = "0.1.0"
