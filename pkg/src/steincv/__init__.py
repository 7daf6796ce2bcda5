"""Stein control variates fitted by empirical spectral variance minimisation."""

from .errors import (ConfigurationError, IngestionError, NumericError, RangeError,
                     SamplerDivergenceError, StageError, SteinCVError,
                     UnsupportedActivationError)
from .esvm import (EsvmReport, OptimizerConfig, TargetFunctional, esvm_loss, evaluate,
                   train)
from .neural import MultilayerPerceptron, init_mlp
from .samplers import Chain, SamplerConfig, generate_chain, generate_test_chains
from .specvar import LagWindow, SpectralVarianceEstimator, spectral_variance
from .stein import PolynomialPhi, stein_apply
from .targets import make_target

__version__ = "0.1.0"
