"""Low-rank Gaussian-copula process forecasting for multivariate time series."""

from gpcopula.errors import CholeskyError, ConfigError, DataError, NumericalError
from gpcopula.lowrank import (
    CapacitanceFactor,
    LowRankGaussian,
    capacitance,
    dense_oracle_logpdf,
    logdet_lowrank,
    logpdf_lowrank,
    mahalanobis_lowrank,
    sample_lowrank,
)

__version__ = "0.1.0"
