"""Euler integrals of Gaussian random fields on cubical grids.

Modules: :mod:`covariance` (models, Lambda blocks, decorrelation, tameness),
:mod:`fieldgen` (circulant-embedding synthesis), :mod:`euler` (EC curves,
upper Euler integrals, critical points), :mod:`chaos` (Hermite coefficients,
Mehler sums, variance series, mean value), :mod:`experiments` (Monte Carlo),
:mod:`targets` (target counting) and :mod:`cli`.
"""
from ._accel import USE_NUMBA
from .covariance import GaussianCovariance, ExponentialCovariance, lambda_blocks, corr_matrix_K, tameness_report
from .fieldgen import GridSpec, FieldGrid, sample_field
from .euler import ec_curve, upper_euler_integral, euler_integral, classify_critical_points, morse_euler_integral
from .chaos import mean_euler_integral, truncated_variance, chaos_coefficient, mehler_expectation

__version__ = "0.1.0"
