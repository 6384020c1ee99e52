"""Tests for homogeneous treatment effects in linear and nonparametric IV models."""

from .bootstrap import TestReport, WarpSpeedPool, bootstrap, warp_speed_pvalues
from .data import ColumnSpec, Dataset, load_csv, resample
from .diagnostics import IndependenceReport, chi_squared_independence, ks_two_sample
from .kernels import Bandwidths, KernelSpec, WeightDensity, default_weights, kernel_eval, silverman_bandwidths
from .linear import LinearFit, LinearTestConfig, linear_statistic, linear_test, tsls_fit
from .np_test import NpTestConfig, discrete_npiv_oracle, np_statistic, np_test
from .npiv import CvResult, NpivFit, build_matrices, cross_validate_lambda, npiv_fit, tikhonov_solve

__version__ = "0.1.0"
