"""Smoothing kernels, rule-of-thumb bandwidths and reference densities."""

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ConfigError, DegeneracyError

FAMILIES = {"gaussian": _accel.GAUSSIAN, "epanechnikov": _accel.EPANECHNIKOV}


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    order: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if self.order != 2:
            # the field is kept so higher orders can be added without an API change
            raise ConfigError("only second-order kernels are implemented")

    @property
    def code(self):
        return FAMILIES[self.family]


def kernel_eval(spec, u):
    """K(u) for scalar or array ``u``."""
    v = _accel.kernel_values(u, spec.code)
    return float(v) if np.ndim(v) == 0 else v


@dataclass(frozen=True)
class Bandwidths:
    h_z: float
    h_w: float

    def __post_init__(self):
        for name in ("h_z", "h_w"):
            h = getattr(self, name)
            if not (math.isfinite(h) and h > 0):
                raise ConfigError(f"{name} must be positive and finite, got {h}")

    def scaled(self, c):
        return Bandwidths(self.h_z * c, self.h_w * c)


@dataclass(frozen=True)
class WeightDensity:
    """Normal density with the given mean and variance."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ConfigError(f"variance must be positive, got {self.variance}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        v = np.exp(-0.5 * (t - self.mean) ** 2 / self.variance) / math.sqrt(2 * math.pi * self.variance)
        return float(v) if v.ndim == 0 else v


def _scalar_columns(d):
    if d.p != 1 or d.q != 1:
        raise ConfigError(f"the nonparametric path needs scalar Z and W, got p={d.p}, q={d.q}")
    return d.z[:, 0], d.w[:, 0]


def _sd(a, name):
    if a.size < 2:
        raise DegeneracyError(f"{name}: need at least two observations for a standard deviation")
    s = float(np.std(a, ddof=1))
    if not s > 0:
        raise DegeneracyError(f"{name} has zero sample variance")
    return s


def silverman_bandwidths(d):
    """h = sd * n^(-1/5) for Z and W, with the n-1 standard deviation."""
    z, w = _scalar_columns(d)
    factor = d.n ** -0.2
    return Bandwidths(_sd(z, "Z") * factor, _sd(w, "W") * factor)


def default_weights(d):
    """Normal(mean, 2 var) reference densities for Z (pi) and W (tau)."""
    z, w = _scalar_columns(d)
    pi = WeightDensity(float(z.mean()), 2 * _sd(z, "Z") ** 2)
    tau = WeightDensity(float(w.mean()), 2 * _sd(w, "W") ** 2)
    return pi, tau
