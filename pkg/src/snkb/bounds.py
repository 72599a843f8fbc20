"""Closed-form confidence radii, widths and the regret-bound curve.

All logarithms are natural.  Failure budgets: the fixed-rho Bernstein radius
and the logistic width hold with probability ``1 - 2 e^{-y}``, the Hoeffding
radius with ``1 - e^{-y}`` and the stitched radius with
``1 - (pi^2 / 6) e^{-y}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import GramState, info_gain_from_eigs

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class ConfidenceConfig:
    rho: float
    y: float
    b: float

    def __post_init__(self):
        for name in ("rho", "y", "b"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class StitchLevel:
    """Level ``h`` of the doubling schedule, ``rho_h = 2^(h-1)``."""

    h: int
    y: float

    def __post_init__(self):
        if int(self.h) != self.h or self.h < 1:
            raise ValueError(f"stitch level must be a positive integer, got {self.h}")

    @property
    def rho(self) -> float:
        return float(2.0 ** (self.h - 1))

    @property
    def y_h(self) -> float:
        return self.y + 2.0 * math.log(self.h)


def _nonneg(**kw):
    for name, v in kw.items():
        if not v >= 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")


def _pos(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


def beta_fixed(rho: float, y: float, gamma: float) -> float:
    """Bernstein radius at fixed ``rho`` for information gain ``gamma``."""
    _pos(rho=rho)
    _nonneg(y=y, gamma=gamma)
    return (
        math.sqrt(3.0 * rho) / 2.0
        + (2.0 * SQRT3 / math.sqrt(rho)) * (9.0 * gamma + y)
        + math.sqrt(6.0 * (gamma + y))
    )


def hoeffding_radius(rho: float, y: float, gamma: float) -> float:
    # rho only enters through gamma; kept in the signature for symmetry with beta_fixed
    _pos(rho=rho)
    _nonneg(y=y, gamma=gamma)
    return math.sqrt(2.0 * (gamma + y))


def iota(n: int) -> float:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n == 1:
        return 1.0
    return max(1.0, math.log(math.log(n)))


def iota_prime(n: int) -> float:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 2.0 * math.log(max(math.log(2.0 * n * math.log(2.0)) / math.log(2.0), 1.0))


def max_stitch_level(n: int) -> float:
    """Upper bound on the stitched level after ``n`` unit-ball observations."""
    if n < 1:
        return 1.0
    return max(math.log(2.0 * n * math.log(2.0)) / math.log(2.0), 1.0)


def stitch_level_from_eigs(eigs: np.ndarray, y: float) -> StitchLevel:
    """Minimal ``h`` with ``2^(h-1) >= gamma(V / 2^(h-1))``."""
    h = 1
    while 2.0 ** (h - 1) < info_gain_from_eigs(eigs, 2.0 ** (h - 1)):
        h += 1
    return StitchLevel(h, y)


def stitched_radius(state: GramState, y: float):
    """Anytime Bernstein radius from the doubling schedule.

    Returns ``(radius, level, rho_h)`` where the radius is
    ``beta_fixed(rho_h, y + 2 log h, gamma(rho_h))``.
    """
    _pos(y=y)
    eigs = state.eigenvalues()
    level = stitch_level_from_eigs(eigs, y)
    gamma = info_gain_from_eigs(eigs, level.rho)
    return beta_fixed(level.rho, level.y_h, gamma), level, level.rho


def omega(rho: float, y: float, gamma: float, b: float) -> float:
    """Width of the logistic-regression confidence ellipsoid."""
    _pos(rho=rho, y=y, b=b)
    _nonneg(gamma=gamma)
    u = beta_fixed(rho, y, gamma) + b * math.sqrt(rho)
    return u * (5.0 + 2.0 * (u / math.sqrt(rho)) ** 3)


def regret_bound_curve(n: int, v_star: float, kappa_star: float, omega_n: float, gamma_n: float) -> float:
    """Regret bound shape, modulo a universal constant (taken to be 1)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < v_star <= 0.25:
        raise ValueError(f"v_star must lie in (0, 1/4], got {v_star}")
    if not kappa_star >= 4.0:
        raise ValueError(f"kappa_star must be >= 4, got {kappa_star}")
    _pos(omega_n=omega_n)
    _nonneg(gamma_n=gamma_n)
    return math.sqrt(v_star * n * omega_n * gamma_n) + (1.0 + kappa_star) * omega_n * gamma_n


def budget_bernstein(y: float) -> float:
    return 2.0 * math.exp(-y)


def budget_hoeffding(y: float) -> float:
    return math.exp(-y)


def budget_stitched(y: float) -> float:
    return math.pi**2 / 6.0 * math.exp(-y)
