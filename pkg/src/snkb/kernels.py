"""Kernels, incrementally grown Gram matrices and spectral quantities.

Information gain is always computed from the eigenvalues of a finite Gram
matrix: ``0.5 * sum(log(1 + lam / rho))``.  The same spectrum is shared by
``sum_j x_j x_j^T`` when the kernel is linear, so no operator is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

LINEAR_NORM_TOL = 1e-12
PSD_TOL = 1e-8
RHO_STAR_XTOL = 1e-12


class KernelFamily(str, Enum):
    LINEAR = "linear"
    RBF = "gaussian-rbf"
    MATERN52 = "matern-5/2"


@dataclass(frozen=True)
class KernelSpec:
    """A kernel with unit-bounded diagonal, ``k(a, a) <= 1``.

    ``lengthscale`` is ignored by the linear family, which instead requires
    its inputs to lie in the closed unit ball.
    """

    family: KernelFamily
    input_dim: int
    lengthscale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise ValueError(f"input_dim must be a positive integer, got {self.input_dim}")
        if not (self.lengthscale > 0 and math.isfinite(self.lengthscale)):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")

    @classmethod
    def linear(cls, input_dim: int) -> "KernelSpec":
        return cls(KernelFamily.LINEAR, input_dim)

    @classmethod
    def rbf(cls, input_dim: int, lengthscale: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.RBF, input_dim, lengthscale)

    @classmethod
    def matern52(cls, input_dim: int, lengthscale: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.MATERN52, input_dim, lengthscale)


def _as_points(spec: KernelSpec, x) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, spec.input_dim) if pts.size else pts.reshape(0, spec.input_dim)
    if pts.ndim != 2 or pts.shape[1] != spec.input_dim:
        raise ValueError(
            f"expected points of dimension {spec.input_dim}, got array of shape {np.shape(x)}"
        )
    if spec.family is KernelFamily.LINEAR and pts.shape[0]:
        norms = np.sqrt(np.sum(pts * pts, axis=1))
        if np.any(norms > 1.0 + LINEAR_NORM_TOL):
            raise ValueError(
                f"linear kernel requires inputs in the unit ball, got norm {norms.max():.6g}"
            )
    return pts


def kernel_matrix(spec: KernelSpec, a, b) -> np.ndarray:
    """Cross-kernel matrix ``K[i, j] = k(a_i, b_j)``.

    Every entry is computed elementwise from its own pair of inputs, so a
    Gram matrix built in one shot matches one built row by row exactly.
    """
    A = _as_points(spec, a)
    B = _as_points(spec, b)
    if spec.family is KernelFamily.LINEAR:
        return np.sum(A[:, None, :] * B[None, :, :], axis=-1)
    diff = A[:, None, :] - B[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    ell = spec.lengthscale
    if spec.family is KernelFamily.RBF:
        return np.exp(-sq / (2.0 * ell * ell))
    r = np.sqrt(sq) / ell
    s5r = math.sqrt(5.0) * r
    return (1.0 + s5r + 5.0 * r * r / 3.0) * np.exp(-s5r)


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (spec.input_dim,) or b.shape != (spec.input_dim,):
        raise ValueError(
            f"dimension mismatch: kernel expects {spec.input_dim}, got {a.shape} and {b.shape}"
        )
    return float(kernel_matrix(spec, a[None, :], b[None, :])[0, 0])


def kernel_diag(spec: KernelSpec, a) -> np.ndarray:
    A = _as_points(spec, a)
    if spec.family is KernelFamily.LINEAR:
        return np.sum(A * A, axis=1)
    return np.ones(A.shape[0])


@dataclass
class GramState:
    """Gram matrix over an ordered list of covariates.

    The eigenvalue cache is filled lazily and dropped whenever ``K`` changes.
    """

    spec: KernelSpec
    points: np.ndarray = None
    K: np.ndarray = None
    jitter: float = 0.0
    _eig_cache: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = self.spec.input_dim
        if self.points is None:
            self.points = np.zeros((0, d))
        self.points = _as_points(self.spec, self.points)
        if self.K is None:
            self.K = kernel_matrix(self.spec, self.points, self.points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Nonincreasing, clipped-at-zero spectrum of ``K``."""
        if self._eig_cache is None:
            self._eig_cache = psd_eigenvalues(self.K)
        return self._eig_cache


def gram_from_points(spec: KernelSpec, points) -> GramState:
    return GramState(spec, points)


def gram_append(state: GramState, point) -> GramState:
    """Return a new state with ``point`` appended; ``state`` is left untouched."""
    spec = state.spec
    p = np.asarray(point, dtype=float)
    if p.shape != (spec.input_dim,):
        raise ValueError(f"dimension mismatch: expected ({spec.input_dim},), got {p.shape}")
    p = _as_points(spec, p[None, :])
    n = state.n
    row = kernel_matrix(spec, p, state.points)[0] if n else np.zeros(0)
    K = np.empty((n + 1, n + 1))
    K[:n, :n] = state.K
    K[n, :n] = row
    K[:n, n] = row
    K[n, n] = kernel_matrix(spec, p, p)[0, 0]
    return GramState(spec, np.vstack([state.points, p]), K, state.jitter)


def psd_eigenvalues(M: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric PSD matrix, sorted nonincreasing.

    Small negative values from round-off are clipped to zero; anything below
    ``-1e-8 * max(1, lam_max)`` raises.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(0)
    lam = np.linalg.eigvalsh(M)[::-1]
    floor = -PSD_TOL * max(1.0, float(lam[0]))
    if lam[-1] < floor:
        raise np.linalg.LinAlgError(
            f"matrix is not positive semidefinite: eigenvalue {lam[-1]:.3e}"
        )
    return np.clip(lam, 0.0, None)


def weighted_eigenvalues(K: np.ndarray, counts: Sequence[float]) -> np.ndarray:
    """Spectrum of the Gram matrix with point ``i`` repeated ``counts[i]`` times.

    Repetition only changes the spectrum through ``C^{1/2} K C^{1/2}``.
    """
    c = np.sqrt(np.asarray(counts, dtype=float))
    return psd_eigenvalues(c[:, None] * K * c[None, :])


def info_gain_from_eigs(eigs: np.ndarray, rho: float) -> float:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return 0.5 * float(np.sum(np.log1p(np.asarray(eigs) / rho)))


def info_gain(state: GramState, rho: float) -> float:
    """``0.5 * log det(I + K / rho)``."""
    return info_gain_from_eigs(state.eigenvalues(), rho)


def rho_star_from_eigs(eigs: np.ndarray) -> float:
    g1 = info_gain_from_eigs(eigs, 1.0)
    if g1 <= 1.0:
        return 1.0
    # rho - gamma(rho) is strictly increasing, negative at 1 and >= 0 at gamma(1)
    return brentq(
        lambda r: r - info_gain_from_eigs(eigs, r), 1.0, g1, xtol=RHO_STAR_XTOL, rtol=4 * np.finfo(float).eps
    )


def rho_star(state: GramState) -> float:
    """Smallest ``rho >= 1`` with ``rho >= info_gain(state, rho)``."""
    return rho_star_from_eigs(state.eigenvalues())
