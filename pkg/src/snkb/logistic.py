"""Ridge-regularised kernel logistic regression in representer form.

The estimator minimises ``sum_i c_i * loss(f(A_i), Y_i) + rho * ||f||^2`` with
``f = sum_j alpha_j k(A_j, .)``.  Points may carry multiplicities ``c_i``; a
point observed ``c`` times with responses ``Y_1..Y_c`` is equivalent to one
point with weight ``c`` and the mean response, because the loss is affine in
the response.

The curvature operator used for the confidence ellipsoids is
``H = sum_j V(f(A_j)) phi(A_j) phi(A_j)^T + rho I``, for which the Woodbury
identity gives ``||H^{-1/2} phi(a)|| = sigma(a) / sqrt(rho)`` with
``sigma^2(a) = k(a,a) - k_n(a)^T (rho W^{-1} + K)^{-1} k_n(a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import expit

from .kernels import GramState, kernel_diag, kernel_matrix

WEIGHT_FLOOR = 1e-300
ARMIJO_C = 1e-4
MAX_NEWTON_ITER = 100
MAX_BACKTRACK = 60


class FitError(RuntimeError):
    """Raised when the Newton solver fails to reach its gradient tolerance."""

    def __init__(self, message: str, grad_norm: float = float("nan")):
        super().__init__(message)
        self.grad_norm = grad_norm


def link_mu(u):
    """Logistic link ``1 / (1 + exp(-u))``."""
    out = expit(u)
    return float(out) if np.ndim(out) == 0 else out


def variance_fn(u):
    """Bernoulli variance ``mu(u) (1 - mu(u))``, floored at 1e-300."""
    # the rounded product can land one ulp above 1/4 near u = 0
    out = np.clip(expit(u) * expit(-np.asarray(u, dtype=float)), WEIGHT_FLOOR, 0.25)
    return float(out) if np.ndim(out) == 0 else out


def logistic_loss(u, y):
    """Cross-entropy loss, evaluated as ``softplus(u) - y u``."""
    y_arr = np.asarray(y, dtype=float)
    if np.any((y_arr < 0) | (y_arr > 1)) or np.any(np.isnan(y_arr)):
        raise ValueError("responses must lie in [0, 1]")
    out = np.logaddexp(0.0, u) - y_arr * np.asarray(u, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class DualLogisticModel:
    gram: GramState
    responses: np.ndarray
    counts: np.ndarray
    alpha: np.ndarray
    fitted: np.ndarray
    fitted_means: np.ndarray
    weights: np.ndarray
    rho: float
    converged: bool
    grad_norm: float
    n_iter: int
    _chol: Optional[np.ndarray] = None

    @property
    def n_obs(self) -> float:
        return float(np.sum(self.counts))

    @property
    def spec(self):
        return self.gram.spec


def _dual_objective(K, alpha, c, ybar, rho):
    u = K @ alpha
    return float(np.sum(c * (np.logaddexp(0.0, u) - ybar * u)) + rho * alpha @ u)


def dual_gradient(K, alpha, c, ybar, rho):
    """Gradient of the dual objective, ``K (c (mu(K alpha) - ybar) + 2 rho alpha)``."""
    u = K @ alpha
    return K @ (c * (expit(u) - ybar) + 2.0 * rho * alpha)


def _variance_chol(K, sw, rho):
    # (rho W^-1 + K)^-1 = sqrt(W) (rho I + sqrt(W) K sqrt(W))^-1 sqrt(W); the inner matrix has spectrum >= rho
    n = K.shape[0]
    B = rho * np.eye(n) + sw[:, None] * K * sw[None, :]
    return np.linalg.cholesky(B)


def fit(
    gram: GramState,
    responses,
    rho: float,
    counts=None,
    alpha0=None,
    max_iter: int = MAX_NEWTON_ITER,
) -> DualLogisticModel:
    """Newton's method with Armijo backtracking on the representer coefficients.

    ``counts`` gives per-point multiplicities (default all ones), in which case
    ``responses`` are the per-point mean responses.  ``alpha0`` warm-starts the
    solve.  Raises ``FitError`` if the gradient tolerance
    ``1e-10 * max(1, n_obs)`` is not met within ``max_iter`` iterations.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    n = gram.n
    ybar = np.asarray(responses, dtype=float).reshape(-1)
    if ybar.shape[0] != n:
        raise ValueError(f"expected {n} responses, got {ybar.shape[0]}")
    if np.any(np.isnan(ybar)) or np.any((ybar < 0) | (ybar > 1)):
        raise ValueError("responses must lie in [0, 1]")
    c = np.ones(n) if counts is None else np.asarray(counts, dtype=float).reshape(-1)
    if c.shape[0] != n or np.any(c <= 0):
        raise ValueError("counts must be positive, one per point")
    K = gram.K
    tol = 1e-10 * max(1.0, float(np.sum(c)))

    alpha = np.zeros(n) if alpha0 is None else np.array(alpha0, dtype=float).reshape(-1)
    if alpha.shape[0] != n:
        raise ValueError("alpha0 has the wrong length")

    F = _dual_objective(K, alpha, c, ybar, rho)
    it = 0
    converged = n == 0
    gnorm = 0.0
    while not converged:
        u = K @ alpha
        g = c * (expit(u) - ybar) + 2.0 * rho * alpha
        grad = K @ g
        gnorm = float(np.linalg.norm(grad))
        if not math.isfinite(gnorm) or not math.isfinite(F):
            raise FitError("NaN encountered in the dual objective", gnorm)
        if gnorm <= tol:
            converged = True
            break
        if it >= max_iter:
            raise FitError(
                f"Newton did not converge in {max_iter} iterations (gradient norm {gnorm:.3e})",
                gnorm,
            )
        # Hessian is K (D K + 2 rho I); the reduced system gives the same step without inverting K
        D = c * expit(u) * expit(-u)
        step = -np.linalg.solve(D[:, None] * K + 2.0 * rho * np.eye(n), g)
        slope = float(grad @ step)
        t = 1.0
        slack = 1e-14 * (1.0 + abs(F))
        for _ in range(MAX_BACKTRACK):
            cand = alpha + t * step
            F_new = _dual_objective(K, cand, c, ybar, rho)
            if F_new <= F + ARMIJO_C * t * slope + slack:
                break
            t *= 0.5
        alpha, F = cand, F_new
        it += 1

    u = K @ alpha
    means = expit(u)
    weights = variance_fn(u) if n else np.zeros(0)
    chol = _variance_chol(K, np.sqrt(c * weights), rho) if n else None
    return DualLogisticModel(
        gram=gram,
        responses=ybar,
        counts=c,
        alpha=alpha,
        fitted=u,
        fitted_means=means,
        weights=weights,
        rho=float(rho),
        converged=converged,
        grad_norm=gnorm,
        n_iter=it,
        _chol=chol,
    )


def predict_mean_batch(model: DualLogisticModel, A) -> np.ndarray:
    if model.gram.n == 0:
        return np.zeros(np.atleast_2d(np.asarray(A, dtype=float)).shape[0])
    Kx = kernel_matrix(model.spec, A, model.gram.points)
    return Kx @ model.alpha


def predict_mean(model: DualLogisticModel, a) -> float:
    """Representer prediction ``k_n(a)^T alpha``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (model.spec.input_dim,):
        raise ValueError(f"dimension mismatch: expected ({model.spec.input_dim},), got {a.shape}")
    return float(predict_mean_batch(model, a[None, :])[0])


def predictive_variance_batch(model: DualLogisticModel, A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    kaa = kernel_diag(model.spec, A)
    if model.gram.n == 0:
        return kaa
    Kx = kernel_matrix(model.spec, A, model.gram.points)
    sw = np.sqrt(model.counts * model.weights)
    v = solve_triangular(model._chol, (Kx * sw[None, :]).T, lower=True)
    return np.clip(kaa - np.sum(v * v, axis=0), 0.0, None)


def predictive_variance(model: DualLogisticModel, a) -> float:
    a = np.asarray(a, dtype=float)
    if a.shape != (model.spec.input_dim,):
        raise ValueError(f"dimension mismatch: expected ({model.spec.input_dim},), got {a.shape}")
    return float(predictive_variance_batch(model, a[None, :])[0])


def ellipsoid_scale_batch(model: DualLogisticModel, A) -> np.ndarray:
    """``||H^{-1/2} phi(a)||`` for each row of ``A``."""
    return np.sqrt(predictive_variance_batch(model, A) / model.rho)


def confidence_band_batch(model: DualLogisticModel, A, width: float):
    if not width >= 0:
        raise ValueError(f"width must be nonnegative, got {width}")
    mean = predict_mean_batch(model, A)
    half = width * ellipsoid_scale_batch(model, A)
    return mean - half, mean + half


def confidence_band(model: DualLogisticModel, a, width: float):
    """Pointwise band ``f(a) -/+ width * sigma(a) / sqrt(rho)``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (model.spec.input_dim,):
        raise ValueError(f"dimension mismatch: expected ({model.spec.input_dim},), got {a.shape}")
    lo, hi = confidence_band_batch(model, a[None, :], width)
    return float(lo[0]), float(hi[0])


@dataclass(frozen=True)
class PrimalReferenceModel:
    """Explicit finite-dimensional fit used to cross-check the dual solver."""

    features: np.ndarray
    responses: np.ndarray
    rho: float
    weight: np.ndarray
    H_hat: np.ndarray
    converged: bool
    grad_norm: float

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def hessian_at(self, f) -> np.ndarray:
        X = self.features
        w = variance_fn(X @ np.asarray(f, dtype=float)) if X.shape[0] else np.zeros(0)
        return (X.T * w) @ X + self.rho * np.eye(self.dim)

    def H_star(self, f_star) -> np.ndarray:
        return self.hessian_at(f_star)

    def predict(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.weight

    @staticmethod
    def norm(v, H) -> float:
        """``sqrt(v^T H v)``."""
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ H @ v), 0.0))

    @staticmethod
    def inv_norm(v, H) -> float:
        """``sqrt(v^T H^{-1} v)``, i.e. ``||H^{-1/2} v||``."""
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ cho_solve(cho_factor(H), v)), 0.0))


def primal_reference_fit(
    features, responses, rho: float, f0=None, max_iter: int = MAX_NEWTON_ITER
) -> PrimalReferenceModel:
    """Full-Newton solve of the primal problem; ``features`` has one row per observation."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(responses, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with one response per row")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("responses must lie in [0, 1]")
    n, d = X.shape
    f = np.zeros(d) if f0 is None else np.array(f0, dtype=float).reshape(d)
    gnorm = 0.0
    converged = False

    def obj(f):
        u = X @ f
        return float(np.sum(np.logaddexp(0.0, u) - y * u) + rho * f @ f)

    F = obj(f)
    for _ in range(max_iter + 1):
        u = X @ f
        grad = X.T @ (expit(u) - y) + 2.0 * rho * f
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= 1e-10:
            converged = True
            break
        D = expit(u) * expit(-u)
        H = (X.T * D) @ X + 2.0 * rho * np.eye(d)
        step = -np.linalg.solve(H, grad)
        slope = float(grad @ step)
        t = 1.0
        for _ in range(MAX_BACKTRACK):
            F_new = obj(f + t * step)
            if F_new <= F + ARMIJO_C * t * slope + 1e-14 * (1.0 + abs(F)):
                break
            t *= 0.5
        f, F = f + t * step, F_new
    if not converged:
        raise FitError(f"primal Newton did not converge (gradient norm {gnorm:.3e})", gnorm)
    w = variance_fn(X @ f) if n else np.zeros(0)
    H_hat = (X.T * w) @ X + rho * np.eye(d)
    return PrimalReferenceModel(X, y, float(rho), f, H_hat, converged, gnorm)
