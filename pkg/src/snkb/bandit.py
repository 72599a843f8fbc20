"""Optimistic logistic bandit over a finite arm set.

The estimator is kept over the distinct arms pulled so far, each weighted by
its pull count, which is exactly the per-observation estimator since the
logistic loss is affine in the response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from . import bounds
from .kernels import GramState, KernelFamily, KernelSpec, gram_append, kernel_matrix, weighted_eigenvalues
from .kernels import info_gain_from_eigs, _as_points
from .logistic import DualLogisticModel, FitError, confidence_band_batch, fit, variance_fn

BETA_CONCENTRATION = 4.0


@dataclass(frozen=True)
class FStar:
    """Ground-truth function, either an explicit vector (linear kernel) or
    dual coefficients over anchor points."""

    spec: KernelSpec
    vector: Optional[np.ndarray] = None
    anchors: Optional[np.ndarray] = None
    coefs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.vector is not None:
            if self.spec.family is not KernelFamily.LINEAR:
                raise ValueError("an explicit f* vector needs the linear kernel")
            v = np.asarray(self.vector, dtype=float)
            if v.shape != (self.spec.input_dim,):
                raise ValueError("f* vector has the wrong dimension")
            object.__setattr__(self, "vector", v)
        else:
            if self.anchors is None or self.coefs is None:
                raise ValueError("f* needs either a vector or anchors and coefficients")
            A = _as_points(self.spec, self.anchors)
            c = np.asarray(self.coefs, dtype=float).reshape(-1)
            if c.shape[0] != A.shape[0]:
                raise ValueError("one coefficient per anchor required")
            object.__setattr__(self, "anchors", A)
            object.__setattr__(self, "coefs", c)

    def __call__(self, A) -> np.ndarray:
        A = _as_points(self.spec, A)
        if self.vector is not None:
            return A @ self.vector
        return kernel_matrix(self.spec, A, self.anchors) @ self.coefs

    @property
    def norm(self) -> float:
        if self.vector is not None:
            return float(np.linalg.norm(self.vector))
        K = kernel_matrix(self.spec, self.anchors, self.anchors)
        return math.sqrt(max(float(self.coefs @ K @ self.coefs), 0.0))


@dataclass(frozen=True)
class ArmSet:
    spec: KernelSpec
    arms: np.ndarray
    K: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        A = _as_points(self.spec, self.arms)
        if A.shape[0] == 0:
            raise ValueError("arm set is empty")
        object.__setattr__(self, "arms", A)
        object.__setattr__(self, "K", kernel_matrix(self.spec, A, A))

    def __len__(self):
        return self.arms.shape[0]


def instance_constants(f_star: FStar, arms: ArmSet):
    """``(v_star, kappa_star, best_arm)``; ties go to the lowest index."""
    if len(arms) == 0:
        raise ValueError("arm set is empty")
    u = f_star(arms.arms)
    best = int(np.argmax(u))
    return float(variance_fn(u[best])), float(np.max(1.0 / variance_fn(u))), best


def ucb_values(model: DualLogisticModel, arms: ArmSet, width: float) -> np.ndarray:
    return confidence_band_batch(model, arms.arms, width)[1]


def ucb_select(model: DualLogisticModel, arms: ArmSet, width: float) -> int:
    """Lowest-index arm maximising the upper band edge."""
    if len(arms) == 0:
        raise ValueError("arm set is empty")
    return int(np.argmax(ucb_values(model, arms, width)))


def environment_sample(f_star: FStar, arm, rng: np.random.Generator, mode: str = "bernoulli") -> float:
    """Reward with conditional mean ``mu(f*(arm))``."""
    m = float(expit(f_star(np.asarray(arm, dtype=float)[None, :])[0]))
    if mode == "bernoulli":
        return float(rng.random() < m)
    if mode == "continuous":
        if m <= 0.0 or m >= 1.0:
            return m
        return float(rng.beta(BETA_CONCENTRATION * m, BETA_CONCENTRATION * (1.0 - m)))
    raise ValueError(f"unknown reward mode {mode!r}")


@dataclass(frozen=True)
class BanditConfig:
    arms: ArmSet
    f_star: FStar
    rho: float = 1.0
    y: float = 3.0
    b: float = 1.0
    horizon: int = 1000
    reward_mode: str = "bernoulli"
    width_mode: str = "round"
    policy: str = "ucb"
    forced_arm: int = 0
    refit_every: int = 1

    def __post_init__(self):
        bounds.ConfidenceConfig(self.rho, self.y, self.b)
        if self.f_star.norm > self.b * (1.0 + 1e-12):
            raise ValueError(f"||f*|| = {self.f_star.norm:.6g} exceeds b = {self.b}")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.reward_mode not in ("bernoulli", "continuous"):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.width_mode not in ("round", "horizon"):
            raise ValueError(f"unknown width mode {self.width_mode!r}")
        if self.policy not in ("ucb", "forced"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if not 0 <= self.forced_arm < len(self.arms):
            raise ValueError("forced_arm out of range")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")


@dataclass
class BanditTrace:
    arms: np.ndarray
    rewards: np.ndarray
    regret: np.ndarray
    cum_regret: np.ndarray
    radius: np.ndarray
    gamma: np.ndarray
    gamma_post: np.ndarray
    ucb_chosen: np.ndarray
    covered: np.ndarray
    v_star: float
    kappa_star: float
    best_arm: int
    best_value: float
    seed: object = None

    def rows(self):
        for j in range(len(self.arms)):
            yield (j + 1, int(self.arms[j]), float(self.rewards[j]), float(self.regret[j]),
                   float(self.cum_regret[j]), float(self.radius[j]))


def horizon_gamma_bound(arms: ArmSet, rho: float, horizon: int) -> float:
    """Upper bound on the information gain after ``horizon`` pulls, any policy."""
    lam = np.clip(np.linalg.eigvalsh(arms.K), 0.0, None)
    return 0.5 * float(np.sum(np.log1p(horizon * lam / rho)))


def run_bandit(cfg: BanditConfig, seed) -> BanditTrace:
    """Run one bandit episode; the reward stream is ``default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    arms = cfg.arms
    spec = arms.spec
    N = cfg.horizon
    u_true = cfg.f_star(arms.arms)
    mu_true = expit(u_true)
    v_star, kappa_star, best = instance_constants(cfg.f_star, arms)
    mu_best = mu_true[best]

    chosen = np.zeros(N, dtype=int)
    rewards = np.zeros(N)
    regret = np.zeros(N)
    radius = np.zeros(N)
    gammas = np.zeros(N)
    gammas_post = np.zeros(N)
    ucb_chosen = np.zeros(N)
    covered = np.zeros(N, dtype=bool)

    gram = GramState(spec)
    slot = {}  # arm index -> row in gram
    counts, sums = [], []
    alpha = np.zeros(0)
    model = fit(gram, [], cfg.rho)
    fixed_gamma = horizon_gamma_bound(arms, cfg.rho, N) if cfg.width_mode == "horizon" else None

    gamma_data = 0.0  # information gain of the observations so far
    for j in range(N):
        gamma = gamma_data if fixed_gamma is None else fixed_gamma
        width = bounds.omega(cfg.rho, cfg.y, gamma, cfg.b)
        lo, hi = confidence_band_batch(model, arms.arms, width)
        if cfg.policy == "ucb":
            a = int(np.argmax(hi))
        else:
            a = cfg.forced_arm
        r = environment_sample(cfg.f_star, arms.arms[a], rng, cfg.reward_mode)

        chosen[j], rewards[j], radius[j], gammas[j] = a, r, width, gamma
        regret[j] = max(mu_best - mu_true[a], 0.0)
        ucb_chosen[j] = hi[a]
        covered[j] = bool(np.all((lo <= u_true) & (u_true <= hi)))

        if a not in slot:
            slot[a] = gram.n
            gram = gram_append(gram, arms.arms[a])
            counts.append(0.0)
            sums.append(0.0)
            alpha = np.append(alpha, 0.0)
        counts[slot[a]] += 1.0
        sums[slot[a]] += r
        gamma_data = info_gain_from_eigs(weighted_eigenvalues(gram.K, counts), cfg.rho)
        gammas_post[j] = gamma_data
        if (j + 1) % cfg.refit_every == 0 or j + 1 == N:
            c = np.asarray(counts)
            try:
                model = fit(gram, np.asarray(sums) / c, cfg.rho, counts=c, alpha0=alpha)
            except FitError as e:
                raise FitError(f"round {j + 1}: {e}", e.grad_norm) from e
            alpha = model.alpha

    return BanditTrace(
        arms=chosen,
        rewards=rewards,
        regret=regret,
        cum_regret=np.cumsum(regret),
        radius=radius,
        gamma=gammas,
        gamma_post=gammas_post,
        ucb_chosen=ucb_chosen,
        covered=covered,
        v_star=v_star,
        kappa_star=kappa_star,
        best_arm=best,
        best_value=float(u_true[best]),
        seed=seed,
    )
