"""Monte Carlo checks of the self-normalised concentration results.

Everything runs in explicit finite dimension ``d``.  A trace holds predictable
covariates ``X_j`` in the unit ball, bounded conditionally centred noise
``Y_j`` and the exact conditional second moments ``s_j^2``, from which

    S_n = sum_j Y_j X_j,   <S>_n = sum_j s_j^2 X_j X_j^T,   V_n = sum_j X_j X_j^T.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, truncnorm

from . import bounds
from .kernels import psd_eigenvalues
from .parallel import pmap
from .rng import split, stream_seed

NORM_TOL = 1e-12
EXP_CLIP = 700.0
WILSON_Z = float(norm.ppf(0.975))

THEOREMS = ("bernstein-fixed", "hoeffding-fixed", "bernstein-stitched")


# ---------------------------------------------------------------- covariates


@dataclass(frozen=True)
class RoundRobin:
    """Unit basis vectors ``e_0, e_1, ..., e_{d-1}, e_0, ...``."""

    adaptive = False

    def sample(self, N, d, rng):
        return np.eye(d)[np.arange(N) % d]


@dataclass(frozen=True)
class Sphere:
    """I.i.d. uniform directions scaled to norm ``scale``."""

    scale: float = 0.9
    adaptive = False

    def sample(self, N, d, rng):
        Z = rng.standard_normal((N, d))
        return self.scale * Z / np.linalg.norm(Z, axis=1, keepdims=True)


@dataclass(frozen=True)
class Constant:
    direction: tuple
    adaptive = False

    def sample(self, N, d, rng):
        x = np.asarray(self.direction, dtype=float)
        return np.tile(x, (N, 1))


@dataclass(frozen=True)
class Adversarial:
    """Points along the current ``S_{n-1}``; ``e_0`` while it is zero."""

    adaptive = True

    def next(self, X_past, Y_past, rng):
        d = X_past.shape[1]
        s = Y_past @ X_past if len(Y_past) else np.zeros(d)
        nrm = np.linalg.norm(s)
        if nrm == 0.0:
            return np.eye(d)[0]
        return s / nrm


@dataclass(frozen=True)
class FunctionRule:
    """Wrap ``fn(X_past, Y_past) -> x``; the rule only ever sees the past."""

    fn: Callable
    adaptive = True

    def next(self, X_past, Y_past, rng):
        return np.asarray(self.fn(X_past.copy(), Y_past.copy()), dtype=float)


COVARIATE_RULES = {"round-robin": RoundRobin, "sphere": Sphere, "adversarial": Adversarial}


def make_rule(name: str, **params):
    try:
        return COVARIATE_RULES[name](**params)
    except KeyError:
        raise ValueError(f"unknown covariate rule {name!r}") from None


# --------------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseModel:
    """Bounded, conditionally mean-zero noise with a closed-form variance.

    kinds:
      ``rademacher-scaled``      ``Y = sigma * eps``, ``s^2 = sigma^2``
      ``centered-bernoulli``     ``Y = B - p``, ``s^2 = p (1 - p)``; ``p`` may be
                                 ``p_rule(X_past, Y_past, x)`` (predictable)
      ``truncated-continuous``   normal with scale ``sigma`` truncated to [-1, 1]
    """

    kind: str = "rademacher-scaled"
    sigma: float = 1.0
    p: float = 0.5
    p_rule: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("rademacher-scaled", "centered-bernoulli", "truncated-continuous"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "rademacher-scaled" and not 0.0 <= self.sigma <= 1.0:
            raise ValueError("rademacher-scaled noise needs sigma in [0, 1]")
        if self.kind == "truncated-continuous" and not self.sigma > 0:
            raise ValueError("truncated-continuous noise needs sigma > 0")
        if self.kind == "centered-bernoulli" and not 0.0 <= self.p <= 1.0:
            raise ValueError("centered-bernoulli noise needs p in [0, 1]")

    @property
    def predictable_rule(self) -> bool:
        return self.kind == "centered-bernoulli" and self.p_rule is not None

    def _truncnorm(self):
        c = 1.0 / self.sigma
        return truncnorm(-c, c, loc=0.0, scale=self.sigma)

    def second_moment(self, p=None) -> float:
        if self.kind == "rademacher-scaled":
            return self.sigma**2
        if self.kind == "centered-bernoulli":
            p = self.p if p is None else p
            return p * (1.0 - p)
        return float(self._truncnorm().var())

    def sample(self, N, rng):
        """``(Y, s2)`` for a rule that does not depend on the past."""
        if self.kind == "rademacher-scaled":
            eps = rng.integers(0, 2, size=N) * 2.0 - 1.0
            return self.sigma * eps, np.full(N, self.sigma**2)
        if self.kind == "centered-bernoulli":
            B = (rng.random(N) < self.p).astype(float)
            return B - self.p, np.full(N, self.p * (1.0 - self.p))
        tn = self._truncnorm()
        return tn.ppf(rng.random(N)), np.full(N, float(tn.var()))

    def sample_one(self, X_past, Y_past, x, rng):
        if self.predictable_rule:
            p = float(self.p_rule(X_past, Y_past, x))
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p_rule returned {p}, outside [0, 1]")
            return float(rng.random() < p) - p, p * (1.0 - p)
        Y, s2 = self.sample(1, rng)
        return float(Y[0]), float(s2[0])


# --------------------------------------------------------------------- trace


@dataclass
class MartingaleTrace:
    X: np.ndarray
    Y: np.ndarray
    s2: np.ndarray
    seed: object = None
    _cache: Dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def S(self) -> np.ndarray:
        """Running sums ``S_1..S_N``, shape ``(N, d)``."""
        if "S" not in self._cache:
            self._cache["S"] = np.cumsum(self.Y[:, None] * self.X, axis=0)
        return self._cache["S"]

    @property
    def V(self) -> np.ndarray:
        if "V" not in self._cache:
            self._cache["V"] = np.cumsum(self.X[:, :, None] * self.X[:, None, :], axis=0)
        return self._cache["V"]

    @property
    def QV(self) -> np.ndarray:
        """Predictable quadratic variation ``<S>_1..<S>_N``."""
        if "QV" not in self._cache:
            outer = self.X[:, :, None] * self.X[:, None, :]
            self._cache["QV"] = np.cumsum(self.s2[:, None, None] * outer, axis=0)
        return self._cache["QV"]

    def check(self):
        norms = np.linalg.norm(self.X, axis=1)
        if np.any(norms > 1.0 + NORM_TOL):
            raise ValueError(f"covariate norm {norms.max():.6g} exceeds 1")
        if np.any(np.abs(self.Y) > 1.0):
            raise ValueError("noise exceeds 1 in absolute value")
        gap = np.linalg.eigvalsh(self.V - self.QV)
        if gap.size and gap.min() < -1e-10:
            raise ValueError("predictable variation exceeds V_n")


def simulate_trace(d: int, N: int, covariate_rule, noise: NoiseModel, seed) -> MartingaleTrace:
    """Draw one path; covariates and noise use separate streams derived from ``seed``."""
    if d < 1 or N < 0:
        raise ValueError("need d >= 1 and N >= 0")
    rng_x, rng_y = split(seed, 2)
    if not covariate_rule.adaptive and not noise.predictable_rule:
        X = np.asarray(covariate_rule.sample(N, d, rng_x), dtype=float).reshape(N, d)
        Y, s2 = noise.sample(N, rng_y)
    else:
        X = np.zeros((N, d))
        Y = np.zeros(N)
        s2 = np.zeros(N)
        pre = None if covariate_rule.adaptive else covariate_rule.sample(N, d, rng_x)
        for j in range(N):
            if pre is None:
                x = covariate_rule.next(X[:j], Y[:j], rng_x)
            else:
                x = pre[j]
            x = np.asarray(x, dtype=float).reshape(d)
            if np.linalg.norm(x) > 1.0 + NORM_TOL:
                raise ValueError(f"covariate rule emitted norm {np.linalg.norm(x):.6g} > 1 at step {j + 1}")
            X[j] = x
            Y[j], s2[j] = noise.sample_one(X[:j], Y[:j], x, rng_y)
    norms = np.linalg.norm(X, axis=1)
    if N and norms.max() > 1.0 + NORM_TOL:
        raise ValueError(f"covariate rule emitted norm {norms.max():.6g} > 1")
    return MartingaleTrace(X, Y, s2, seed)


# ---------------------------------------------------------------- statistics


def self_norm_stat(trace: MartingaleTrace, n: int, rho: float, mode: str = "bernstein") -> float:
    """``||(M_n + rho I)^{-1/2} S_n||`` with ``M = <S>`` (bernstein) or ``V`` (hoeffding)."""
    if not 1 <= n <= trace.N:
        raise ValueError(f"n must lie in [1, {trace.N}]")
    if not rho > 0:
        raise ValueError("rho must be positive")
    M = _mode_matrix(trace, mode)[n - 1]
    s = trace.S[n - 1]
    c = cho_factor(M + rho * np.eye(trace.d))
    return math.sqrt(max(float(s @ cho_solve(c, s)), 0.0))


def _mode_matrix(trace, mode):
    if mode == "bernstein":
        return trace.QV
    if mode == "hoeffding":
        return trace.V
    raise ValueError(f"unknown mode {mode!r}")


def _spectral_coords(M, S):
    lam, U = np.linalg.eigh(M)
    coords = np.einsum("nij,ni->nj", U, S)
    return np.clip(lam, 0.0, None), coords


def self_norm_path(trace: MartingaleTrace, rho, mode: str = "bernstein") -> np.ndarray:
    """The statistic for every ``n = 1..N``; ``rho`` may be a scalar or per-step array."""
    lam, coords = _spectral_coords(_mode_matrix(trace, mode), trace.S)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (trace.N,))[:, None]
    return np.sqrt(np.sum(coords**2 / (lam + rho), axis=1))


def _gamma_path(eigs, rho):
    rho = np.asarray(rho, dtype=float)
    return 0.5 * np.sum(np.log1p(eigs / rho[..., None] if rho.ndim else eigs / rho), axis=-1)


def _beta_vec(rho, y, gamma):
    return np.sqrt(3.0 * rho) / 2.0 + (2.0 * math.sqrt(3.0) / np.sqrt(rho)) * (9.0 * gamma + y) + np.sqrt(
        6.0 * (gamma + y)
    )


def stitch_levels_path(v_eigs: np.ndarray, y: float):
    """Per-step minimal level ``h`` and ``gamma(V_n / rho_h)``."""
    N = v_eigs.shape[0]
    H = int(math.ceil(bounds.max_stitch_level(max(N, 1)))) + 2
    rhos = 2.0 ** np.arange(H)
    gam = 0.5 * np.sum(np.log1p(v_eigs[:, None, :] / rhos[None, :, None]), axis=-1)
    ok = rhos[None, :] >= gam
    if not np.all(ok[:, -1]):
        raise RuntimeError("stitch level exceeded its theoretical bound")
    h_idx = np.argmax(ok, axis=1)
    return h_idx + 1, gam[np.arange(N), h_idx]


@dataclass
class TraceOutcome:
    violated: bool
    first_violation: int  # 0 when never violated
    max_ratio: float  # max_n stat_n / radius_n


def evaluate_trace(trace: MartingaleTrace, theorem: str, y: float, rho: float = 1.0) -> TraceOutcome:
    """Compare a trace's statistic path against the radius path of ``theorem``."""
    if trace.N == 0:
        return TraceOutcome(False, 0, 0.0)
    v_eigs = np.clip(np.linalg.eigvalsh(trace.V), 0.0, None)
    if theorem == "bernstein-fixed":
        stat = self_norm_path(trace, rho, "bernstein")
        radius = _beta_vec(rho, y, _gamma_path(v_eigs, rho))
    elif theorem == "hoeffding-fixed":
        stat = self_norm_path(trace, rho, "hoeffding")
        radius = np.sqrt(2.0 * (_gamma_path(v_eigs, rho) + y))
    elif theorem == "bernstein-stitched":
        h, gam = stitch_levels_path(v_eigs, y)
        rho_h = 2.0 ** (h - 1)
        stat = self_norm_path(trace, rho_h, "bernstein")
        radius = _beta_vec(rho_h, y + 2.0 * np.log(h), gam)
    else:
        raise ValueError(f"unknown theorem {theorem!r}; expected one of {THEOREMS}")
    ratio = np.divide(stat, radius, out=np.zeros_like(stat), where=radius > 0)
    bad = stat > radius
    first = int(np.argmax(bad)) + 1 if bad.any() else 0
    return TraceOutcome(bool(bad.any()), first, float(ratio.max()))


def theorem_budget(theorem: str, y: float) -> float:
    return {
        "bernstein-fixed": bounds.budget_bernstein,
        "hoeffding-fixed": bounds.budget_hoeffding,
        "bernstein-stitched": bounds.budget_stitched,
    }[theorem](y)


def wilson_interval(k: int, m: int, z: float = WILSON_Z):
    if m <= 0:
        raise ValueError("need at least one trial")
    p = k / m
    denom = 1.0 + z * z / m
    centre = (p + z * z / (2 * m)) / denom
    half = z * math.sqrt(p * (1 - p) / m + z * z / (4 * m * m)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == m else min(1.0, centre + half)
    return lo, hi


@dataclass
class CoverageResult:
    theorem: str
    y: float
    rho: float
    budget: float
    outcomes: list

    @property
    def reps(self) -> int:
        return len(self.outcomes)

    @property
    def violations(self) -> int:
        return sum(o.violated for o in self.outcomes)

    @property
    def rate(self) -> float:
        return self.violations / self.reps

    @property
    def wilson(self):
        return wilson_interval(self.violations, self.reps)

    @property
    def half_width(self) -> float:
        lo, hi = self.wilson
        return (hi - lo) / 2.0

    def within_budget(self) -> bool:
        return self.rate <= self.budget + self.half_width


@dataclass(frozen=True)
class TraceConfig:
    d: int
    N: int
    covariate_rule: object = Sphere()
    noise: NoiseModel = NoiseModel()


def _coverage_rep(index, cfg: TraceConfig, theorems, y, rho, master_seed):
    trace = simulate_trace(cfg.d, cfg.N, cfg.covariate_rule, cfg.noise, stream_seed(master_seed, index))
    return [evaluate_trace(trace, th, y, rho) for th in theorems]


def coverage_experiment(
    reps: int,
    cfg: TraceConfig,
    y: float,
    theorem: Union[str, Sequence[str]] = "bernstein-fixed",
    rho: float = 1.0,
    master_seed: int = 0,
    threads: Optional[int] = None,
):
    """Fraction of replications whose statistic ever exceeds its radius.

    Passing a sequence of theorems evaluates all of them on the same traces
    and returns a dict keyed by theorem name.
    """
    if reps < 100:
        raise ValueError("coverage experiments need at least 100 replications")
    single = isinstance(theorem, str)
    theorems = (theorem,) if single else tuple(theorem)
    for th in theorems:
        if th not in THEOREMS:
            raise ValueError(f"unknown theorem {th!r}")
    fn = functools.partial(_coverage_rep, cfg=cfg, theorems=theorems, y=y, rho=rho, master_seed=master_seed)
    rows = pmap(fn, range(reps), threads, chunksize=max(1, reps // 64))
    results = {
        th: CoverageResult(th, y, rho, theorem_budget(th, y), [r[i] for r in rows]) for i, th in enumerate(theorems)
    }
    return results[theorem] if single else results


# ----------------------------------------------------------- supermartingale


@dataclass
class SupermartingaleResult:
    checkpoints: np.ndarray
    means: np.ndarray  # (n_vectors, n_checkpoints)
    std_errors: np.ndarray
    clipped: int

    def holds(self) -> bool:
        return self.clipped == 0 and bool(np.all(self.means <= 1.0 + 3.0 * self.std_errors))


def _supermartingale_rep(index, cfg, xs, checkpoints, master_seed):
    tr = simulate_trace(cfg.d, cfg.N, cfg.covariate_rule, cfg.noise, stream_seed(master_seed, index))
    proj = tr.X @ xs.T  # (N, k)
    lin = np.cumsum(tr.Y[:, None] * proj, axis=0)[checkpoints - 1]
    quad = np.cumsum(tr.s2[:, None] * proj * proj, axis=0)[checkpoints - 1]
    return (lin - 1.5 * quad).T  # (k, C)


def supermartingale_check(
    xs,
    cfg: TraceConfig,
    reps: int,
    checkpoints: Sequence[int],
    master_seed: int = 0,
    threads: Optional[int] = None,
) -> SupermartingaleResult:
    """Empirical means of ``exp(<S_n, x> - 1.5 x^T <S>_n x)`` at each checkpoint."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != cfg.d:
        raise ValueError("test vectors must have dimension d")
    if np.any(np.linalg.norm(xs, axis=1) > 1.0 + NORM_TOL):
        raise ValueError("test vectors must lie in the unit ball")
    ck = np.asarray(sorted(checkpoints), dtype=int)
    if ck.size == 0 or ck[0] < 1 or ck[-1] > cfg.N:
        raise ValueError(f"checkpoints must lie in [1, {cfg.N}]")
    fn = functools.partial(_supermartingale_rep, cfg=cfg, xs=xs, checkpoints=ck, master_seed=master_seed)
    expo = np.stack(pmap(fn, range(reps), threads, chunksize=max(1, reps // 64)))  # (reps, k, C)
    clipped = int(np.sum(expo > EXP_CLIP))
    vals = np.exp(np.minimum(expo, EXP_CLIP))
    means = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros_like(means)
    return SupermartingaleResult(ck, means, se, clipped)


# ---------------------------------------------------------------- truncation


class ClaimViolation(AssertionError):
    pass


@dataclass
class TruncationReport:
    rho: float
    dims: np.ndarray  # D_n
    gammas: np.ndarray  # gamma(V_n / rho)
    vminus_op: np.ndarray  # ||V_n^-||_op
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def truncation_check(trace: MartingaleTrace, rho: float, strict: bool = True) -> TruncationReport:
    """Run the large-direction truncation construction along ``trace``.

    ``H_n`` absorbs every eigenvector of ``V_n^-`` with eigenvalue at least
    ``rho``; ``V_n^-`` accumulates the parts of ``X_j`` orthogonal to
    ``H_{j-1}``.  Checks ``dim H_n <= 4 gamma(V_n / rho)`` and
    ``||V_n^-||_op < rho + 1`` at every step.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    d, N = trace.d, trace.N
    basis = np.zeros((d, 0))
    Vm = np.zeros((d, d))
    V = np.zeros((d, d))
    dims = np.zeros(N, dtype=int)
    gammas = np.zeros(N)
    ops = np.zeros(N)
    failures = []
    for j in range(N):
        x = trace.X[j]
        xp = x - basis @ (basis.T @ x)
        Vm += np.outer(xp, xp)
        V += np.outer(x, x)
        lam, U = np.linalg.eigh(Vm)
        big = U[:, lam >= rho * (1.0 - 1e-12)]
        if big.shape[1]:
            resid = big - basis @ (basis.T @ big)
            u, s, _ = np.linalg.svd(resid, full_matrices=False)
            new = u[:, s > 1e-9]
            if new.shape[1]:
                basis = np.hstack([basis, new])
                # re-orthonormalise to keep the projector clean
                basis, _ = np.linalg.qr(basis)
        dims[j] = basis.shape[1]
        gammas[j] = 0.5 * float(np.sum(np.log1p(psd_eigenvalues(V) / rho)))
        ops[j] = max(float(lam[-1]), 0.0)
        if dims[j] > 4.0 * gammas[j] + 1e-9:
            failures.append((j + 1, "dimension", dims[j], 4.0 * gammas[j]))
        if ops[j] >= rho + 1.0 + 1e-9:
            failures.append((j + 1, "op-norm", ops[j], rho + 1.0))
    if strict and failures:
        raise ClaimViolation(f"truncation claims violated: {failures[:3]}")
    return TruncationReport(rho, dims, gammas, ops, failures)


# ------------------------------------------------------ logistic confidence


@dataclass
class LogisticOutcome:
    violated: bool
    first_violation: int
    max_ratio: float  # max_n (largest ellipsoid norm of f* - f_n) / omega_n


def _logistic_rep(index, d, N, rho, y, b, scale, master_seed):
    from .logistic import primal_reference_fit, variance_fn

    rng_f, rng_x, rng_y = split(stream_seed(master_seed, index), 3)
    z = rng_f.standard_normal(d)
    f_star = b * z / np.linalg.norm(z)
    X = Sphere(scale).sample(N, d, rng_x)
    Y = (rng_y.random(N) < 1.0 / (1.0 + np.exp(-(X @ f_star)))).astype(float)
    V = np.zeros((d, d))
    H_star = rho * np.eye(d)
    f_hat = np.zeros(d)
    first, worst = 0, 0.0
    for n in range(1, N + 1):
        x = X[n - 1]
        V += np.outer(x, x)
        H_star += variance_fn(x @ f_star) * np.outer(x, x)
        model = primal_reference_fit(X[:n], Y[:n], rho, f0=f_hat)
        f_hat = model.weight
        xi = f_star - f_hat
        width = bounds.omega(rho, y, 0.5 * float(np.sum(np.log1p(psd_eigenvalues(V) / rho))), b)
        norms = (
            model.norm(xi, model.H_hat),
            model.norm(xi, H_star),
            model.inv_norm(xi, model.H_hat),
            model.inv_norm(xi, H_star),
        )
        ratio = max(norms) / width
        worst = max(worst, ratio)
        if ratio > 1.0 and not first:
            first = n
    return LogisticOutcome(bool(first), first, worst)


def logistic_coverage_experiment(
    reps: int,
    d: int = 5,
    N: int = 300,
    rho: float = 1.0,
    y: float = 3.0,
    b: float = 1.0,
    scale: float = 0.9,
    master_seed: int = 0,
    threads: Optional[int] = None,
):
    """Joint-in-time coverage of ``f*`` by the logistic confidence ellipsoids.

    Each replication draws ``f*`` uniformly on the sphere of radius ``b``,
    covariates uniformly on the sphere of radius ``scale`` and Bernoulli
    responses.  A replication fails if, at any ``n``, ``f* - f_n`` has norm
    above ``omega_n`` in any of the four ellipsoid norms built from the
    estimated and true curvature operators and their inverses.
    Returns ``(outcomes, budget)`` with budget ``2 e^{-y}``.
    """
    fn = functools.partial(_logistic_rep, d=d, N=N, rho=rho, y=y, b=b, scale=scale, master_seed=master_seed)
    outcomes = pmap(fn, range(reps), threads, chunksize=max(1, reps // 64))
    return outcomes, bounds.budget_bernstein(y)
