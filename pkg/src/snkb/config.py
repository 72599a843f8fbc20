"""JSON experiment configs, one schema per CLI subcommand.

Unknown keys are rejected and every value is validated before any work runs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, field_validator, model_validator

from .bandit import ArmSet, BanditConfig, FStar
from .kernels import KernelSpec
from .validation import THEOREMS, NoiseModel, TraceConfig, make_rule


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class KernelCfg(Strict):
    family: Literal["linear", "gaussian-rbf", "matern-5/2"]
    input_dim: PositiveInt
    lengthscale: PositiveFloat = 1.0

    def build(self) -> KernelSpec:
        return KernelSpec(self.family, self.input_dim, self.lengthscale)


class Grid(Strict):
    n: List[PositiveInt] = Field(default_factory=list)
    rho: List[PositiveFloat] = Field(default_factory=list)
    y: List[PositiveFloat] = Field(default_factory=list)
    gamma: List[float] = Field(default_factory=list)

    @field_validator("gamma")
    @classmethod
    def _gamma_nonneg(cls, v):
        if any(g < 0 for g in v):
            raise ValueError("gamma values must be nonnegative")
        return v


class BoundsCfg(Strict):
    b: PositiveFloat = 1.0
    grid: Grid = Field(default_factory=Grid)
    seed: int = 0


class NoiseCfg(Strict):
    kind: Literal["rademacher-scaled", "centered-bernoulli", "truncated-continuous"] = "rademacher-scaled"
    sigma: float = 1.0
    p: float = 0.5

    def build(self) -> NoiseModel:
        return NoiseModel(self.kind, self.sigma, self.p)

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self


class CovariateCfg(Strict):
    rule: Literal["sphere", "round-robin", "adversarial"] = "sphere"
    scale: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.scale is not None:
            if self.rule != "sphere":
                raise ValueError("scale only applies to the sphere rule")
            if not 0 < self.scale <= 1:
                raise ValueError("scale must lie in (0, 1]")
        return self

    def build(self):
        return make_rule(self.rule, **({} if self.scale is None else {"scale": self.scale}))


class CoverageCfg(Strict):
    theorems: List[Literal["bernstein-fixed", "hoeffding-fixed", "bernstein-stitched"]] = Field(
        default_factory=lambda: list(THEOREMS), min_length=1
    )
    d: PositiveInt = 5
    horizon: PositiveInt = 500
    replications: int = Field(2000, ge=100)
    rho: PositiveFloat = 1.0
    y: PositiveFloat = 3.0
    noise: NoiseCfg = Field(default_factory=NoiseCfg)
    covariates: CovariateCfg = Field(default_factory=CovariateCfg)
    seed: int = Field(0, ge=0)

    def trace_config(self) -> TraceConfig:
        return TraceConfig(self.d, self.horizon, self.covariates.build(), self.noise.build())


class FStarCfg(Strict):
    vector: Optional[List[float]] = None
    anchors: Optional[List[List[float]]] = None
    coefs: Optional[List[float]] = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.vector is None) == (self.anchors is None or self.coefs is None):
            raise ValueError("f_star needs exactly one of: vector, or anchors + coefs")
        return self

    def build(self, spec: KernelSpec) -> FStar:
        if self.vector is not None:
            return FStar(spec, vector=np.array(self.vector))
        return FStar(spec, anchors=np.array(self.anchors), coefs=np.array(self.coefs))


class BanditCfg(Strict):
    kernel: KernelCfg
    arms: List[List[float]] = Field(min_length=1)
    f_star: FStarCfg
    rho: PositiveFloat = 1.0
    y: PositiveFloat = 3.0
    b: PositiveFloat = 1.0
    horizon: PositiveInt = 1000
    seeds: PositiveInt = 1
    seed: int = Field(0, ge=0)
    reward_mode: Literal["bernoulli", "continuous"] = "bernoulli"
    width_mode: Literal["round", "horizon"] = "round"
    policy: Literal["ucb", "forced"] = "ucb"
    forced_arm: int = Field(0, ge=0)
    refit_every: PositiveInt = 1

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> BanditConfig:
        spec = self.kernel.build()
        return BanditConfig(
            arms=ArmSet(spec, np.array(self.arms, dtype=float)),
            f_star=self.f_star.build(spec),
            rho=self.rho,
            y=self.y,
            b=self.b,
            horizon=self.horizon,
            reward_mode=self.reward_mode,
            width_mode=self.width_mode,
            policy=self.policy,
            forced_arm=self.forced_arm,
            refit_every=self.refit_every,
        )


class PointGrid(Strict):
    lower: List[float]
    upper: List[float]
    num: List[PositiveInt]

    @model_validator(mode="after")
    def _check(self):
        if not len(self.lower) == len(self.upper) == len(self.num):
            raise ValueError("grid lower/upper/num must have equal lengths")
        return self

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(self.lower, self.upper, self.num)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


class RegressionCfg(Strict):
    kernel: KernelCfg
    dataset: str
    rho: PositiveFloat = 1.0
    y: PositiveFloat = 3.0
    b: PositiveFloat = 1.0
    test_points: Optional[List[List[float]]] = None
    grid: Optional[PointGrid] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if (self.test_points is None) == (self.grid is None):
            raise ValueError("give exactly one of test_points or grid")
        d = self.kernel.input_dim
        pts = self.test_points if self.test_points is not None else [self.grid.lower]
        if any(len(p) != d for p in pts):
            raise ValueError(f"test points must have dimension {d}")
        return self

    def test_matrix(self) -> np.ndarray:
        if self.test_points is not None:
            return np.array(self.test_points, dtype=float).reshape(-1, self.kernel.input_dim)
        return self.grid.points()


SCHEMAS = {
    "bounds": BoundsCfg,
    "coverage": CoverageCfg,
    "bandit": BanditCfg,
    "regression": RegressionCfg,
}

AnyConfig = Union[BoundsCfg, CoverageCfg, BanditCfg, RegressionCfg]


def load_config(command: str, path: Union[str, Path], seed: Optional[int] = None) -> AnyConfig:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    return SCHEMAS[command].model_validate(raw)


def canonical(cfg: AnyConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
