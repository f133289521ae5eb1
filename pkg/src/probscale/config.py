"""Run configuration schema for the command-line front end.

Configs are JSON with four sections (``problem``, ``distribution``,
``method``, ``execution``) plus ``schema_version``. Unknown keys are
rejected; every default is written back in the resolved copy.
"""

from __future__ import annotations

from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# distribution


class UniformBoxBlock(_Strict):
    type: Literal["uniform_box"]
    lower: list[float]
    upper: list[float]


class GaussianBlock(_Strict):
    type: Literal["gaussian"]
    mean: list[float]
    cov: list[list[float]]


class FactorBlock(_Strict):
    type: Literal["scalar_uniform_factor"]
    low: float
    high: float
    target: int


Block = Annotated[Union[UniformBoxBlock, GaussianBlock, FactorBlock], Field(discriminator="type")]


class DistributionSection(_Strict):
    blocks: list[Block] = Field(min_length=1)

    def build(self):
        from probscale.uncertainty import DistributionSpec

        return DistributionSpec.from_dict(self.model_dump())


# ---------------------------------------------------------------------------
# scaling problems


class ProductFormProblem(_Strict):
    """Rows are the effective uncertainty vector reshaped to ``(p, n_xi)``."""

    type: Literal["product_form"]
    n_xi: int = Field(ge=1)
    p: int = Field(default=1, ge=1)
    rhs: float = 1.0


class AffineProblem(_Strict):
    """``(F0 + sum q_k F_k) xi <= g0 + sum q_k g_k`` with ``q`` the effective vector."""

    type: Literal["affine"]
    F0: list[list[float]]
    g0: list[float]
    F_terms: list[list[list[float]]] = Field(default_factory=list)
    g_terms: list[list[float]] = Field(default_factory=list)


ScaleProblem = Annotated[Union[ProductFormProblem, AffineProblem], Field(discriminator="type")]


class ScaleMethod(_Strict):
    sas_kind: Literal["sampled", "l1", "linf"] = "l1"
    n_design: int = Field(default=100, ge=1)
    eps: float = Field(default=0.05, gt=0.0, lt=1.0)
    delta: float = Field(default=1e-6, gt=0.0, lt=1.0)
    constant_mode: Literal["exact", "conservative"] = "exact"
    shape_mode: Literal["diag", "full"] = "diag"
    box: float | None = Field(default=None, gt=0.0)
    center: Union[Literal["auto", "origin"], list[float]] = "auto"


class ScaleExecution(_Strict):
    seed: int = Field(default=0, ge=0)
    repeats: int = Field(default=1, ge=1)
    n_test: int = Field(default=10_000, ge=1000)
    n_interior: int = Field(default=50, ge=0)
    precheck_samples: int = Field(default=10_000, ge=0)
    output_dir: str = "out"


class ScaleConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    problem: ScaleProblem
    distribution: DistributionSection
    method: ScaleMethod = ScaleMethod()
    execution: ScaleExecution = ScaleExecution()

    @model_validator(mode="after")
    def _dims(self):
        spec = self.distribution.build()
        prob = self.problem
        if isinstance(prob, ProductFormProblem):
            if spec.effective_dim != prob.n_xi * prob.p:
                raise ValueError(
                    f"product_form needs an effective uncertainty of size n_xi*p = "
                    f"{prob.n_xi * prob.p}, got {spec.effective_dim}")
        else:
            F0 = np.asarray(prob.F0, dtype=float)
            if F0.ndim != 2 or F0.shape[0] != len(prob.g0):
                raise ValueError("F0 must be p x n_xi and match g0")
            k = len(prob.F_terms)
            if k and k != spec.effective_dim:
                raise ValueError("F_terms must have one entry per effective uncertainty component")
            if prob.g_terms and len(prob.g_terms) != spec.effective_dim:
                raise ValueError("g_terms must have one entry per effective uncertainty component")
        if isinstance(self.method.center, list) and len(self.method.center) != self.n_xi:
            raise ValueError("explicit center must have n_xi entries")
        return self

    @property
    def n_xi(self):
        if isinstance(self.problem, ProductFormProblem):
            return self.problem.n_xi
        return len(self.problem.F0[0])

    def build_system(self):
        from probscale.uncertainty import AffineInQ, ProductForm

        spec = self.distribution.build()
        prob = self.problem
        if isinstance(prob, ProductFormProblem):
            return ProductForm(spec, prob.n_xi, prob.rhs), spec
        return AffineInQ(prob.F0, prob.g0, prob.F_terms or None, prob.g_terms or None), spec


# ---------------------------------------------------------------------------
# SMPC


class ChainPlant(_Strict):
    type: Literal["chain_of_integrators"]
    n: int = Field(default=2, ge=1)
    m: int = Field(default=1, ge=1)
    dt: float = Field(default=0.2, gt=0.0)
    a_unc: float = Field(default=0.1, ge=0.0)
    b_unc: float = Field(default=0.1, ge=0.0)
    w_add: float = Field(default=0.05, ge=0.0)


class LtiPlant(_Strict):
    """Affine families over the effective disturbance of ``distribution``."""

    type: Literal["lti"]
    A0: list[list[float]]
    B0: list[list[float]]
    A_terms: list[list[list[float]]] = Field(default_factory=list)
    B_terms: list[list[list[float]]] = Field(default_factory=list)
    a_terms: list[list[float]] = Field(default_factory=list)


Plant = Annotated[Union[ChainPlant, LtiPlant], Field(discriminator="type")]


class SmpcProblemSection(_Strict):
    plant: Plant
    horizon: int = Field(default=8, ge=1)
    Q: list[list[float]] | None = None
    R: list[list[float]] | None = None
    H_x: list[list[float]]
    H_u: list[list[float]]
    x0: list[float]


class SmpcMethod(_Strict):
    sas_kind: Literal["sampled", "l1", "linf"] = "l1"
    n_design: int = Field(default=100, ge=1)
    eps: Union[float, list[float]] = 0.05
    delta: float = Field(default=1e-6, gt=0.0, lt=1.0)
    constant_mode: Literal["exact", "conservative"] = "exact"
    shape_mode: Literal["diag", "full"] = "diag"
    box: Union[float, dict[Literal["x", "v"], float]] = 10.0
    center: Union[Literal["auto", "origin", "state_origin"], list[float]] = "origin"
    n_cost: int = Field(default=2000, ge=1000)

    @field_validator("eps")
    @classmethod
    def _eps(cls, v):
        vals = v if isinstance(v, list) else [v]
        if not vals or any(not 0.0 < e < 1.0 for e in vals):
            raise ValueError("eps values must lie in (0, 1)")
        return v

    @field_validator("box")
    @classmethod
    def _box(cls, v):
        vals = v.values() if isinstance(v, dict) else [v]
        if isinstance(v, dict) and set(v) != {"x", "v"}:
            raise ValueError("box dict needs both 'x' and 'v'")
        if any(b <= 0 for b in vals):
            raise ValueError("box half-widths must be positive")
        return v


class SmpcExecution(_Strict):
    seed: int = Field(default=0, ge=0)
    runs: int = Field(default=1, ge=1)
    steps: int = Field(default=50, ge=1)
    precheck_samples: int = Field(default=10_000, ge=0)
    output_dir: str = "out"


class SmpcConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    problem: SmpcProblemSection
    distribution: DistributionSection | None = None
    method: SmpcMethod = SmpcMethod()
    execution: SmpcExecution = SmpcExecution()

    @model_validator(mode="after")
    def _plant(self):
        if isinstance(self.problem.plant, LtiPlant) and self.distribution is None:
            raise ValueError("an lti plant needs a distribution section")
        if isinstance(self.problem.plant, ChainPlant) and self.distribution is not None:
            raise ValueError("chain_of_integrators defines its own disturbance; drop the "
                             "distribution section")
        return self

    def build_problem(self):
        from probscale.smpc import (
            SmpcProblem,
            UncertainLtiSystem,
            chain_of_integrators,
            synthesize_prestabilizer,
        )

        plant = self.problem.plant
        if isinstance(plant, ChainPlant):
            sys = chain_of_integrators(plant.n, plant.m, plant.dt, plant.a_unc, plant.b_unc,
                                       plant.w_add)
        else:
            sys = UncertainLtiSystem(plant.A0, plant.B0, self.distribution.build(),
                                     plant.A_terms or None, plant.B_terms or None,
                                     plant.a_terms or None)
        n, m = sys.n, sys.m
        Q = np.eye(n) if self.problem.Q is None else np.asarray(self.problem.Q, dtype=float)
        R = 0.1 * np.eye(m) if self.problem.R is None else np.asarray(self.problem.R, dtype=float)
        K, P = synthesize_prestabilizer(sys.A0, sys.B0, Q, R)
        prob = SmpcProblem(sys, self.problem.horizon, Q, R, P, K, self.problem.H_x,
                           self.problem.H_u, self.method.eps, self.method.delta)
        x0 = np.asarray(self.problem.x0, dtype=float)
        if x0.shape != (n,):
            raise ValueError(f"x0 must have {n} entries")
        return prob, x0

    def resolved(self):
        """Config with the plant's implied distribution and weights spelled out."""
        data = self.model_dump(mode="json")
        prob, _ = self.build_problem()
        data["problem"]["Q"] = prob.Q.tolist()
        data["problem"]["R"] = prob.R.tolist()
        data["resolved"] = {
            "disturbance": prob.system.disturbance.to_dict(),
            "K": prob.K.tolist(),
            "P": prob.P.tolist(),
        }
        return data
