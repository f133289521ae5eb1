"""Probabilistic scaling of a candidate set and the sample-size bounds.

Given a candidate ``x_c (+) S``, draw ``N_gamma`` scenarios, compute for
each the largest ``gamma_i`` with ``x_c (+) gamma_i S`` inside the
scenario set, and return the ``r``-th smallest. With

    N_gamma >= C / eps * ln(1 / delta),   r = ceil(eps * N_gamma / 2),

the scaled set is inside the eps-chance-constrained set with confidence
``1 - delta``, provided the center itself is. ``C = (1 + sqrt 3)^2`` is
the exact constant; ``7.67`` is its rounded-up bound.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from probscale.errors import ScalingError
from probscale.polytope import SupportOracle, bounding_box, scale_about, support_point
from probscale.sas import NormSAS, SampledSAS, sas_vertices
from probscale.uncertainty import (
    DistributionSpec,
    SampleStream,
    UncertainConstraintSystem,
    draw,
    violation_matrix,
)

log = logging.getLogger(__name__)

EXACT_CONSTANT = (1.0 + math.sqrt(3.0)) ** 2
CONSERVATIVE_CONSTANT = 7.67
LEARNING_EPS_MAX = 0.14


def _check_levels(eps, delta, allow_delta_one=False):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    hi_ok = delta <= 1.0 if allow_delta_one else delta < 1.0
    if not (0.0 < delta and hi_ok):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def scaling_sample_size(eps, delta, constant_mode="exact") -> int:
    """Number of scenarios used for scaling; floored at 1."""
    _check_levels(eps, delta, allow_delta_one=True)
    if constant_mode == "exact":
        C = EXACT_CONSTANT
    elif constant_mode == "conservative":
        C = CONSERVATIVE_CONSTANT
    else:
        raise ValueError("constant_mode must be 'exact' or 'conservative'")
    return max(1, math.ceil(C / eps * math.log(1.0 / delta)))


def discard_index(eps, n_gamma) -> int:
    """Order statistic ``r = ceil(eps * N / 2)``, at least 1."""
    if n_gamma < 1:
        raise ValueError("n_gamma must be at least 1")
    # round away float noise such as 0.1 * 30 / 2 = 1.5000000000000002
    return max(1, math.ceil(round(eps * n_gamma / 2.0, 9)))


def validate_sample_size(N, r, eps, delta) -> bool:
    """Sufficient condition ``N >= (r - 1 + L + sqrt(2 (r - 1) L)) / eps``, ``L = ln 1/delta``."""
    if r < 1:
        raise ValueError("r must be at least 1")
    L = math.log(1.0 / delta)
    return N >= (r - 1 + L + math.sqrt(2.0 * (r - 1) * L)) / eps


def learning_sample_size(n_xi, eps, delta, p=1) -> int:
    """Statistical-learning sample size for a ``(1, p)``-boolean constraint."""
    if not 0.0 < eps < LEARNING_EPS_MAX:
        raise ValueError(f"learning bound needs eps in (0, {LEARNING_EPS_MAX}), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if p < 1:
        raise ValueError("p must be at least 1")
    val = 4.1 / eps * (math.log(21.64 / delta) + 4.39 * n_xi * math.log2(8.0 * math.e * p / eps))
    return math.ceil(val)


@dataclass(frozen=True)
class ScalingConfig:
    eps: float
    delta: float
    constant_mode: str = "exact"
    seed: int = 0

    def __post_init__(self):
        _check_levels(self.eps, self.delta)
        if self.constant_mode not in ("exact", "conservative"):
            raise ValueError("constant_mode must be 'exact' or 'conservative'")

    @property
    def n_gamma(self):
        return scaling_sample_size(self.eps, self.delta, self.constant_mode)

    @property
    def r(self):
        return discard_index(self.eps, self.n_gamma)


# ---------------------------------------------------------------------------
# per-scenario scaling factors


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / den, np.where(num >= 0, np.inf, -np.inf))
    return np.where(np.isinf(den), np.where(num >= 0, 0.0, -np.inf), out)


def scenario_gammas(candidate, F, g) -> np.ndarray:
    """Largest admissible scaling for each scenario of a batch.

    ``F`` is ``(N, p, n)`` and ``g`` is ``(N, p)``. Values may be ``+inf``
    (no binding row) or nonpositive (the center violates the scenario).
    """
    F = np.asarray(F, dtype=float)
    g = np.asarray(g, dtype=float)
    xc = candidate.center
    num = g - F @ xc
    if isinstance(candidate, NormSAS):
        den = np.linalg.norm(F @ candidate.shape, ord=candidate.dual, axis=-1)
    elif isinstance(candidate, SampledSAS):
        oracle = SupportOracle(candidate.poly.poly)
        flat = F.reshape(-1, F.shape[-1])
        h = np.array([oracle(f) for f in flat]).reshape(num.shape)
        den = h - F @ xc
    else:
        raise TypeError(f"unsupported candidate type {type(candidate).__name__}")
    return _ratio(num, den).min(axis=-1)


def gamma_for_scenario(candidate, F, g) -> float:
    F = np.atleast_2d(F)
    return float(scenario_gammas(candidate, F[None], np.atleast_1d(g)[None])[0])


def select_gamma(gammas, r) -> float:
    """The ``r``-th smallest value (1-based)."""
    gammas = np.asarray(gammas, dtype=float)
    if not 1 <= r <= gammas.size:
        raise ValueError(f"r={r} out of range for {gammas.size} values")
    return float(np.sort(gammas, kind="stable")[r - 1])


# ---------------------------------------------------------------------------
# result


@dataclass
class ScaledSAS:
    candidate: object
    gamma: float
    gammas: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def center(self):
        return self.candidate.center

    def scaled_set(self):
        """The scaled set as a :class:`NormSAS` or :class:`HPolytope`."""
        if isinstance(self.candidate, NormSAS):
            return self.candidate.scaled(self.gamma)
        return scale_about(self.candidate.poly, self.gamma)

    def to_dict(self):
        return {
            "schema_version": 1,
            "candidate": self.candidate.to_dict(),
            "gamma": self.gamma,
            "diagnostics": self.diagnostics,
        }

    def gammas_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "gamma"])
        for i, v in enumerate(self.gammas):
            w.writerow([i, repr(float(v))])
        return buf.getvalue()


def center_violation(candidate, sys, spec, n_samples, stream) -> float:
    Q = draw(spec, stream, n_samples)
    return float(violation_matrix(sys, candidate.center, Q)[0].mean())


def probabilistic_scale(candidate, sys: UncertainConstraintSystem, spec: DistributionSpec,
                        cfg: ScalingConfig, stream: SampleStream | None = None,
                        precheck_samples: int = 10_000) -> ScaledSAS:
    """Scale ``candidate`` about its center with ``N_gamma`` fresh scenarios."""
    stream = stream or SampleStream(cfg.seed).child("scaling")
    n_gamma, r = cfg.n_gamma, cfg.r

    center_rate = None
    if precheck_samples:
        center_rate = center_violation(candidate, sys, spec, precheck_samples, stream.child("precheck"))
        if center_rate > cfg.eps:
            warnings.warn(
                f"center violates the constraints with empirical probability {center_rate:.4f} > "
                f"eps={cfg.eps}; the scaled set carries no guarantee",
                RuntimeWarning,
                stacklevel=2,
            )

    Q = draw(spec, stream, n_gamma)
    F, g = sys.realize_batch(Q)
    gammas = scenario_gammas(candidate, F, g)
    gamma = select_gamma(gammas, r)
    finite = gammas[np.isfinite(gammas)]
    diagnostics = {
        "n_gamma": n_gamma,
        "r": r,
        "r_floor_eps_n": math.floor(round(cfg.eps * n_gamma, 9)),
        "eps": cfg.eps,
        "delta": cfg.delta,
        "constant_mode": cfg.constant_mode,
        "gamma_min": float(gammas.min()),
        "gamma_max": float(gammas.max()),
        "gamma_median": float(np.median(gammas)),
        "n_nonpositive": int(np.sum(gammas <= 0)),
        "n_infinite": int(np.sum(np.isposinf(gammas))),
        "n_finite": int(finite.size),
        "center_violation_estimate": center_rate,
    }
    if gamma <= 0:
        raise ScalingError(
            f"selected gamma={gamma:.4g} <= 0: center violates too many scenarios; "
            "the center is likely outside the chance-constrained set"
        )
    log.debug("scaled with N_gamma=%d, r=%d -> gamma=%.6g", n_gamma, r, gamma)
    return ScaledSAS(candidate, gamma, gammas, diagnostics)


# ---------------------------------------------------------------------------
# empirical validation


def _uniform_l1_ball(u, n):
    """Uniform points in the unit l1 ball from ``2n + 1`` uniforms per point."""
    E = -np.log(u[:, : n + 1])
    signs = np.where(u[:, n + 1: 2 * n + 1] < 0.5, -1.0, 1.0)
    return signs * E[:, :n] / E.sum(axis=1, keepdims=True)


def sample_scaled_points(scaled: ScaledSAS, n_interior: int, stream: SampleStream):
    """Extreme points plus uniform interior points of the scaled set."""
    cand = scaled.candidate
    if isinstance(cand, NormSAS):
        s = cand.scaled(scaled.gamma)
        n = s.dim
        verts = sas_vertices(s)
        if n_interior <= 0:
            return verts
        if s.p == 1:
            Z = _uniform_l1_ball(stream.uniforms(0, n_interior, 2 * n + 1), n)
        else:
            Z = 2.0 * stream.uniforms(0, n_interior, n) - 1.0
        return np.vstack([verts, s.center + Z @ s.shape.T])

    poly = scaled.scaled_set()
    n = poly.dim
    extreme = []
    for i in range(n):
        for sgn in (1.0, -1.0):
            e = np.zeros(n)
            e[i] = sgn
            extreme.append(support_point(poly, e))
    pts = [np.array(extreme)]
    if n_interior > 0:
        lo, hi = bounding_box(poly)
        got, start, batch = 0, 0, max(1000, 20 * n_interior)
        while got < n_interior and start < 200 * batch:
            cand_pts = lo + (hi - lo) * stream.uniforms(start, batch, n)
            start += batch
            inside = cand_pts[poly.contains(cand_pts)][: n_interior - got]
            pts.append(inside)
            got += len(inside)
    return np.vstack(pts)


@dataclass
class ViolationReport:
    max_rate: float
    stderr: float
    argmax: int
    rates: np.ndarray
    n_test: int

    def passes(self, eps, k_sigma=3.0):
        return self.max_rate <= eps + k_sigma * self.stderr

    def to_dict(self):
        return {
            "max_rate": self.max_rate,
            "stderr": self.stderr,
            "argmax": self.argmax,
            "n_points": int(self.rates.size),
            "n_test": self.n_test,
            "rates": [float(v) for v in self.rates],
        }


def estimate_violation(points, sys: UncertainConstraintSystem, spec: DistributionSpec,
                       n_test: int, stream: SampleStream) -> ViolationReport:
    """Worst empirical violation probability over ``points``.

    All points are evaluated on the same ``n_test`` fresh scenarios; the
    binomial standard error belongs to the worst point.
    """
    if n_test < 1000:
        raise ValueError("n_test must be at least 1000")
    Q = draw(spec, stream, n_test)
    rates = violation_matrix(sys, np.atleast_2d(points), Q).mean(axis=1)
    k = int(np.argmax(rates))
    p = float(rates[k])
    return ViolationReport(p, math.sqrt(p * (1.0 - p) / n_test), k, rates, n_test)

