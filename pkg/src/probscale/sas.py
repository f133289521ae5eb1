"""Simple approximating sets (SAS).

Three candidate families are supported:

* sampled polytopes, the intersection of ``N_S`` realized scenario sets,
  centered at their Chebyshev center;
* l1 cross-polytopes ``x_c + P B_1`` (``2n`` vertices, ``2^n`` facets),
  handled online through a lifted system of ``3n + 1`` inequalities;
* l-infinity boxes ``x_c + P B_inf`` (``2^n`` vertices, ``2n`` facets).

The norm-ball sets are designed as the largest (trace of ``P``) set that
fits in a sampled design polytope. Containment of ``x_c + P B_p`` in a
halfspace ``f'x <= g`` is ``f'x_c + ||P f||_q <= g`` with ``q`` the dual
norm, which makes the diagonal design a plain LP.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from probscale.errors import EmptySetError, SingularShapeError, UnboundedError
from probscale.optim_backend import LinearProgram, Status, solve_lp
from probscale.polytope import (
    CenteredPolytope,
    HPolytope,
    bounding_box,
    chebyshev_center,
)
from probscale.uncertainty import ScenarioSet

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
MEMBERSHIP_TOL = 1e-9
MAX_LINF_VERTEX_DIM = 20


def _norm_code(p):
    if p in (1, "1"):
        return 1
    if p in (np.inf, "inf", "linf", float("inf")):
        return np.inf
    raise ValueError(f"unsupported norm {p!r}; expected 1 or inf")


def dual_norm(p):
    return np.inf if _norm_code(p) == 1 else 1


@dataclass
class NormSAS:
    """``{x_c + P z : ||z||_p <= 1}`` for ``p`` in ``{1, inf}``."""

    center: np.ndarray
    shape: np.ndarray
    p: float = 1
    mode: str = "diag"
    _inv: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        self.shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        self.p = _norm_code(self.p)
        n = self.center.size
        if self.shape.shape != (n, n):
            raise ValueError(f"shape matrix must be {n}x{n}")
        scale = max(1.0, np.abs(self.shape).max())
        if np.abs(self.shape - self.shape.T).max() > 1e-9 * scale:
            raise ValueError("shape matrix must be symmetric")
        if self.mode == "diag":
            if np.any(self.shape[~np.eye(n, dtype=bool)] != 0.0):
                raise ValueError("diag mode requires exactly zero off-diagonal entries")
        elif self.mode != "full":
            raise ValueError("mode must be 'diag' or 'full'")
        eig = np.linalg.eigvalsh(self.shape)
        if eig[0] < -1e-8 * max(np.abs(eig).max(), 1e-300):
            raise ValueError("shape matrix must be positive semidefinite")

    @property
    def dim(self):
        return self.center.size

    @property
    def dual(self):
        return dual_norm(self.p)

    def inverse(self):
        if self._inv is None:
            if np.linalg.cond(self.shape) > COND_LIMIT:
                raise SingularShapeError("shape matrix condition number exceeds 1e12")
            self._inv = np.linalg.inv(self.shape)
        return self._inv

    def scaled(self, gamma):
        """The set ``x_c + gamma P B_p``."""
        return NormSAS(self.center, gamma * self.shape, self.p, self.mode)

    def to_dict(self):
        return {
            "kind": "l1" if self.p == 1 else "linf",
            "mode": self.mode,
            "center": self.center.tolist(),
            "shape": self.shape.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["center"], data["shape"], 1 if data["kind"] == "l1" else np.inf,
                   data.get("mode", "diag"))


@dataclass
class LiftedL1Rep:
    """``||M xi - c||_1 <= 1`` written with slacks ``zeta`` as ``3n + 1`` rows."""

    M: np.ndarray
    c: np.ndarray

    @property
    def dim(self):
        return self.c.size

    @property
    def n_inequalities(self):
        return 3 * self.dim + 1

    def inequalities(self):
        """``(A_xi, A_zeta, b)`` with ``A_xi xi + A_zeta zeta <= b``."""
        n = self.dim
        I = np.eye(n)
        Z = np.zeros((n, n))
        A_xi = np.vstack([self.M, -self.M, Z, np.zeros((1, n))])
        A_zeta = np.vstack([-I, -I, -I, np.ones((1, n))])
        b = np.concatenate([self.c, -self.c, np.zeros(n), [1.0]])
        return A_xi, A_zeta, b

    def contains(self, xi, tol=MEMBERSHIP_TOL):
        """Exists ``zeta`` feasible; the tightest choice is ``|M xi - c|``."""
        xi = np.atleast_2d(xi)
        zeta = np.abs(xi @ self.M.T - self.c)
        return zeta.sum(axis=1) <= 1.0 + tol

    def to_dict(self):
        return {"M": self.M.tolist(), "c": self.c.tolist(), "n_inequalities": self.n_inequalities}


@dataclass
class SampledSAS:
    """Centered intersection of scenario sets."""

    poly: CenteredPolytope
    n_scenarios: int
    rows_before_dedup: int
    radius: float

    @property
    def center(self):
        return self.poly.center

    @property
    def dim(self):
        return self.poly.dim

    def to_dict(self):
        return {
            "kind": "sampled",
            "center": self.center.tolist(),
            "radius": self.radius,
            "n_scenarios": self.n_scenarios,
            "rows_before_dedup": self.rows_before_dedup,
            "A": self.poly.poly.A.tolist(),
            "b": self.poly.poly.b.tolist(),
        }


# ---------------------------------------------------------------------------
# queries


def sas_support(s: NormSAS, f):
    """Support value(s) ``f'x_c + ||P f||_q``; ``f`` may be ``(n,)`` or ``(K, n)``."""
    f = np.asarray(f, dtype=float)
    Pf = f @ s.shape  # shape is symmetric
    return f @ s.center + np.linalg.norm(Pf, ord=s.dual, axis=-1)


def sas_vertices(s: NormSAS):
    n = s.dim
    if s.p == 1:
        Z = np.vstack([np.eye(n), -np.eye(n)])
    else:
        if n > MAX_LINF_VERTEX_DIM:
            raise ValueError(f"refusing to list 2^{n} vertices (limit n <= {MAX_LINF_VERTEX_DIM})")
        Z = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    return s.center + Z @ s.shape.T


def sas_membership(s: NormSAS, xi, tol=MEMBERSHIP_TOL):
    xi = np.asarray(xi, dtype=float)
    z = (xi - s.center) @ s.inverse().T
    inside = np.linalg.norm(np.atleast_2d(z), ord=s.p, axis=1) <= 1.0 + tol
    return bool(inside[0]) if xi.ndim == 1 else inside


def lift_l1(s: NormSAS) -> LiftedL1Rep:
    if s.p != 1:
        raise ValueError("lift_l1 needs an l1 set")
    M = s.inverse()
    return LiftedL1Rep(M, M @ s.center)


def hrep_linf(s: NormSAS) -> HPolytope:
    if s.p != np.inf:
        raise ValueError("hrep_linf needs an l-infinity set")
    M = s.inverse()
    Mc = M @ s.center
    return HPolytope(np.vstack([M, -M]), np.concatenate([1.0 + Mc, 1.0 - Mc]))


# ---------------------------------------------------------------------------
# design


def design_sampled_poly(scen: ScenarioSet, box: HPolytope | None = None,
                        center="chebyshev") -> SampledSAS:
    """Intersection of all scenario rows, optionally clipped to ``box``.

    The scaling center defaults to the Chebyshev center. ``center`` may
    instead be ``"origin"`` or an explicit point, which must be strictly
    inside the intersection.
    """
    A, b = scen.stacked()
    poly = HPolytope(A, b)
    if box is not None:
        poly = poly.intersect(box)
    if poly.trivially_empty:
        raise EmptySetError("scenario intersection is empty")
    cheb, radius = chebyshev_center(poly)
    scale = max(1.0, np.abs(cheb).max())
    if radius <= 1e-9 * scale:
        raise EmptySetError("scenario intersection has no interior (empty or lower-dimensional)")
    if isinstance(center, str):
        if center == "chebyshev":
            point = cheb
        elif center == "origin":
            point = np.zeros(poly.dim)
        else:
            raise ValueError(f"unknown center rule {center!r}")
    else:
        point = np.asarray(center, dtype=float)
    return SampledSAS(CenteredPolytope(poly, point), scen.N, A.shape[0], radius)


def _design_lp(D: HPolytope, p, mu, fixed=None):
    """LP over ``(x_c, diag P)`` maximizing ``trace P`` with ``x_c + P B_p`` inside ``D``.

    ``fixed`` pins center coordinates; NaN entries stay free.
    """
    n = D.dim
    F, g = D.A, D.b
    absF = np.abs(F)
    if _norm_code(p) == np.inf:
        # dual norm l1: f'x_c + sum_j |f_j| d_j <= g
        A = np.hstack([F, absF])
        b = g
    else:
        # dual norm l-inf: f'x_c + |f_j| d_j <= g for every j with f_j != 0
        rows, cols = np.nonzero(absF)
        A = np.zeros((rows.size, 2 * n))
        A[:, :n] = F[rows]
        A[np.arange(rows.size), n + cols] = absF[rows, cols]
        b = g[rows]
    c = np.concatenate([np.zeros(n), np.ones(n)])
    lower = np.concatenate([np.full(n, -np.inf), np.full(n, mu)])
    upper = np.full(2 * n, np.inf)
    if fixed is not None:
        pin = ~np.isnan(fixed)
        lower[:n][pin] = upper[:n][pin] = fixed[pin]
    return LinearProgram(c, A, b, lower=lower, upper=upper, maximize=True)


def _design_full(D: HPolytope, p, mu, fixed=None):
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise RuntimeError("full-shape design needs cvxpy (pip install artifact[sdp])") from exc
    n = D.dim
    P = cp.Variable((n, n), symmetric=True)
    xc = cp.Variable(n)
    FP = D.A @ P
    if _norm_code(p) == 1:
        dual_vals = cp.max(cp.abs(FP), axis=1)
    else:
        dual_vals = cp.sum(cp.abs(FP), axis=1)
    cons = [P >> mu * np.eye(n), D.A @ xc + dual_vals <= D.b]
    if fixed is not None:
        pin = np.flatnonzero(~np.isnan(fixed))
        if pin.size:
            cons.append(xc[pin] == fixed[pin])
    prob = cp.Problem(cp.Maximize(cp.trace(P)), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise EmptySetError(f"full-shape design failed: {prob.status}")
    Pv = 0.5 * (P.value + P.value.T)
    w, V = np.linalg.eigh(Pv)
    Pv = (V * np.maximum(w, mu)) @ V.T
    return xc.value, 0.5 * (Pv + Pv.T)


def design_norm_sas(D: HPolytope, p=1, mode="diag", mu_rel=1e-6, center=None) -> NormSAS:
    """Largest-trace ``x_c + P B_p`` contained in ``D``.

    ``P`` is kept above ``mu I`` with ``mu = mu_rel * (box extent of D)`` so
    the result stays invertible. ``center`` optionally pins the center;
    NaN entries are left to the optimizer.
    """
    fixed = None
    if center is not None:
        fixed = np.asarray(center, dtype=float).reshape(D.dim)
    lo, hi = bounding_box(D)  # raises on unbounded / empty D
    mu = mu_rel * max(float(np.max(hi - lo)), 1e-300)
    if mode == "diag":
        lp = _design_lp(D, p, mu, fixed)
        log.debug("norm-SAS design LP: %d rows x %d columns", lp.A.shape[0], lp.n)
        res = solve_lp(lp)
        if res.status is Status.INFEASIBLE:
            raise EmptySetError("design polytope has no room for a nondegenerate SAS")
        if res.status is Status.UNBOUNDED:
            raise UnboundedError("design LP is unbounded")
        if not res.optimal:
            raise RuntimeError(f"design LP failed: {res.status.value}")
        n = D.dim
        center = res.x[:n]
        shape = np.diag(np.maximum(res.x[n:], mu))
    elif mode == "full":
        center, shape = _design_full(D, p, mu, fixed)
    else:
        raise ValueError("mode must be 'diag' or 'full'")

    # enforce containment exactly up to rounding
    sas = NormSAS(center, shape, p, mode)
    slack = D.b - D.A @ center
    reach = np.linalg.norm(D.A @ shape, ord=sas.dual, axis=1)
    if np.any(slack <= 0):
        raise EmptySetError("designed center is not interior to D")
    ratio = np.min(slack / np.where(reach > 0, reach, np.inf))
    if ratio < 1.0:
        sas = sas.scaled(ratio)
    return sas
