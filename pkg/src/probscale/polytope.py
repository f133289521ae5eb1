"""H-representation polytopes ``{x : A x <= b}``.

Support functions and Chebyshev centers are LPs solved through
:mod:`probscale.optim_backend`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from probscale.errors import EmptySetError, UnboundedError
from probscale.optim_backend import LinearProgram, ObjectiveSweep, Status, solve_lp
from probscale.uncertainty import SampleStream

CENTER_TOL = 1e-9


class HPolytope:
    """Finite intersection of halfspaces.

    Rows with a zero normal are dropped when ``b >= 0``; a zero normal with
    ``b < 0`` marks the polytope as trivially empty (``trivially_empty``).
    """

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has length {b.size}")
        if A.shape[0] < 1:
            raise ValueError("a polytope needs at least one row")
        zero = ~np.any(A != 0.0, axis=1)
        self.trivially_empty = bool(np.any(zero & (b < 0)))
        self.n_input_rows = A.shape[0]
        keep = ~zero
        self.dim = A.shape[1]
        self.A = A[keep]
        self.b = b[keep]

    @property
    def n_rows(self):
        return self.A.shape[0]

    def contains(self, points, tol=0.0):
        """Membership for one point ``(n,)`` or a batch ``(K, n)``."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if self.trivially_empty:
            out = np.zeros(pts.shape[0], dtype=bool)
        elif self.n_rows == 0:
            out = np.ones(pts.shape[0], dtype=bool)
        else:
            out = np.all(pts @ self.A.T <= self.b + tol, axis=1)
        return bool(out[0]) if single else out

    def intersect(self, other: "HPolytope") -> "HPolytope":
        A = np.vstack([self.A, other.A]) if self.n_rows + other.n_rows else self.A
        b = np.concatenate([self.b, other.b])
        if self.trivially_empty or other.trivially_empty:
            A = np.vstack([A, np.zeros((1, self.dim))])
            b = np.concatenate([b, [-1.0]])
        return HPolytope(A, b)

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))

    def to_dict(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["A"], dtype=float), np.asarray(data["b"], dtype=float))

    def to_json(self):
        return json.dumps(self.to_dict())

    def to_csv(self):
        """One row per halfspace: ``a_1, ..., a_n, b``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"a{i + 1}" for i in range(self.dim)] + ["b"])
        for a, bi in zip(self.A, self.b):
            w.writerow([repr(float(v)) for v in a] + [repr(float(bi))])
        return buf.getvalue()

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, rows={self.n_rows})"


@dataclass
class CenteredPolytope:
    poly: HPolytope
    center: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        slack = self.poly.b - self.poly.A @ self.center
        if self.poly.trivially_empty or (slack.size and slack.min() < CENTER_TOL):
            raise EmptySetError("center is not strictly inside the polytope")

    @property
    def dim(self):
        return self.poly.dim


def support(poly: HPolytope, f) -> float:
    """``sup { f'x : x in poly }``; returns ``inf`` when unbounded."""
    f = np.asarray(f, dtype=float)
    if poly.trivially_empty:
        raise EmptySetError("support of an empty polytope")
    if poly.n_rows == 0:
        return 0.0 if not np.any(f) else np.inf
    res = solve_lp(LinearProgram(f, poly.A, poly.b, maximize=True))
    if res.status is Status.UNBOUNDED:
        return np.inf
    if res.status is Status.INFEASIBLE:
        raise EmptySetError("support of an empty polytope")
    if not res.optimal:
        raise RuntimeError(f"support LP failed with status {res.status.value}")
    return res.objective


class SupportOracle:
    """Support function of one polytope evaluated for many directions."""

    def __init__(self, poly: HPolytope):
        if poly.trivially_empty:
            raise EmptySetError("support of an empty polytope")
        self.poly = poly
        self._sweep = ObjectiveSweep(poly.A, poly.b, maximize=True)

    def __call__(self, f) -> float:
        res = self._sweep.solve(f)
        if res.status is Status.UNBOUNDED:
            return np.inf
        if res.status is Status.INFEASIBLE:
            raise EmptySetError("support of an empty polytope")
        if not res.optimal:
            # fall back to a cold solve before giving up
            return support(self.poly, f)
        return res.objective


def support_point(poly: HPolytope, f):
    """A maximizer of ``f'x`` over ``poly`` (bounded case only)."""
    res = solve_lp(LinearProgram(f, poly.A, poly.b, maximize=True))
    if res.status is Status.UNBOUNDED:
        raise UnboundedError("support is unbounded in this direction")
    if not res.optimal:
        raise EmptySetError(f"support LP ended with status {res.status.value}")
    return res.x


def chebyshev_center(poly: HPolytope):
    """Center and radius of the largest inscribed Euclidean ball."""
    if poly.trivially_empty:
        raise EmptySetError("polytope is empty")
    n = poly.dim
    norms = np.linalg.norm(poly.A, axis=1)
    A = np.hstack([poly.A, norms[:, None]])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    lower = np.full(n + 1, -np.inf)
    lower[-1] = 0.0
    res = solve_lp(LinearProgram(c, A, poly.b, lower=lower, maximize=True))
    if res.status is Status.UNBOUNDED:
        raise UnboundedError("inscribed-ball radius is unbounded")
    if res.status is Status.INFEASIBLE:
        raise EmptySetError("polytope is empty")
    if not res.optimal:
        raise RuntimeError(f"Chebyshev LP failed with status {res.status.value}")
    return res.x[:n], float(res.x[n])


def scale_about(cp: CenteredPolytope, gamma: float) -> HPolytope:
    """``{center + gamma (s - center) : s in poly}`` in H-representation."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    A = cp.poly.A
    return HPolytope(A, gamma * cp.poly.b + (1.0 - gamma) * (A @ cp.center))


def bounding_box(poly: HPolytope):
    """Axis-aligned bounds via ``2n`` support LPs; raises if unbounded."""
    n = poly.dim
    lo, hi = np.empty(n), np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        hi[i] = support(poly, e)
        lo[i] = -support(poly, -e)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise UnboundedError("polytope is unbounded")
    return lo, hi


def mc_volume(membership, box, N: int, stream: SampleStream):
    """Hit-or-miss volume estimate inside an enclosing box.

    Returns ``(estimate, stderr)``.
    """
    if N < 100:
        raise ValueError("N must be at least 100")
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    pts = lo + (hi - lo) * stream.uniforms(0, N, lo.size)
    hits = np.asarray(membership(pts), dtype=bool)
    frac = hits.mean()
    vol = float(np.prod(hi - lo))
    return vol * frac, vol * np.sqrt(frac * (1.0 - frac) / N)

