"""Random uncertainty models, reproducible sample streams and uncertain
linear inequalities ``F(q) xi <= g(q)``.

Sampling is counter based: sample ``i`` of a stream always consumes the
same Philox counter block, so any slice of samples can be regenerated
independently and batches are bit-identical to one-at-a-time draws.
Gaussian components are produced by inverse-CDF transforms so that each
sample consumes a fixed number of uniforms.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class UniformBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("UniformBox bounds must have equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("UniformBox bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("UniformBox requires lower <= upper")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @property
    def dim(self):
        return len(self.lower)

    def transform(self, u):
        lo, hi = np.array(self.lower), np.array(self.upper)
        return lo + (hi - lo) * u

    def mean(self):
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    def to_dict(self):
        return {"type": "uniform_box", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class GaussianVector:
    mean: tuple
    cov: tuple
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mu.size, mu.size):
            raise ValueError("GaussianVector covariance must be square and match the mean")
        scale = max(1.0, np.abs(cov).max())
        if np.abs(cov - cov.T).max() > 1e-9 * scale:
            raise ValueError("GaussianVector covariance must be symmetric")
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
        if w[0] < -1e-8 * max(1.0, abs(w[-1])):
            raise ValueError("GaussianVector covariance must be positive semidefinite")
        object.__setattr__(self, "mean", tuple(mu.tolist()))
        object.__setattr__(self, "cov", tuple(map(tuple, cov.tolist())))
        object.__setattr__(self, "_factor", V * np.sqrt(np.clip(w, 0.0, None)))

    @property
    def dim(self):
        return len(self.mean)

    def transform(self, u):
        z = ndtri(u)
        return np.array(self.mean) + z @ self._factor.T

    def to_dict(self):
        return {"type": "gaussian", "mean": list(self.mean), "cov": [list(r) for r in self.cov]}


@dataclass(frozen=True)
class ScalarUniformFactor:
    """Scalar ``U[low, high]`` that multiplies the block at index ``target``."""

    low: float
    high: float
    target: int

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high)):
            raise ValueError("factor interval bounds must be finite")
        if self.low > self.high:
            raise ValueError("factor interval requires low <= high")

    dim = 1

    def transform(self, u):
        return self.low + (self.high - self.low) * u

    def to_dict(self):
        return {"type": "scalar_uniform_factor", "low": self.low, "high": self.high,
                "target": self.target}


_BLOCK_TYPES = {
    "uniform_box": lambda d: UniformBox(d["lower"], d["upper"]),
    "gaussian": lambda d: GaussianVector(d["mean"], d["cov"]),
    "scalar_uniform_factor": lambda d: ScalarUniformFactor(float(d["low"]), float(d["high"]),
                                                           int(d["target"])),
}


@dataclass(frozen=True)
class DistributionSpec:
    """Independent blocks stacked into one uncertainty vector ``q``.

    Raw samples keep every component, factors included; :meth:`effective`
    applies each scalar factor to its target block and drops the factor.
    """

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ValueError("a distribution needs at least one block")
        for i, blk in enumerate(blocks):
            if isinstance(blk, ScalarUniformFactor):
                if not 0 <= blk.target < len(blocks) or blk.target == i:
                    raise ValueError(f"factor block {i} has invalid target {blk.target}")
                if isinstance(blocks[blk.target], ScalarUniformFactor):
                    raise ValueError("a factor cannot multiply another factor")
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self):
        return sum(b.dim for b in self.blocks)

    def _offsets(self):
        return np.concatenate([[0], np.cumsum([b.dim for b in self.blocks])]).astype(int)

    @property
    def effective_dim(self):
        return sum(b.dim for b in self.blocks if not isinstance(b, ScalarUniformFactor))

    def transform(self, u):
        off = self._offsets()
        out = np.empty_like(u)
        for k, blk in enumerate(self.blocks):
            out[:, off[k]:off[k + 1]] = np.reshape(blk.transform(u[:, off[k]:off[k + 1]]),
                                                   (u.shape[0], blk.dim))
        return out

    def effective(self, q):
        """Apply factors to their targets; returns ``(N, effective_dim)``."""
        q = np.atleast_2d(q)
        off = self._offsets()
        parts = []
        for k, blk in enumerate(self.blocks):
            if isinstance(blk, ScalarUniformFactor):
                continue
            part = q[:, off[k]:off[k + 1]]
            for j, other in enumerate(self.blocks):
                if isinstance(other, ScalarUniformFactor) and other.target == k:
                    part = part * q[:, off[j]:off[j] + 1]
            parts.append(part)
        return np.concatenate(parts, axis=1)

    def mean(self):
        """Mean of the raw vector."""
        out = []
        for blk in self.blocks:
            if isinstance(blk, ScalarUniformFactor):
                out.append(0.5 * (blk.low + blk.high))
            elif isinstance(blk, UniformBox):
                out.extend(blk.mean())
            else:
                out.extend(blk.mean)
        return np.array(out, dtype=float)

    def effective_mean(self):
        """Mean of the effective vector (factors are independent of their targets)."""
        out = []
        for k, blk in enumerate(self.blocks):
            if isinstance(blk, ScalarUniformFactor):
                continue
            mu = blk.mean() if isinstance(blk, UniformBox) else np.array(blk.mean)
            for other in self.blocks:
                if isinstance(other, ScalarUniformFactor) and other.target == k:
                    mu = mu * 0.5 * (other.low + other.high)
            out.extend(mu)
        return np.array(out, dtype=float)

    def repeated(self, times):
        """``times`` independent copies stacked (e.g. a disturbance sequence)."""
        blocks = []
        nb = len(self.blocks)
        for t in range(times):
            for blk in self.blocks:
                if isinstance(blk, ScalarUniformFactor):
                    blk = ScalarUniformFactor(blk.low, blk.high, blk.target + t * nb)
                blocks.append(blk)
        return DistributionSpec(tuple(blocks))

    def to_dict(self):
        return {"blocks": [b.to_dict() for b in self.blocks]}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(_BLOCK_TYPES[b["type"]](b) for b in data["blocks"]))


# ---------------------------------------------------------------------------
# streams


def _name_id(name):
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode())


@dataclass(frozen=True)
class SampleStream:
    """A named substream of a 64-bit seed.

    ``path`` selects the substream; the sample index selects the counter
    block inside it.
    """

    seed: int
    path: tuple = ()

    def child(self, *names):
        return SampleStream(self.seed, self.path + tuple(_name_id(n) for n in names))

    def _key(self):
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=self.path)
        return ss.generate_state(2, np.uint64)

    def uniforms(self, start, count, width):
        """Open-interval uniforms, row ``i`` belongs to sample ``start + i``."""
        if count < 0 or start < 0:
            raise ValueError("start and count must be nonnegative")
        blocks = max(1, -(-width // 4))
        counter = np.array([start * blocks, 0, 0, 0], dtype=np.uint64)
        bitgen = np.random.Philox(key=self._key(), counter=counter)
        raw = bitgen.random_raw(count * blocks * 4).reshape(count, blocks * 4)[:, :width]
        return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53


def draw(spec: DistributionSpec, stream: SampleStream, count: int, start: int = 0) -> np.ndarray:
    """Samples ``start .. start+count-1`` of ``stream``, shape ``(count, spec.dim)``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    return spec.transform(stream.uniforms(start, count, spec.dim))


# ---------------------------------------------------------------------------
# uncertain inequalities


class UncertainConstraintSystem:
    """Map from an uncertainty sample ``q`` to ``(F(q), g(q))``.

    Subclasses implement :meth:`realize_batch`; ``F`` has shape
    ``(N, p, n_xi)`` and ``g`` shape ``(N, p)``.
    """

    form = "abstract"

    def __init__(self, n_xi, p):
        self.n_xi = int(n_xi)
        self.p = int(p)

    def realize_batch(self, Q):
        raise NotImplementedError

    def realize(self, q):
        F, g = self.realize_batch(np.atleast_2d(q))
        return F[0], g[0]


class AffineInQ(UncertainConstraintSystem):
    """``F(q) = F0 + sum_k q_k F_k`` and ``g(q) = g0 + sum_k q_k g_k``."""

    form = "affine"

    def __init__(self, F0, g0, F_terms=None, g_terms=None):
        F0 = np.atleast_2d(np.asarray(F0, dtype=float))
        super().__init__(F0.shape[1], F0.shape[0])
        self.F0 = F0
        self.g0 = np.atleast_1d(np.asarray(g0, dtype=float))
        if self.g0.size != self.p:
            raise ValueError("g0 length must equal the row count of F0")
        self.F_terms = (np.zeros((0, self.p, self.n_xi)) if F_terms is None
                        else np.asarray(F_terms, dtype=float).reshape(-1, self.p, self.n_xi))
        self.g_terms = (np.zeros((len(self.F_terms), self.p)) if g_terms is None
                        else np.asarray(g_terms, dtype=float).reshape(-1, self.p))
        if len(self.g_terms) != len(self.F_terms):
            raise ValueError("F_terms and g_terms must have the same number of terms")

    @property
    def n_q(self):
        return len(self.F_terms)

    def realize_batch(self, Q):
        Q = np.atleast_2d(Q)[:, : self.n_q]
        F = self.F0 + np.einsum("nk,kij->nij", Q, self.F_terms)
        g = self.g0 + Q @ self.g_terms
        return F, g


class ProductForm(UncertainConstraintSystem):
    """Rows are the effective uncertainty vector reshaped to ``(p, n_xi)``.

    With a scalar factor ``q1`` multiplying a Gaussian block ``q2`` this is
    ``f(q) = q1 * q2`` and ``f(q)' xi <= rhs``.
    """

    form = "product"

    def __init__(self, spec: DistributionSpec, n_xi, rhs=1.0):
        eff = spec.effective_dim
        if eff % n_xi:
            raise ValueError("effective uncertainty dimension must be a multiple of n_xi")
        super().__init__(n_xi, eff // n_xi)
        self.spec = spec
        self.rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (self.p,)).copy()

    def realize_batch(self, Q):
        E = self.spec.effective(Q)
        F = E.reshape(E.shape[0], self.p, self.n_xi)
        g = np.broadcast_to(self.rhs, (E.shape[0], self.p)).copy()
        return F, g


class CallbackSystem(UncertainConstraintSystem):
    """Rows produced by a user function ``fn(Q) -> (F, g)`` on a batch."""

    form = "callback"

    def __init__(self, n_xi, p, fn: Callable):
        super().__init__(n_xi, p)
        self.fn = fn

    def realize_batch(self, Q):
        F, g = self.fn(np.atleast_2d(Q))
        F = np.asarray(F, dtype=float)
        g = np.asarray(g, dtype=float)
        if F.shape[1:] != (self.p, self.n_xi) or g.shape[1:] != (self.p,):
            raise ValueError("callback returned inconsistent dimensions")
        return F, g


@dataclass
class ScenarioSet:
    F: np.ndarray
    g: np.ndarray
    seed: int
    path: tuple
    start: int = 0

    def __post_init__(self):
        if self.F.shape[0] < 1:
            raise ValueError("a scenario set needs at least one scenario")
        if self.F.shape[:2] != self.g.shape:
            raise ValueError("F and g disagree on scenario/row counts")

    @property
    def N(self):
        return self.F.shape[0]

    @property
    def n_xi(self):
        return self.F.shape[2]

    def stacked(self):
        """All rows as one ``(A, b)`` system of ``N * p`` rows."""
        return self.F.reshape(-1, self.n_xi), self.g.reshape(-1)


def realize_scenarios(sys: UncertainConstraintSystem, spec: DistributionSpec,
                      stream: SampleStream, N: int, start: int = 0) -> ScenarioSet:
    if N < 1:
        raise ValueError("N must be at least 1")
    Q = draw(spec, stream, N, start)
    F, g = sys.realize_batch(Q)
    return ScenarioSet(F, g, stream.seed, stream.path, start)


def violation_indicator(sys: UncertainConstraintSystem, xi, q) -> int:
    """1 if any row of ``F(q) xi <= g(q)`` fails, else 0."""
    F, g = sys.realize(q)
    return int(np.any(F @ np.asarray(xi, dtype=float) > g))


def violation_matrix(sys: UncertainConstraintSystem, points, Q) -> np.ndarray:
    """Boolean ``(K, N)``: point ``k`` violates scenario ``i``."""
    F, g = sys.realize_batch(Q)
    points = np.atleast_2d(points)
    lhs = np.einsum("npj,kj->knp", F, points)
    return np.any(lhs > g[None], axis=2)
