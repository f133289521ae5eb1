"""Dense LP and convex QP solving behind a single result contract.

Linear programs are handed to HiGHS (dual simplex) through
:func:`scipy.optimize.linprog`. Convex quadratic programs are solved by a
primal-dual interior-point method with Mehrotra's predictor-corrector,
followed by an equality-constrained polish on the detected active set.

Every other module expresses its convex subproblems through
:func:`solve_lp` and :func:`solve_qp`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class Tolerances:
    """Solver tolerances. Defaults are the contract values."""

    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    kkt_tol: float = 1e-7
    ipm_tol: float = 1e-10
    max_iter: int = 100
    sym_tol: float = 1e-9
    psd_tol: float = 1e-8


DEFAULT_TOL = Tolerances()


def _as_ineq(A, b, n):
    if A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
    if A.size == 0:
        A = A.reshape(0, n)
    return A, b


@dataclass
class LinearProgram:
    """``min`` (or ``max``) of ``c @ x`` subject to ``A @ x <= b`` and box bounds."""

    c: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float)).ravel()
        n = self.c.size
        self.A, self.b = _as_ineq(self.A, self.b, n)
        if self.A.shape[0] != self.b.size:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has length {self.b.size}")
        if self.A.shape[1] != n:
            raise ValueError(f"A has {self.A.shape[1]} columns but c has length {n}")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=float), (n,)).copy()

    @property
    def n(self):
        return self.c.size


@dataclass
class QuadraticProgram:
    """``min 0.5 x'Hx + f'x`` subject to ``A @ x <= b`` with ``H`` PSD."""

    H: np.ndarray
    f: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    tol: Tolerances = field(default=DEFAULT_TOL, repr=False)

    def __post_init__(self):
        self.f = np.atleast_1d(np.asarray(self.f, dtype=float)).ravel()
        n = self.f.size
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        self.A, self.b = _as_ineq(self.A, self.b, n)
        if self.A.shape[0] != self.b.size or self.A.shape[1] != n:
            raise ValueError("inconsistent inequality dimensions")
        scale = max(1.0, np.abs(self.H).max(initial=0.0))
        if np.abs(self.H - self.H.T).max(initial=0.0) > self.tol.sym_tol * scale:
            raise ValueError("H is not symmetric")
        if n:
            lam_min = np.linalg.eigvalsh(0.5 * (self.H + self.H.T))[0]
            if lam_min < -self.tol.psd_tol * np.linalg.norm(self.H, 2):
                raise ValueError(f"H is not positive semidefinite (min eigenvalue {lam_min:.3e})")

    @property
    def n(self):
        return self.f.size


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray | None = None
    objective: float = float("nan")
    dual: np.ndarray | None = None
    bound_duals: tuple | None = None
    iterations: int = 0

    @property
    def optimal(self):
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# LP


_HIGHS_STATUS = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}


def solve_lp(lp: LinearProgram, tol: Tolerances = DEFAULT_TOL) -> SolveResult:
    """Solve a dense LP with HiGHS.

    On ``Optimal`` the result carries the inequality multipliers ``dual``
    (nonnegative, one per row of ``A``) and the bound multipliers as
    reported by HiGHS, so that a caller can check the duality gap.
    """
    sign = -1.0 if lp.maximize else 1.0
    bounds = [(None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi)
              for lo, hi in zip(lp.lower, lp.upper)]
    has_rows = lp.A.shape[0] > 0
    res = linprog(
        sign * lp.c,
        A_ub=lp.A if has_rows else None,
        b_ub=lp.b if has_rows else None,
        bounds=bounds,
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    status = _HIGHS_STATUS.get(res.status, Status.NUMERICAL_FAILURE)
    if status is not Status.OPTIMAL:
        return SolveResult(status, iterations=int(getattr(res, "nit", 0)))
    x = np.asarray(res.x, dtype=float)
    bscale = 1.0 + np.abs(lp.b).max(initial=0.0)
    viol = max(
        (lp.A @ x - lp.b).max(initial=-np.inf) / bscale,
        (lp.lower - x).max(initial=-np.inf),
        (x - lp.upper).max(initial=-np.inf),
    )
    if viol > tol.feas_tol:
        return SolveResult(Status.NUMERICAL_FAILURE, iterations=int(res.nit))
    dual = -np.asarray(res.ineqlin.marginals, dtype=float) if has_rows else np.zeros(0)
    bound_duals = (np.asarray(res.lower.marginals, dtype=float),
                   np.asarray(res.upper.marginals, dtype=float))
    return SolveResult(Status.OPTIMAL, x, float(lp.c @ x), dual, bound_duals, int(res.nit))


def lp_duality_gap(lp: LinearProgram, result: SolveResult) -> float:
    """Relative gap between the primal objective and the dual certificate."""
    sign = -1.0 if lp.maximize else 1.0
    lo_m, up_m = result.bound_duals
    lo = np.where(np.isfinite(lp.lower), lp.lower, 0.0)
    up = np.where(np.isfinite(lp.upper), lp.upper, 0.0)
    dual_obj = -lp.b @ result.dual + lo_m @ lo + up_m @ up
    primal_obj = sign * lp.c @ result.x
    return abs(primal_obj - dual_obj) / max(1.0, abs(primal_obj))


# ---------------------------------------------------------------------------
# QP


def kkt_residual(qp: QuadraticProgram, x, lam) -> float:
    """Largest of stationarity, primal infeasibility, dual infeasibility and
    complementarity violations at ``(x, lam)``."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    stat = np.abs(qp.H @ x + qp.f + qp.A.T @ lam).max(initial=0.0)
    slack = qp.b - qp.A @ x
    primal = np.maximum(-slack, 0.0).max(initial=0.0)
    dual = np.maximum(-lam, 0.0).max(initial=0.0)
    comp = np.abs(lam * slack).max(initial=0.0)
    return float(max(stat, primal, dual, comp))


def _factor(M):
    n = M.shape[0]
    reg = 1e-14 * max(1.0, np.abs(np.diag(M)).max(initial=0.0))
    for _ in range(8):
        try:
            return scipy.linalg.cho_factor(M + reg * np.eye(n), check_finite=False)
        except np.linalg.LinAlgError:
            reg *= 100.0
    return None


def _ipm_start(H, f, A, b):
    """Affine Newton step from ``(0, 1, 1)``, then ``s`` and ``lam`` pushed
    to at least 1 (the usual Mehrotra-style start)."""
    n, m = f.size, b.size
    s = np.ones(m)
    lam = np.ones(m)
    chol = _factor(H + A.T @ A)
    if chol is None:
        return np.zeros(n), np.maximum(b, 1.0), lam
    rd = f + A.T @ lam
    rp = s - b
    rc = s * lam
    dx = scipy.linalg.cho_solve(chol, -rd + A.T @ ((rc - lam * rp) / s), check_finite=False)
    ds = -rp - A @ dx
    dl = (-rc - lam * ds) / s
    return dx, np.maximum(np.abs(s + ds), 1.0), np.maximum(np.abs(lam + dl), 1.0)


# a stalled iterate this accurate is handed to the polish step
STALL_ACCEPT = 1e-8


def _ipm(H, f, A, b, tol):
    n, m = f.size, b.size
    x, s, lam = _ipm_start(H, f, A, b)
    bnorm = 1.0 + np.abs(b).max()
    reason = "maxiter"
    best, best_merit = None, np.inf
    it = 0
    for it in range(1, tol.max_iter + 1):
        Hx, Atl = H @ x, A.T @ lam
        rd = Hx + f + Atl
        rp = A @ x + s - b
        mu = s @ lam / m
        dnorm = 1.0 + max(np.abs(f).max(initial=0.0), np.abs(Hx).max(initial=0.0),
                          np.abs(Atl).max(initial=0.0))
        merit = max(np.abs(rp).max() / bnorm, np.abs(rd).max() / dnorm, mu)
        if merit < best_merit:
            best, best_merit = (x, s, lam), merit
        if merit <= tol.ipm_tol:
            reason = "converged"
            break
        if mu < 1e-3 * tol.ipm_tol and merit > 1e3 * best_merit:
            # rounding noise dominates; fall back to the best iterate
            break
        if np.abs(x).max(initial=0.0) > 1e10:
            reason = "diverged"
            break
        if lam.max() > 1e13:
            reason = "dual_blowup"
            break
        d = lam / s
        chol = _factor(H + (A.T * d) @ A)
        if chol is None:
            reason = "singular"
            break

        def direction(rc):
            rhs = -rd + A.T @ ((rc - lam * rp) / s)
            dx = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
            ds = -rp - A @ dx
            dl = (-rc - lam * ds) / s
            return dx, ds, dl

        def max_step(v, dv):
            neg = dv < 0
            if not neg.any():
                return 1.0
            return min(1.0, float((-v[neg] / dv[neg]).min()))

        dx, ds, dl = direction(s * lam)
        a_aff = min(max_step(s, ds), max_step(lam, dl))
        mu_aff = (s + a_aff * ds) @ (lam + a_aff * dl) / m
        sigma = (mu_aff / mu) ** 3
        dx, ds, dl = direction(s * lam + ds * dl - sigma * mu)
        alpha = min(1.0, 0.995 * min(max_step(s, ds), max_step(lam, dl)))
        x = x + alpha * dx
        s = np.maximum(s + alpha * ds, 1e-300)
        lam = np.maximum(lam + alpha * dl, 1e-300)
    if reason != "converged" and best is not None:
        x, s, lam = best
        if best_merit <= STALL_ACCEPT:
            reason = "converged"
    return x, s, lam, it, reason


def _polish(H, f, A, b, x, s, lam):
    # try the natural active-set guess, then a strict one that drops rows
    # whose multiplier and slack are both still small
    tried = set()
    for ratio in (1.0, 1e4):
        act = np.flatnonzero(lam > ratio * s)
        key = act.tobytes()
        if key in tried:
            continue
        tried.add(key)
        out = _polish_on(H, f, A, b, lam, act)
        if out is not None:
            return out
    return None


def _polish_on(H, f, A, b, lam, act):
    n = f.size
    if act.size > n:
        # many nearly parallel active rows: keep an independent subset,
        # preferring large multipliers
        act = act[np.argsort(-lam[act], kind="stable")]
        _, Rq, piv = scipy.linalg.qr(A[act].T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(Rq))
        rank = int(np.sum(diag > 1e-10 * max(diag.max(initial=0.0), 1e-300)))
        act = np.sort(act[piv[:rank]])
    k = act.size
    Aa = A[act]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    rhs = np.concatenate([-f, b[act]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    xp = sol[:n]
    lam_a = sol[n:]
    if not np.all(np.isfinite(sol)):
        return None
    if lam_a.size and lam_a.min() < -1e-10:
        return None
    if (A @ xp - b).max() > 1e-10 * (1.0 + np.abs(b).max()):
        return None
    lp = np.zeros(b.size)
    lp[act] = np.maximum(lam_a, 0.0)
    if np.abs(H @ xp + f + A.T @ lp).max() > 1e-9 * (1.0 + np.abs(f).max(initial=0.0)):
        return None
    return xp, lp


def _qp_objective(H, f, x):
    return float(0.5 * x @ H @ x + f @ x)


def solve_qp(qp: QuadraticProgram, tol: Tolerances | None = None) -> SolveResult:
    """Solve a convex QP.

    Rows are normalized internally, so positive row scaling of ``(A, b)``
    does not change the solution. On ``Optimal`` the result carries the
    inequality multipliers in ``dual``.
    """
    tol = tol or qp.tol
    H, f, A, b = qp.H, qp.f, qp.A, qp.b
    n, m = qp.n, b.size
    if m == 0:
        return _solve_unconstrained(H, f, tol)

    norms = np.linalg.norm(A, axis=1)
    zero = norms <= 1e-300
    if np.any(zero & (b < 0)):
        return SolveResult(Status.INFEASIBLE)
    keep = np.flatnonzero(~zero)
    if keep.size == 0:
        return _solve_unconstrained(H, f, tol, m=m)
    As = A[keep] / norms[keep, None]
    bs = b[keep] / norms[keep]

    x, s, lam, it, reason = _ipm(H, f, As, bs, tol)
    pol = _polish(H, f, As, bs, x, s, lam)
    if reason != "converged":
        # the polish certificate (feasible, stationary, lam >= 0) still
        # proves optimality when the iterations stalled near the solution
        if pol is None:
            return _diagnose_failure(qp, reason, it, tol)
        x, lam = pol
    elif pol is not None:
        xp, lp = pol
        if _qp_objective(H, f, xp) <= _qp_objective(H, f, x) + 1e-9 * (1.0 + abs(_qp_objective(H, f, x))):
            x, lam = xp, lp

    dual = np.zeros(m)
    dual[keep] = lam / norms[keep]
    if (A @ x - b).max() > tol.feas_tol * (1.0 + np.abs(b).max()):
        return SolveResult(Status.NUMERICAL_FAILURE, iterations=it)
    scale = 1.0 + max(np.abs(f).max(initial=0.0), np.abs(b).max(), np.abs(H @ x).max(initial=0.0))
    if kkt_residual(qp, x, dual) > tol.kkt_tol * scale:
        return SolveResult(Status.NUMERICAL_FAILURE, iterations=it)
    return SolveResult(Status.OPTIMAL, x, _qp_objective(H, f, x), dual, iterations=it)


def _solve_unconstrained(H, f, tol, m=0):
    x = np.linalg.lstsq(H, -f, rcond=None)[0] if f.size else np.zeros(0)
    if np.abs(H @ x + f).max(initial=0.0) > tol.kkt_tol * (1.0 + np.abs(f).max(initial=0.0)):
        return SolveResult(Status.UNBOUNDED)
    return SolveResult(Status.OPTIMAL, x, _qp_objective(H, f, x), np.zeros(m))


def _diagnose_failure(qp, reason, it, tol):
    feas = solve_lp(LinearProgram(np.zeros(qp.n), qp.A, qp.b), tol)
    if feas.status is Status.INFEASIBLE:
        return SolveResult(Status.INFEASIBLE, iterations=it)
    if feas.optimal:
        # recession direction d with A d <= 0, H d = 0 and f'd < 0 means unbounded
        n = qp.n
        A_rec = np.vstack([qp.A, qp.H, -qp.H])
        b_rec = np.zeros(A_rec.shape[0])
        rec = solve_lp(LinearProgram(qp.f, A_rec, b_rec, lower=-np.ones(n), upper=np.ones(n)), tol)
        if rec.optimal and rec.objective < -1e-9:
            return SolveResult(Status.UNBOUNDED, iterations=it)
    return SolveResult(Status.NUMERICAL_FAILURE, iterations=it)


# ---------------------------------------------------------------------------
# repeated LPs over a fixed feasible set


class ObjectiveSweep:
    """Fixed ``{x : A x <= b}`` solved for many objectives with warm starts.

    Each call re-solves from the previous basis, which is several times
    faster than :func:`solve_lp` for support-function sweeps. A call
    sequence is deterministic, but a single result can depend on the
    calls that preceded it at round-off level.
    """

    def __init__(self, A, b, maximize=True):
        import highspy

        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        m, n = A.shape
        self.n = n
        self.A, self.b = A, b
        self._h = highspy.Highs()
        self._h.setOptionValue("output_flag", False)
        self._h.setOptionValue("primal_feasibility_tolerance", 1e-10)
        self._h.setOptionValue("dual_feasibility_tolerance", 1e-10)
        inf = highspy.kHighsInf
        lp = highspy.HighsLp()
        lp.num_col_ = n
        lp.num_row_ = m
        lp.col_cost_ = np.zeros(n)
        lp.col_lower_ = np.full(n, -inf)
        lp.col_upper_ = np.full(n, inf)
        lp.row_lower_ = np.full(m, -inf)
        lp.row_upper_ = b
        lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = np.arange(0, m * n + 1, n, dtype=np.int32)
        lp.a_matrix_.index_ = np.tile(np.arange(n, dtype=np.int32), m)
        lp.a_matrix_.value_ = A.ravel()
        lp.sense_ = highspy.ObjSense.kMaximize if maximize else highspy.ObjSense.kMinimize
        self._h.passModel(lp)
        self._idx = np.arange(n, dtype=np.int32)
        ms = highspy.HighsModelStatus
        self._status = {
            ms.kOptimal: Status.OPTIMAL,
            ms.kInfeasible: Status.INFEASIBLE,
            ms.kUnbounded: Status.UNBOUNDED,
            ms.kUnboundedOrInfeasible: Status.UNBOUNDED,
        }

    def solve(self, c) -> SolveResult:
        c = np.asarray(c, dtype=float)
        self._h.changeColsCost(self.n, self._idx, c)
        self._h.run()
        status = self._status.get(self._h.getModelStatus(), Status.NUMERICAL_FAILURE)
        if status is not Status.OPTIMAL:
            return SolveResult(status)
        x = np.asarray(self._h.getSolution().col_value, dtype=float)
        return SolveResult(Status.OPTIMAL, x, float(c @ x))
