"""Offline-sampling stochastic MPC with scenario (OS) or probabilistically
scaled (PS) constraint sets.

The controller uses the prestabilizing parametrization ``u = K x + v``.
Predictions over a horizon ``T`` are affine in ``(x_k, v)`` for every
disturbance sequence, so both the expected cost and every chance
constraint can be written over ``xi = [x_k; v] in R^(n + mT)``:

* the expected cost is ``[x; v; 1]' S [x; v; 1]``, with ``S`` estimated
  as a Monte Carlo average of the exact quadratic form;
* constraint row ``j`` at prediction step ``l`` becomes
  ``f(w)' xi <= 1 - (additive part)``.

OS keeps ``N_LT`` sampled rows per constraint online; PS replaces them by a
scaled simple approximating set with a sample-independent row count.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from probscale.errors import ProbScaleError, StageError
from probscale.optim_backend import QuadraticProgram, solve_qp
from probscale.polytope import HPolytope
from probscale.sas import design_norm_sas, design_sampled_poly, hrep_linf, lift_l1
from probscale.scaling import (
    ScaledSAS,
    ScalingConfig,
    learning_sample_size,
    probabilistic_scale,
)
from probscale.uncertainty import (
    CallbackSystem,
    DistributionSpec,
    SampleStream,
    ScenarioSet,
    UniformBox,
    draw,
)

log = logging.getLogger(__name__)

CHUNK = 4096


# ---------------------------------------------------------------------------
# model


@dataclass
class UncertainLtiSystem:
    """``x+ = A(w) x + B(w) u + a(w)`` with affine dependence on ``w``.

    ``w`` is the effective disturbance vector of ``disturbance`` (scalar
    factors already applied) and must have zero mean.
    """

    A0: np.ndarray
    B0: np.ndarray
    disturbance: DistributionSpec
    A_terms: np.ndarray | None = None
    B_terms: np.ndarray | None = None
    a_terms: np.ndarray | None = None

    def __post_init__(self):
        self.A0 = np.atleast_2d(np.asarray(self.A0, dtype=float))
        self.B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        n, m = self.B0.shape
        if self.A0.shape != (n, n):
            raise ValueError("A0 must be n x n and match B0")
        nw = self.disturbance.effective_dim
        self.A_terms = (np.zeros((nw, n, n)) if self.A_terms is None
                        else np.asarray(self.A_terms, dtype=float).reshape(nw, n, n))
        self.B_terms = (np.zeros((nw, n, m)) if self.B_terms is None
                        else np.asarray(self.B_terms, dtype=float).reshape(nw, n, m))
        self.a_terms = (np.zeros((nw, n)) if self.a_terms is None
                        else np.asarray(self.a_terms, dtype=float).reshape(nw, n))
        mean = self.disturbance.effective_mean()
        if np.abs(mean).max(initial=0.0) > 1e-12:
            raise ValueError("disturbance must be zero-mean")

    @property
    def n(self):
        return self.A0.shape[0]

    @property
    def m(self):
        return self.B0.shape[1]

    @property
    def n_w(self):
        return self.disturbance.effective_dim

    def matrices(self, W):
        """``A, B, a`` for a batch of effective disturbances ``(..., n_w)``."""
        W = np.asarray(W, dtype=float)
        A = self.A0 + np.einsum("...k,kij->...ij", W, self.A_terms)
        B = self.B0 + np.einsum("...k,kij->...ij", W, self.B_terms)
        a = np.einsum("...k,ki->...i", W, self.a_terms)
        return A, B, a

    def step(self, x, u, w):
        A, B, a = self.matrices(w)
        return A @ x + B @ u + a


@dataclass
class SmpcProblem:
    """System, horizon, weights, gain and chance-constraint data.

    Constraint rows are ``H_x[j] x + H_u[j] u <= 1`` with violation level
    ``eps[j]``; rows are indexed from 0.
    """

    system: UncertainLtiSystem
    T: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray
    H_x: np.ndarray
    H_u: np.ndarray
    eps: np.ndarray
    delta: float

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float)).reshape(m, n)
        self.H_x = np.atleast_2d(np.asarray(self.H_x, dtype=float)).reshape(-1, n)
        self.H_u = np.atleast_2d(np.asarray(self.H_u, dtype=float)).reshape(-1, m)
        if self.H_x.shape[0] != self.H_u.shape[0]:
            raise ValueError("H_x and H_u must have the same number of rows")
        self.eps = np.broadcast_to(np.asarray(self.eps, dtype=float), (self.p,)).copy()
        for name, M, d in (("Q", self.Q, n), ("R", self.R, m), ("P", self.P, n)):
            if M.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}")
            if np.abs(M - M.T).max() > 1e-9 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError(f"{name} must be positive definite")
        if self.T < 1:
            raise ValueError("horizon must be at least 1")
        if np.any(self.eps <= 0) or np.any(self.eps >= 1) or not 0 < self.delta < 1:
            raise ValueError("probability levels must lie in (0, 1)")

    @property
    def n(self):
        return self.system.n

    @property
    def m(self):
        return self.system.m

    @property
    def p(self):
        return self.H_x.shape[0]

    @property
    def n_xi(self):
        return self.n + self.m * self.T

    @property
    def sequence_spec(self):
        """Distribution of a whole disturbance sequence ``w_0 .. w_{T-1}``."""
        return self.system.disturbance.repeated(self.T)

    def sequences(self, Q):
        """Raw sequence samples ``(N, T * raw_dim)`` -> ``(N, T, n_w)``."""
        E = self.sequence_spec.effective(Q)
        return E.reshape(E.shape[0], self.T, self.system.n_w)

    def row_steps(self, j):
        """Prediction steps used for constraint row ``j``."""
        if not np.any(self.H_x[j]) and np.any(self.H_u[j]):
            return np.arange(0, self.T)
        return np.arange(1, self.T + 1)


def synthesize_prestabilizer(A0, B0, Q, R):
    """Nominal LQR gain ``K`` (``u = K x``) and the DARE solution as terminal weight."""
    A0, B0 = np.atleast_2d(A0).astype(float), np.atleast_2d(B0).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    try:
        P = scipy.linalg.solve_discrete_are(A0, B0, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ProbScaleError(f"(A0, B0) is not stabilizable: {exc}") from exc
    P = 0.5 * (P + P.T)
    K = -np.linalg.solve(R + B0.T @ P @ B0, B0.T @ P @ A0)
    rho = np.abs(np.linalg.eigvals(A0 + B0 @ K)).max()
    if not np.all(np.isfinite(P)) or rho >= 1.0:
        raise ProbScaleError("(A0, B0) is not stabilizable")
    return K, P


# ---------------------------------------------------------------------------
# predictions


@dataclass
class PredictionOperators:
    """Stacked ``x = Phi x_k + Gamma v + d`` for ``x_0 .. x_T``."""

    Phi: np.ndarray
    Gamma: np.ndarray
    d: np.ndarray


def _prediction_batch(sys: UncertainLtiSystem, K, W, T):
    """``G`` of shape ``(N, T+1, n, n + mT + 1)`` with ``x_l = G_l [x; v; 1]``."""
    N = W.shape[0]
    n, m = sys.n, sys.m
    A, B, a = sys.matrices(W)  # (N, T, n, n), (N, T, n, m), (N, T, n)
    Acl = A + B @ K
    dim = n + m * T + 1
    G = np.zeros((N, T + 1, n, dim))
    G[:, 0, :, :n] = np.eye(n)
    for l in range(T):
        G[:, l + 1] = Acl[:, l] @ G[:, l]
        G[:, l + 1, :, n + l * m: n + (l + 1) * m] += B[:, l]
        G[:, l + 1, :, -1] += a[:, l]
    return G


def _input_maps(K, G, n, m, T):
    """``u_l = U_l [x; v; 1]`` for ``l = 0 .. T`` (``v_T = 0``)."""
    U = K @ G  # (N, T+1, m, dim)
    for l in range(T):
        U[:, l, :, n + l * m: n + (l + 1) * m] += np.eye(m)
    return U


def build_prediction(sys: UncertainLtiSystem, K, w_sequence, T) -> PredictionOperators:
    W = np.asarray(w_sequence, dtype=float)
    if W.shape != (T, sys.n_w):
        raise ValueError(f"w_sequence must have shape ({T}, {sys.n_w})")
    K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(sys.m, sys.n)
    G = _prediction_batch(sys, K, W[None], T)[0]
    n = sys.n
    stacked = G.reshape((T + 1) * n, -1)
    return PredictionOperators(stacked[:, :n], stacked[:, n:-1], stacked[:, -1])


def estimate_cost_matrix(problem: SmpcProblem, n_cost: int, stream: SampleStream) -> np.ndarray:
    """Sample average of the exact finite-horizon cost matrix ``S``."""
    if n_cost < 1000:
        raise ValueError("n_cost must be at least 1000")
    n, m, T = problem.n, problem.m, problem.T
    dim = n + m * T + 1
    S = np.zeros((dim, dim))
    spec = problem.sequence_spec
    for start in range(0, n_cost, CHUNK):
        count = min(CHUNK, n_cost - start)
        W = problem.sequences(draw(spec, stream, count, start))
        G = _prediction_batch(problem.system, problem.K, W, T)
        U = _input_maps(problem.K, G, n, m, T)
        S += np.einsum("nlia,ij,nljb->ab", G[:, :T], problem.Q, G[:, :T])
        S += np.einsum("nlia,ij,nljb->ab", U[:, :T], problem.R, U[:, :T])
        S += np.einsum("nia,ij,njb->ab", G[:, T], problem.P, G[:, T])
    S /= n_cost
    return 0.5 * (S + S.T)


# ---------------------------------------------------------------------------
# constraint rows


def _all_rows(problem: SmpcProblem, W):
    """Rows for every ``(j, l)`` in ``[x; v; 1]`` form: ``(N, p, T+1, dim)``."""
    n, m, T = problem.n, problem.m, problem.T
    G = _prediction_batch(problem.system, problem.K, W, T)
    U = _input_maps(problem.K, G, n, m, T)
    return (np.einsum("ji,nlia->njla", problem.H_x, G)
            + np.einsum("ji,nlia->njla", problem.H_u, U))


def _split(rows):
    return rows[..., :-1], 1.0 - rows[..., -1]


def constraint_row(problem: SmpcProblem, w_sequence, l, j):
    """Row ``f`` and right-hand side for constraint ``j`` at step ``l``."""
    if not 0 <= j < problem.p:
        raise IndexError(f"constraint index {j} out of range")
    if l not in problem.row_steps(j):
        raise IndexError(f"step {l} not used by constraint {j}")
    W = np.asarray(w_sequence, dtype=float).reshape(1, problem.T, problem.system.n_w)
    f, rhs = _split(_all_rows(problem, W)[0, j, l])
    return f, float(rhs)


def scenario_rows(problem: SmpcProblem, W):
    """All used ``(j, l)`` rows per sequence: ``F (N, p*T, n_xi)``, ``g (N, p*T)``."""
    rows = _all_rows(problem, W)
    picked = [rows[:, j, problem.row_steps(j)] for j in range(problem.p)]
    F, g = _split(np.concatenate(picked, axis=1))
    return F, g


@dataclass
class ConstraintMatrix:
    F: np.ndarray
    rhs: np.ndarray
    sample: np.ndarray
    step: np.ndarray
    row: np.ndarray

    @property
    def n_rows(self):
        return self.F.shape[0]


def build_os_constraints(problem: SmpcProblem, stream: SampleStream) -> ConstraintMatrix:
    """Scenario rows with ``N_LT^j`` sampled sequences per constraint ``j``."""
    spec = problem.sequence_spec
    Fs, gs, samples, steps, rows = [], [], [], [], []
    for j in range(problem.p):
        n_j = learning_sample_size(problem.n_xi, float(problem.eps[j]), problem.delta, 1)
        ls = problem.row_steps(j)
        sub = stream.child("os", j)
        for start in range(0, n_j, CHUNK):
            count = min(CHUNK, n_j - start)
            W = problem.sequences(draw(spec, sub, count, start))
            F, g = _split(_all_rows(problem, W)[:, j, ls])
            Fs.append(F.reshape(-1, problem.n_xi))
            gs.append(g.reshape(-1))
            samples.append(np.repeat(np.arange(start, start + count), ls.size))
            steps.append(np.tile(ls, count))
            rows.append(np.full(count * ls.size, j))
    return ConstraintMatrix(np.vstack(Fs), np.concatenate(gs), np.concatenate(samples),
                            np.concatenate(steps), np.concatenate(rows))


@dataclass
class OnlineConstraints:
    """``A_xi [x; v] + A_aux aux <= b`` solved online at fixed ``x``."""

    A_xi: np.ndarray
    A_aux: np.ndarray
    b: np.ndarray
    kind: str

    @property
    def n_rows(self):
        return self.b.size

    @property
    def n_aux(self):
        return self.A_aux.shape[1]

    @classmethod
    def from_matrix(cls, cm: ConstraintMatrix, kind="os"):
        return cls(cm.F, np.zeros((cm.n_rows, 0)), cm.rhs, kind)


def scenario_system(problem: SmpcProblem) -> CallbackSystem:
    """The joint chance constraint as an uncertain system over ``xi``."""

    def realize(Q):
        return scenario_rows(problem, problem.sequences(Q))

    return CallbackSystem(problem.n_xi, problem.p * problem.T, realize)


def operating_box(problem: SmpcProblem, box):
    """Box on ``(x, v)``; ``box`` is a scalar or ``{"x": bx, "v": bv}``."""
    if isinstance(box, dict):
        bx, bv = float(box["x"]), float(box["v"])
    else:
        bx = bv = float(box)
    hi = np.concatenate([np.full(problem.n, bx), np.full(problem.m * problem.T, bv)])
    return HPolytope.box(-hi, hi)


@dataclass
class PsBuild:
    online: OnlineConstraints
    scaled: ScaledSAS
    design_rows: int
    design_rows_with_box: int
    diagnostics: dict = field(default_factory=dict)


def build_ps_constraints(problem: SmpcProblem, n_design: int, sas_kind: str, cfg: ScalingConfig,
                         stream: SampleStream | None = None, box=10.0, shape_mode="diag",
                         center="auto", precheck_samples=10_000) -> PsBuild:
    """Design, scale and emit the online inequalities of the PS set.

    ``center`` is ``"auto"`` (Chebyshev center for sampled sets, optimized
    for norm balls), ``"origin"``, ``"state_origin"`` (``x`` part pinned
    to zero, ``v`` part optimized; norm balls only) or an explicit point.
    """
    stream = stream or SampleStream(cfg.seed)
    sys = scenario_system(problem)
    spec = problem.sequence_spec
    box_poly = operating_box(problem, box) if box is not None else None

    try:
        Q = draw(spec, stream.child("ps-design"), n_design)
        F, g = sys.realize_batch(Q)
        scen = ScenarioSet(F, g, stream.seed, stream.child("ps-design").path)
        A, b = scen.stacked()
        D = HPolytope(A, b)
        design_rows = D.n_input_rows
        if box_poly is not None:
            D = D.intersect(box_poly)
    except ProbScaleError as exc:
        raise StageError("design-sample", exc) from exc

    try:
        if sas_kind == "sampled":
            if center == "state_origin":
                raise ValueError("state_origin center needs a norm-ball SAS")
            candidate = design_sampled_poly(scen, box_poly,
                                            center="chebyshev" if center == "auto" else center)
        elif sas_kind in ("l1", "linf"):
            fixed = None
            if center == "origin":
                fixed = np.zeros(problem.n_xi)
            elif center == "state_origin":
                fixed = np.full(problem.n_xi, np.nan)
                fixed[:problem.n] = 0.0
            elif not isinstance(center, str):
                fixed = np.asarray(center, dtype=float)
            elif center != "auto":
                raise ValueError(f"unknown center {center!r}")
            candidate = design_norm_sas(D, 1 if sas_kind == "l1" else np.inf, shape_mode,
                                        center=fixed)
        else:
            raise ValueError(f"unknown sas_kind {sas_kind!r}")
    except ProbScaleError as exc:
        raise StageError("design-sas", exc) from exc

    try:
        scaled = probabilistic_scale(candidate, sys, spec, cfg, stream.child("ps-scaling"),
                                     precheck_samples=precheck_samples)
    except ProbScaleError as exc:
        raise StageError("scaling", exc) from exc

    try:
        online = _emit(scaled, sas_kind)
    except ProbScaleError as exc:
        raise StageError("emit", exc) from exc
    return PsBuild(online, scaled, design_rows, D.n_rows, {"sas_kind": sas_kind})


def _emit(scaled: ScaledSAS, sas_kind) -> OnlineConstraints:
    final = scaled.scaled_set()
    if sas_kind == "l1":
        A_xi, A_aux, b = lift_l1(final).inequalities()
        return OnlineConstraints(A_xi, A_aux, b, "l1")
    if sas_kind == "linf":
        H = hrep_linf(final)
    else:
        H = final
    return OnlineConstraints(H.A, np.zeros((H.n_rows, 0)), H.b, sas_kind)


# ---------------------------------------------------------------------------
# online control


@dataclass
class StepResult:
    v: np.ndarray
    u0: np.ndarray
    solve_time: float
    status: str
    feasible: bool


def mpc_step(x, S, online: OnlineConstraints | None, K, n, m, T) -> StepResult:
    """Minimize ``[x; v; 1]' S [x; v; 1]`` over the online set at fixed ``x``.

    Falls back to ``v = 0`` when the QP is not solved to optimality.
    """
    x = np.asarray(x, dtype=float)
    K = np.atleast_2d(K)
    nv = m * T
    t0 = time.perf_counter()
    S_vv = S[n:n + nv, n:n + nv]
    lin = 2.0 * (S[n:n + nv, :n] @ x + S[n:n + nv, -1])
    if online is None or online.n_rows == 0:
        H, f, A, b = 2.0 * S_vv, lin, None, None
        n_aux = 0
    else:
        n_aux = online.n_aux
        H = np.zeros((nv + n_aux, nv + n_aux))
        H[:nv, :nv] = 2.0 * S_vv
        f = np.concatenate([lin, np.zeros(n_aux)])
        A = np.hstack([online.A_xi[:, n:], online.A_aux])
        b = online.b - online.A_xi[:, :n] @ x
    res = solve_qp(QuadraticProgram(0.5 * (H + H.T), f, A, b))
    elapsed = time.perf_counter() - t0
    if res.optimal:
        v = res.x[:nv]
        feasible = True
    else:
        log.info("online QP %s; falling back to v = 0", res.status.value)
        v = np.zeros(nv)
        feasible = False
    return StepResult(v, K @ x + v[:m], elapsed, res.status.value, feasible)


@dataclass
class Trajectory:
    states: np.ndarray
    inputs: np.ndarray
    v0: np.ndarray
    solve_time: np.ndarray
    feasible: np.ndarray
    violated: np.ndarray

    @property
    def steps(self):
        return self.inputs.shape[0]

    def summary(self):
        any_v = self.violated.any(axis=1)
        return {
            "steps": self.steps,
            "t_max": float(self.solve_time.max()),
            "t_avg": float(self.solve_time.mean()),
            "n_infeasible": int((~self.feasible).sum()),
            "n_violation_steps": int(any_v.sum()),
            "violation_rate": float(any_v.mean()),
            "row_violation_rates": [float(r) for r in self.violated.mean(axis=0)],
        }

    def to_csv(self, timing=True):
        """``step, x1.., u1.., solve_time_s, feasible, violated``."""
        n, m = self.states.shape[1], self.inputs.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                   + ["solve_time_s", "feasible", "violated"])
        for k in range(self.steps):
            t = repr(float(self.solve_time[k])) if timing else ""
            w.writerow([k] + [repr(float(v)) for v in self.states[k]]
                       + [repr(float(v)) for v in self.inputs[k]]
                       + [t, int(self.feasible[k]), int(self.violated[k].any())])
        return buf.getvalue()


def simulate_closed_loop(problem: SmpcProblem, S, online: OnlineConstraints | None, x0,
                         steps: int, stream: SampleStream) -> Trajectory:
    """Receding-horizon simulation with disturbances from ``stream``."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    n, m, T = problem.n, problem.m, problem.T
    sys = problem.system
    W = sys.disturbance.effective(draw(sys.disturbance, stream, steps))
    X = np.zeros((steps + 1, n))
    U = np.zeros((steps, m))
    V0 = np.zeros((steps, m))
    times = np.zeros(steps)
    feas = np.zeros(steps, dtype=bool)
    viol = np.zeros((steps, problem.p), dtype=bool)
    X[0] = np.asarray(x0, dtype=float)
    for k in range(steps):
        res = mpc_step(X[k], S, online, problem.K, n, m, T)
        U[k], V0[k], times[k], feas[k] = res.u0, res.v[:m], res.solve_time, res.feasible
        viol[k] = problem.H_x @ X[k] + problem.H_u @ U[k] > 1.0
        X[k + 1] = sys.step(X[k], U[k], W[k])
    return Trajectory(X, U, V0, times, feas, viol)


# ---------------------------------------------------------------------------
# benchmark plant


def chain_of_integrators(n=2, m=1, dt=0.2, a_unc=0.1, b_unc=0.1, w_add=0.05):
    """``n`` chained integrators, inputs on the last ``m`` states.

    Uniform multiplicative uncertainty (relative ``a_unc`` on the coupling
    terms, ``b_unc`` on the input gain) and a bounded additive disturbance
    of half-width ``w_add`` per state. All disturbances are ``U[-1, 1]``.
    """
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")
    A0 = np.eye(n) + dt * np.eye(n, k=1)
    B0 = np.zeros((n, m))
    for j in range(m):
        B0[n - m + j, j] = dt
    nw = 2 + n
    spec = DistributionSpec((UniformBox([-1.0] * nw, [1.0] * nw),))
    A_terms = np.zeros((nw, n, n))
    A_terms[0] = a_unc * dt * np.eye(n, k=1)
    B_terms = np.zeros((nw, n, m))
    B_terms[1] = b_unc * B0
    a_terms = np.zeros((nw, n))
    a_terms[2:] = w_add * np.eye(n)
    return UncertainLtiSystem(A0, B0, spec, A_terms, B_terms, a_terms)
