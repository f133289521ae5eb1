"""Independent brute-force references used by the tests.

None of these call into the package; they are deliberately naive.
"""

import itertools

import numpy as np


def enumerate_vertices(A, b, tol=1e-9):
    """All vertices of ``{x : A x <= b}`` by solving every n-subset of rows."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    verts = []
    for rows in itertools.combinations(range(A.shape[0]), n):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ x <= b + tol * (1 + np.abs(b))):
            if not any(np.allclose(x, v, atol=1e-9) for v in verts):
                verts.append(x)
    return np.array(verts).reshape(-1, n)


def lp_by_vertices(c, A, b, maximize=True):
    """Optimal value of a bounded LP as the best enumerated vertex."""
    V = enumerate_vertices(A, b)
    vals = V @ np.asarray(c, dtype=float)
    return vals.max() if maximize else vals.min()


def qp_by_active_sets(H, f, A, b, tol=1e-9):
    """Convex QP by enumerating active sets and checking the KKT conditions."""
    H, f, A, b = (np.asarray(v, dtype=float) for v in (H, f, A, b))
    n, m = f.size, b.size
    best = None
    for k in range(0, min(n, m) + 1):
        for act in itertools.combinations(range(m), k):
            act = list(act)
            Aa = A[act]
            K = np.block([[H, Aa.T], [Aa, np.zeros((k, k))]])
            rhs = np.concatenate([-f, b[act]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(lam < -tol) or np.any(A @ x > b + tol):
                continue
            obj = 0.5 * x @ H @ x + f @ x
            if best is None or obj < best[1] - 1e-12:
                best = (x, obj)
    return best


def scalar_dare(a, b, q, r):
    """Positive root of ``b^2 P^2 + (r - q b^2 - a^2 r) P - q r = 0``."""
    A2 = b * b
    B1 = r - q * b * b - a * a * r
    C0 = -q * r
    if A2 == 0:
        return -C0 / B1
    disc = B1 * B1 - 4 * A2 * C0
    return (-B1 + np.sqrt(disc)) / (2 * A2)


def simulate_prediction(A_seq, B_seq, a_seq, K, x0, v):
    """Step the closed loop ``u = K x + v_l`` and return the stacked states."""
    T = len(A_seq)
    m = B_seq[0].shape[1]
    xs = [np.asarray(x0, dtype=float)]
    for l in range(T):
        x = xs[-1]
        u = K @ x + v[l * m:(l + 1) * m]
        xs.append(A_seq[l] @ x + B_seq[l] @ u + a_seq[l])
    return np.concatenate(xs)


def batch_cost_matrix(A, B, K, Q, R, P, T):
    """Exact cost matrix of a disturbance-free system over ``[x; v; 1]``."""
    n, m = B.shape
    Acl = A + B @ K
    dim = n + m * T
    # x_l = Phi_l x + Gamma_l v
    Phi = [np.eye(n)]
    Gam = [np.zeros((n, m * T))]
    for l in range(T):
        Phi.append(Acl @ Phi[-1])
        G = Acl @ Gam[-1]
        G[:, l * m:(l + 1) * m] += B
        Gam.append(G)
    S = np.zeros((dim + 1, dim + 1))
    for l in range(T + 1):
        X = np.hstack([Phi[l], Gam[l]])
        W = P if l == T else Q
        S[:dim, :dim] += X.T @ W @ X
        if l < T:
            E = np.zeros((m, m * T))
            E[:, l * m:(l + 1) * m] = np.eye(m)
            U = K @ X + np.hstack([np.zeros((m, n)), E])
            S[:dim, :dim] += U.T @ R @ U
    return S


def bisect_gamma(contained, hi=1e6, iters=200):
    """Largest ``gamma`` in ``[0, hi]`` with ``contained(gamma)`` true (monotone)."""
    if not contained(0.0):
        return None
    if contained(hi):
        return np.inf
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if contained(mid):
            lo = mid
        else:
            hi = mid
    return lo


def cross_polytope_volume(n):
    return 2.0 ** n / np.prod(np.arange(1, n + 1))
