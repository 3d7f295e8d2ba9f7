"""Independent reference solvers and instance generators shared by the tests."""

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from noisybo.subproblems import null_space_basis


def _model(g, B):
    return lambda s: float(g @ s + 0.5 * s @ B @ s)


def _sphere(k, angles, r):
    if k == 2:
        return r * np.array([np.cos(angles[0]), np.sin(angles[0])])
    th, ph = angles
    return r * np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def _grid_values(pts, g, B):
    return pts @ g + 0.5 * np.einsum("ij,jk,ik->i", pts, B, pts)


def brute_force_ball(g, B, radius):
    """
    Global minimum of ``g^T s + 0.5 s^T B s`` over ``||s|| <= radius`` for
    ``len(g) <= 3`` by exhaustive search: the interior stationary point plus
    a dense grid over the sphere, polished by a local search.
    """
    g = np.asarray(g, dtype=float)
    B = 0.5 * (np.asarray(B, dtype=float) + np.asarray(B, dtype=float).T)
    k = g.size
    q = _model(g, B)
    best = 0.0
    if k == 0:
        return best
    # interior candidate: any stationary point inside the ball of a convex model
    if np.linalg.eigvalsh(B).min() >= -1e-14:
        s = -np.linalg.lstsq(B, g, rcond=None)[0]
        if np.linalg.norm(s) <= radius and np.linalg.norm(B @ s + g) <= 1e-10 * (1 + np.linalg.norm(g)):
            best = min(best, q(s))
    if k == 1:
        return min(best, q(np.array([radius])), q(np.array([-radius])))
    if k == 2:
        grid = np.linspace(0.0, 2 * np.pi, 4096, endpoint=False)
        pts = radius * np.column_stack([np.cos(grid), np.sin(grid)])
        i = int(np.argmin(_grid_values(pts, g, B)))
        step = grid[1] - grid[0]
        res = minimize_scalar(lambda t: q(_sphere(2, (t,), radius)),
                              bounds=(grid[i] - step, grid[i] + step), method="bounded",
                              options={"xatol": 1e-12})
        return min(best, q(pts[i]), float(res.fun))
    th, ph = np.meshgrid(np.linspace(0.0, np.pi, 97), np.linspace(0.0, 2 * np.pi, 192, endpoint=False))
    th, ph = th.ravel(), ph.ravel()
    pts = radius * np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    vals = _grid_values(pts, g, B)
    out = min(best, float(vals.min()))
    for i in np.argsort(vals)[:3]:
        res = minimize(lambda z: q(_sphere(3, z, radius)), np.array([th[i], ph[i]]), method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000})
        out = min(out, float(res.fun))
    return out


def random_normal_instance(rng, max_n=3):
    """Random ``(A, c, radius)`` with ``n <= max_n``; some Jacobians are rank deficient."""
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, n + 1))
    A = rng.standard_normal((m, n)) * 10 ** rng.uniform(-1, 1)
    if m > 1 and rng.random() < 0.25:
        A[-1] = A[0] * rng.uniform(-2, 2)
    c = rng.standard_normal(m) * 10 ** rng.uniform(-1, 1)
    radius = 10 ** rng.uniform(-2, 1)
    return A, c, radius


def random_tangential_instance(rng, max_n=3):
    """Random ``(q, W, Z, radius)`` with ``n <= max_n`` and a null space of width >= 1."""
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, n))
    A = rng.standard_normal((m, n))
    Z = null_space_basis(A)
    M = rng.standard_normal((n, n))
    W = 0.5 * (M + M.T) * 10 ** rng.uniform(-1, 1)
    if rng.random() < 0.4:
        W = W @ W.T  # convex case
    q = rng.standard_normal(n) * 10 ** rng.uniform(-1, 1)
    radius = 10 ** rng.uniform(-2, 1)
    return q, W, Z, radius
