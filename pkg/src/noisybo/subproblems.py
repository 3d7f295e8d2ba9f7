"""
Dense kernels for the composite step: null-space bases, least-squares
multipliers, the normal (feasibility) trust-region problem and the tangential
(optimality) trust-region problem.

Both subproblem solvers are inexact but certify a fraction of Cauchy decrease.
The certificates use a lower estimate of the relevant matrix norm (power
iteration combined with the Rayleigh quotients met along the way); any value
at least as large as the steepest-descent curvature keeps the bound provable,
and a lower estimate only makes the check stricter.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "NullSpaceBasis",
    "TrSolution",
    "null_space_basis",
    "least_squares_multipliers",
    "solve_normal_tr",
    "solve_tangential_tr",
    "power_norm",
    "boundary_step_length",
    "clip_to_radius",
    "small_trust_region",
]

RANK_TOL = 1e-10
POWER_STEPS = 20


@dataclass(frozen=True)
class NullSpaceBasis:
    """Orthonormal basis ``Z`` (``n x (n - rank)``) of the null space of ``A``."""

    Z: np.ndarray
    rank: int
    rank_tol: float

    @property
    def width(self):
        return self.Z.shape[1]


@dataclass
class TrSolution:
    """
    Result of a trust-region subproblem.

    ``cauchy_bound`` is the guaranteed fraction of Cauchy decrease and
    ``cauchy_margin = predicted_reduction - cauchy_bound``.
    """

    step: np.ndarray
    predicted_reduction: float
    on_boundary: bool
    iterations: int
    status: str
    cauchy_bound: float = 0.0
    norm_estimate: float = 0.0

    @property
    def cauchy_margin(self):
        return self.predicted_reduction - self.cauchy_bound


def _require_finite(**arrays):
    for name, value in arrays.items():
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name} contains non-finite values")


def power_norm(apply, n, steps=POWER_STEPS, start=None):
    """
    Estimate the spectral norm of a symmetric operator by power iteration.

    The estimate never exceeds the true norm.  The start vector defaults to a
    fixed non-degenerate vector so the result is a deterministic function of
    the operator.
    """
    if n == 0:
        return 0.0
    if start is None:
        start = 1.0 + np.arange(n) / max(n, 1)
    y = np.asarray(start, dtype=float)
    ny = np.linalg.norm(y)
    if ny == 0.0:
        return 0.0
    y = y / ny
    est = 0.0
    for _ in range(steps):
        z = apply(y)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        est = max(est, nz)
        y = z / nz
    return float(est)


def clip_to_radius(s, radius):
    """Scale ``s`` so that its computed norm does not exceed ``radius``."""
    ns = np.linalg.norm(s)
    if ns <= radius:
        return s
    s = s * (radius / ns)
    while np.linalg.norm(s) > radius:
        s = s * (1.0 - np.finfo(float).eps)
    return s


def boundary_step_length(s, p, radius):
    """Positive root ``t`` of ``||s + t p|| = radius`` (requires ``||s|| <= radius``)."""
    a = p @ p
    b = 2.0 * (s @ p)
    cc = s @ s - radius * radius
    if a == 0.0:
        return 0.0
    disc = math.sqrt(max(b * b - 4.0 * a * cc, 0.0))
    # avoid cancellation
    if b >= 0.0:
        return (-2.0 * cc) / (b + disc) if (b + disc) > 0.0 else 0.0
    return (-b + disc) / (2.0 * a)


def small_trust_region(g, B, radius):
    """
    Exact minimizer of ``g^T s + 0.5 s^T B s`` over ``||s|| <= radius`` for a
    small dense symmetric ``B``.

    Uses the eigendecomposition of ``B`` and a bracketed root of the secular
    equation ``||s(mu)|| = radius``, with ``s(mu) = -(B + mu I)^{-1} g``; the
    hard case is completed along the lowest eigenvector.
    """
    g = np.asarray(g, dtype=float)
    k = g.size
    if k == 0 or radius == 0.0:
        return np.zeros(k)
    lam, Q = np.linalg.eigh(0.5 * (B + B.T))
    gh = Q.T @ g
    scale = max(float(np.max(np.abs(lam))), float(np.linalg.norm(g)) / radius, 1e-300)
    eps = 1e-14 * scale

    def step(mu):
        return -gh / (lam + mu)

    if lam[0] > eps:
        s = step(0.0)
        if np.linalg.norm(s) <= radius:
            return Q @ s
    lo = max(0.0, -lam[0])
    # components along the lowest eigenspace vanish: possible hard case
    low = lam <= lam[0] + eps
    if np.all(np.abs(gh[low]) <= 1e-12 * max(np.linalg.norm(gh), 1e-300)):
        mask = ~low
        s = np.zeros(k)
        s[mask] = -gh[mask] / (lam[mask] + lo)
        ns = np.linalg.norm(s)
        if ns <= radius:
            s[np.argmax(low)] += math.sqrt(max(radius * radius - ns * ns, 0.0))
            return Q @ s

    def phi(mu):
        return 1.0 / radius - 1.0 / np.linalg.norm(step(mu))

    # phi decreases in mu: need phi(a) > 0 > phi(b)
    a = lo + eps
    while phi(a) <= 0.0:
        a = lo + 0.5 * (a - lo)
        if a - lo <= 1e-300 * max(lo, 1.0):
            s = step(a)
            return Q @ (s * min(1.0, radius / np.linalg.norm(s)))
    b = lo + float(np.linalg.norm(g)) / radius + scale
    while phi(b) >= 0.0:
        b *= 2.0
    mu = brentq(phi, a, b, xtol=1e-15 * max(b, 1.0), rtol=4 * np.finfo(float).eps, maxiter=500)
    s = step(mu)
    ns = np.linalg.norm(s)
    if ns > radius:
        s *= radius / ns
    return Q @ s


def _orthonormal_span(vectors, n):
    cols = [v / np.linalg.norm(v) for v in vectors if np.linalg.norm(v) > 0.0]
    if not cols:
        return np.zeros((n, 0))
    U, sv, _ = np.linalg.svd(np.column_stack(cols), full_matrices=False)
    return U[:, sv > 1e-10 * sv[0]]


def _subspace_refine(vectors, grad, hess, radius, current):
    # exact model minimization over span(vectors); kept only if not worse
    S = _orthonormal_span(vectors, grad.size)
    if S.shape[1] == 0:
        return current

    def model(s):
        return float(grad @ s + 0.5 * (s @ hess @ s))

    y = small_trust_region(S.T @ grad, S.T @ hess @ S, radius)
    cand = S @ y
    nc = np.linalg.norm(cand)
    if nc > radius:
        cand *= radius / nc
    return cand if model(cand) < model(current) else current


def null_space_basis(A, rank_tol=RANK_TOL):
    """
    Orthonormal basis of ``null(A)``.

    The numerical rank counts singular values above ``rank_tol * sigma_max``.
    At full row rank the basis is the trailing block of the Q factor of
    ``A^T`` computed without pivoting, so columns keep a fixed order as ``A``
    varies; rank-deficient Jacobians fall back to the trailing right singular
    vectors.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    if n == 0:
        raise ValueError("A must have at least one column")
    if m > n:
        raise ValueError("A must have m <= n")
    _require_finite(A=A)
    if m == 0:
        return NullSpaceBasis(np.eye(n), 0, rank_tol)
    sv = np.linalg.svd(A, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > rank_tol * smax)) if smax > 0.0 else 0
    if rank == m:
        Q, _ = np.linalg.qr(A.T, mode="complete")
        Z = Q[:, m:]
    else:
        _, _, Vt = np.linalg.svd(A)
        Z = Vt[rank:].T
    return NullSpaceBasis(np.ascontiguousarray(Z), rank, rank_tol)


def least_squares_multipliers(g, A, rank_tol=RANK_TOL):
    """Minimum-norm solution of ``min_lam ||g - A^T lam||``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    g = np.asarray(g, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(0)
    lam, *_ = np.linalg.lstsq(A.T, g, rcond=rank_tol)
    return lam


def solve_normal_tr(A, c, radius, tol=RANK_TOL, refine=True):
    """
    Powell dogleg for ``min ||A v + c||`` subject to ``||v|| <= radius``.

    The path runs from the origin to the Cauchy point of
    ``0.5 ||A v + c||^2`` along ``-A^T c``, then to the minimum-norm
    Gauss-Newton point.  Both lie in ``range(A^T)``, hence so does ``v``.
    ``predicted_reduction`` is ``||c|| - ||A v + c||``.

    Parameters
    ----------
    tol : float
        Relative singular-value cutoff for the minimum-norm solve.
    refine : bool
        When the dogleg point is on the boundary, minimize the model exactly
        over ``span{A^T c, v_gn, A^T A A^T c}`` and keep the result if it is
        better.  This is exact whenever ``rank(A) <= 3``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.asarray(c, dtype=float)
    _require_finite(A=A, c=c, radius=radius)
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    n = A.shape[1]
    zero = np.zeros(n)
    cn = float(np.linalg.norm(c))
    if cn == 0.0:
        return TrSolution(zero, 0.0, False, 0, "Interior")
    grad = A.T @ c
    gn = float(np.linalg.norm(grad))
    if gn == 0.0:
        return TrSolution(zero, 0.0, False, 0, "Interior")

    Ag = A @ grad
    curv = float(Ag @ Ag)
    rq = curv / (gn * gn)
    norm_est = max(power_norm(lambda y: A.T @ (A @ y), n, start=grad), rq)
    bound = gn / (2.0 * cn) * min(radius, gn / norm_est)

    def vpred(v):
        return cn - float(np.linalg.norm(A @ v + c))

    v_gn = -np.linalg.lstsq(A, c, rcond=tol)[0]
    if np.linalg.norm(v_gn) <= radius:
        v = v_gn
        status, boundary = "Interior", False
    else:
        alpha = gn * gn / curv
        if alpha * gn >= radius:
            v = -(radius / gn) * grad
        else:
            v_c = -alpha * grad
            t = boundary_step_length(v_c, v_gn - v_c, radius)
            v = v_c + min(t, 1.0) * (v_gn - v_c)
            # roundoff guard: never do worse than the truncated Cauchy step
            v_sd = -min(alpha, radius / gn) * grad
            if vpred(v) < vpred(v_sd):
                v = v_sd
        if refine:
            v = _subspace_refine([grad, v_gn, A.T @ Ag], grad, A.T @ A, radius, v)
        status, boundary = "Boundary", True
    v = clip_to_radius(v, radius)
    return TrSolution(v, vpred(v), boundary, 1, status, bound, norm_est)


def solve_tangential_tr(q, W, Z, radius, tol=1e-8, max_iter=None, refine=True):
    """
    Steihaug-Toint truncated CG on the reduced problem
    ``min (Z^T q)^T d + 0.5 d^T (Z^T W Z) d`` subject to ``||d|| <= radius``.

    Returns ``h = Z d``; ``predicted_reduction`` is
    ``-q^T h - 0.5 h^T W h``.  Directions of non-positive curvature are
    followed to the boundary.

    Parameters
    ----------
    q : numpy.ndarray, shape (n,)
        Linear term ``g + W v``.
    W : numpy.ndarray, shape (n, n)
    Z : NullSpaceBasis or numpy.ndarray
        Orthonormal columns, so ``||Z d|| = ||d||``.
    tol : float
        Relative residual tolerance ``||r|| <= tol ||Z^T q||``.
    max_iter : int, optional
        Defaults to ``2 * Z.shape[1]``.
    refine : bool
        Unless CG converged in the interior, minimize the reduced model
        exactly over ``span{Z^T q, d_cg, (Z^T W Z) Z^T q}`` and keep the
        result if it is better.  Exact whenever ``n - rank <= 2``.
    """
    Zm = Z.Z if isinstance(Z, NullSpaceBasis) else np.atleast_2d(np.asarray(Z, dtype=float))
    q = np.asarray(q, dtype=float)
    W = np.asarray(W, dtype=float)
    _require_finite(q=q, W=W, radius=radius)
    if radius < 0.0:
        raise ValueError("radius must be non-negative")
    n, k = Zm.shape
    zero = np.zeros(n)
    if radius == 0.0 or k == 0:
        return TrSolution(zero, 0.0, radius == 0.0 and k > 0, 0, "Interior")
    if max_iter is None:
        max_iter = 2 * k

    g = Zm.T @ q
    B = Zm.T @ W @ Zm
    B = 0.5 * (B + B.T)
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        return TrSolution(zero, 0.0, False, 0, "Interior")

    d = np.zeros(k)
    r = g.copy()
    p = -r
    rr = float(r @ r)
    max_rq = 0.0
    status = "MaxIter"
    it = 0
    while it < max_iter:
        it += 1
        Bp = B @ p
        kappa = float(p @ Bp)
        max_rq = max(max_rq, abs(kappa) / float(p @ p))
        if kappa <= 0.0:
            d = d + boundary_step_length(d, p, radius) * p
            status = "NegativeCurvature"
            break
        alpha = rr / kappa
        d_next = d + alpha * p
        if np.linalg.norm(d_next) >= radius:
            d = d + boundary_step_length(d, p, radius) * p
            status = "Boundary"
            break
        d = d_next
        r = r + alpha * Bp
        rr_next = float(r @ r)
        if math.sqrt(rr_next) <= tol * gn:
            status = "Interior"
            break
        p = -r + (rr_next / rr) * p
        rr = rr_next

    if refine and status != "Interior":
        d = _subspace_refine([g, d, B @ g], g, B, radius, d)
    d = clip_to_radius(d, radius)
    h = Zm @ d
    hpred = float(-(q @ h) - 0.5 * (h @ W @ h))
    norm_est = max(power_norm(lambda y: B @ y, k, start=g), max_rq)
    bound = 0.5 * gn * (min(radius, gn / norm_est) if norm_est > 0.0 else radius)
    on_boundary = status in ("Boundary", "NegativeCurvature")
    return TrSolution(h, hpred, on_boundary, it, status, bound, norm_est)
