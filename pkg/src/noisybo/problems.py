"""
Equality-constrained test problems and derivative verification.

Every problem is ``min f(x) s.t. c(x) = 0`` with the Lagrangian written as
``L(x, lam) = f(x) - lam^T c(x)``, so ``eval_W`` returns
``hess f(x) - sum_i lam_i hess c_i(x)``.
"""

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "NlpProblem",
    "DerivativeReport",
    "builtin_problem",
    "builtin_names",
    "check_derivatives",
    "quad_lin",
]


@dataclass(frozen=True)
class NlpProblem:
    """
    Exact equality-constrained nonlinear program.

    Attributes
    ----------
    name : str
        Registry identifier.
    n, m : int
        Number of variables and of equality constraints (``m <= n``).
    x0 : numpy.ndarray, shape (n,)
        Standard starting point.
    eval_f, eval_c, eval_g, eval_A : callable
        Objective, constraints, objective gradient and constraint Jacobian
        (``m x n``, row ``i`` is the gradient of ``c_i``).
    eval_W : callable
        ``(x, lam) -> (n, n)`` Hessian of the Lagrangian.
    f_star : float or None
        Known optimal value, when available.
    x_star : numpy.ndarray or None
        Known minimizer, when available.
    """

    name: str
    n: int
    m: int
    x0: np.ndarray
    eval_f: Callable
    eval_c: Callable
    eval_g: Callable
    eval_A: Callable
    eval_W: Callable
    f_star: float | None = None
    x_star: np.ndarray | None = None
    lam_star: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.m < 0 or self.m > self.n:
            raise ValueError(f"invalid dimensions n={self.n}, m={self.m}")
        if np.shape(self.x0) != (self.n,):
            raise ValueError("x0 must have length n")


def _lagrangian_hessian(hess_f, hess_c):
    # hess_c returns a list of m constraint Hessians
    def eval_W(x, lam):
        x = np.asarray(x, dtype=float)
        lam = np.asarray(lam, dtype=float)
        W = np.array(hess_f(x), dtype=float)
        for li, Hi in zip(lam, hess_c(x)):
            W -= li * np.asarray(Hi, dtype=float)
        return 0.5 * (W + W.T)

    return eval_W


def _hs7():
    def f(x):
        return float(np.log1p(x[0] ** 2) - x[1])

    def c(x):
        return np.array([(1.0 + x[0] ** 2) ** 2 + x[1] ** 2 - 4.0])

    def g(x):
        return np.array([2.0 * x[0] / (1.0 + x[0] ** 2), -1.0])

    def A(x):
        return np.array([[4.0 * x[0] * (1.0 + x[0] ** 2), 2.0 * x[1]]])

    def hess_f(x):
        t = 1.0 + x[0] ** 2
        return np.array([[2.0 * (1.0 - x[0] ** 2) / t ** 2, 0.0], [0.0, 0.0]])

    def hess_c(x):
        return [np.array([[4.0 + 12.0 * x[0] ** 2, 0.0], [0.0, 2.0]])]

    # c = 0 and stationarity give x = (0, sqrt(3)), lam = -1 / (2 sqrt(3))
    s3 = np.sqrt(3.0)
    return NlpProblem("HS7", 2, 1, np.array([2.0, 2.0]), f, c, g, A,
                      _lagrangian_hessian(hess_f, hess_c), f_star=-s3,
                      x_star=np.array([0.0, s3]), lam_star=np.array([-1.0 / (2.0 * s3)]))


def _hs6():
    def f(x):
        return float((1.0 - x[0]) ** 2)

    def c(x):
        return np.array([10.0 * (x[1] - x[0] ** 2)])

    def g(x):
        return np.array([-2.0 * (1.0 - x[0]), 0.0])

    def A(x):
        return np.array([[-20.0 * x[0], 10.0]])

    def hess_f(x):
        return np.array([[2.0, 0.0], [0.0, 0.0]])

    def hess_c(x):
        return [np.array([[-20.0, 0.0], [0.0, 0.0]])]

    return NlpProblem("HS6", 2, 1, np.array([-1.2, 1.0]), f, c, g, A,
                      _lagrangian_hessian(hess_f, hess_c), f_star=0.0,
                      x_star=np.array([1.0, 1.0]), lam_star=np.array([0.0]))


def _hs27():
    def f(x):
        return float(0.01 * (x[0] - 1.0) ** 2 + (x[1] - x[0] ** 2) ** 2)

    def c(x):
        return np.array([x[0] + x[2] ** 2 + 1.0])

    def g(x):
        r = x[1] - x[0] ** 2
        return np.array([0.02 * (x[0] - 1.0) - 4.0 * x[0] * r, 2.0 * r, 0.0])

    def A(x):
        return np.array([[1.0, 0.0, 2.0 * x[2]]])

    def hess_f(x):
        return np.array([
            [0.02 - 4.0 * x[1] + 12.0 * x[0] ** 2, -4.0 * x[0], 0.0],
            [-4.0 * x[0], 2.0, 0.0],
            [0.0, 0.0, 0.0],
        ])

    def hess_c(x):
        return [np.diag([0.0, 0.0, 2.0])]

    return NlpProblem("HS27", 3, 1, np.array([2.0, 2.0, 2.0]), f, c, g, A,
                      _lagrangian_hessian(hess_f, hess_c), f_star=0.04,
                      x_star=np.array([-1.0, 1.0, 0.0]), lam_star=np.array([-0.04]))


def _hs39():
    def f(x):
        return float(-x[0])

    def c(x):
        return np.array([x[1] - x[0] ** 3 - x[2] ** 2, x[0] ** 2 - x[1] - x[3] ** 2])

    def g(x):
        return np.array([-1.0, 0.0, 0.0, 0.0])

    def A(x):
        return np.array([
            [-3.0 * x[0] ** 2, 1.0, -2.0 * x[2], 0.0],
            [2.0 * x[0], -1.0, 0.0, -2.0 * x[3]],
        ])

    def hess_f(x):
        return np.zeros((4, 4))

    def hess_c(x):
        return [np.diag([-6.0 * x[0], 0.0, -2.0, 0.0]), np.diag([2.0, 0.0, 0.0, -2.0])]

    return NlpProblem("HS39", 4, 2, np.array([2.0, 2.0, 2.0, 2.0]), f, c, g, A,
                      _lagrangian_hessian(hess_f, hess_c), f_star=-1.0,
                      x_star=np.array([1.0, 1.0, 0.0, 0.0]), lam_star=np.array([1.0, 1.0]))


def _byrdsphr():
    def f(x):
        return float(-x[0] - x[1] - x[2])

    def c(x):
        s = x[1] ** 2 + x[2] ** 2
        return np.array([x[0] ** 2 + s - 10.0, (x[0] - 1.0) ** 2 + s - 10.0])

    def g(x):
        return np.array([-1.0, -1.0, -1.0])

    def A(x):
        return 2.0 * np.array([[x[0], x[1], x[2]], [x[0] - 1.0, x[1], x[2]]])

    def hess_f(x):
        return np.zeros((3, 3))

    def hess_c(x):
        return [2.0 * np.eye(3), 2.0 * np.eye(3)]

    # x1 = 1/2 on the feasible set, then x2 = x3 = sqrt(39/8)
    t = np.sqrt(39.0 / 8.0)
    return NlpProblem("BYRDSPHR", 3, 2, np.array([5.0, 1e-4, -1e-4]), f, c, g, A,
                      _lagrangian_hessian(hess_f, hess_c), f_star=-0.5 - 2.0 * t,
                      x_star=np.array([0.5, t, t]))


def _rank_deficient_toy():
    # c2 = c1 + x3^2: on the feasible set x3 = 0 and the two Jacobian rows coincide
    def f(x):
        return float(-x[0] - x[1])

    def c(x):
        s = x[0] ** 2 + x[1] ** 2 + x[2] ** 2 - 3.0
        return np.array([s, s + x[2] ** 2])

    def g(x):
        return np.array([-1.0, -1.0, 0.0])

    def A(x):
        return 2.0 * np.array([[x[0], x[1], x[2]], [x[0], x[1], 2.0 * x[2]]])

    def hess_f(x):
        return np.zeros((3, 3))

    def hess_c(x):
        return [2.0 * np.eye(3), np.diag([2.0, 2.0, 4.0])]

    a = np.sqrt(1.5)
    return NlpProblem("RANK_DEFICIENT_TOY", 3, 2, np.array([1.0, 0.5, 1.0]), f, c, g, A,
                      _lagrangian_hessian(hess_f, hess_c), f_star=-2.0 * a,
                      x_star=np.array([a, a, 0.0]))


def quad_lin(n=None, m=3, seed=0):
    """
    Seeded convex quadratic with ``m`` linear equality constraints.

    ``f(x) = 0.5 x^T H x + b^T x`` with ``H`` symmetric positive definite and
    ``c(x) = C x - d``.  The KKT system
    ``[[H, -C^T], [C, 0]] [x; lam] = [-b; d]`` is solved directly to provide
    ``x_star``, ``lam_star`` and ``f_star``.
    """
    if n is None:
        n = m + 3
    if not 0 <= m <= n:
        raise ValueError(f"QUAD_LIN needs 0 <= m <= n, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((n, n))
    H = Q.T @ Q / n + np.eye(n)
    H = 0.5 * (H + H.T)
    b = rng.standard_normal(n)
    C = rng.standard_normal((m, n))
    d = rng.standard_normal(m)
    x0 = rng.standard_normal(n)

    K = np.block([[H, -C.T], [C, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-b, d]))
    x_star, lam_star = sol[:n], sol[n:]

    def f(x):
        return float(0.5 * x @ H @ x + b @ x)

    def c(x):
        return C @ x - d

    def g(x):
        return H @ x + b

    def A(x):
        return C.copy()

    def W(x, lam):
        return H.copy()

    return NlpProblem(f"QUAD_LIN(n={n},m={m},seed={seed})", n, m, x0, f, c, g, A, W,
                      f_star=f(x_star), x_star=x_star, lam_star=lam_star,
                      meta={"H": H, "b": b, "C": C, "d": d})


_REGISTRY = {
    "HS7": _hs7,
    "HS6": _hs6,
    "HS27": _hs27,
    "HS39": _hs39,
    "BYRDSPHR": _byrdsphr,
    "RANK_DEFICIENT_TOY": _rank_deficient_toy,
}

_QUAD_RE = re.compile(r"^QUAD_LIN(?:\((.*)\))?$")


def builtin_names():
    """Names accepted by :func:`builtin_problem` (``QUAD_LIN`` takes arguments)."""
    return [*_REGISTRY, "QUAD_LIN"]


def builtin_problem(name, **kwargs):
    """
    Look up a built-in problem by name.

    ``QUAD_LIN`` accepts ``n``, ``m`` and ``seed`` either as keyword arguments
    or inline: ``"QUAD_LIN(3)"`` (``m = 3``) or ``"QUAD_LIN(n=6,m=3,seed=1)"``.

    Raises
    ------
    KeyError
        If the name is not registered.
    """
    key = name.strip().upper()
    if key in _REGISTRY:
        return _REGISTRY[key]()
    match = _QUAD_RE.match(key.replace(" ", ""))
    if match is None:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(builtin_names())}")
    params = dict(kwargs)
    if match.group(1):
        for i, item in enumerate(match.group(1).split(",")):
            if "=" in item:
                k, v = item.split("=", 1)
                params[k.strip().lower()] = int(v)
            elif i == 0:
                params["m"] = int(item)
            else:
                raise KeyError(f"cannot parse QUAD_LIN arguments in {name!r}")
    return quad_lin(**params)


@dataclass
class DerivativeReport:
    """Maximum relative errors of analytic derivatives against central differences."""

    x: np.ndarray
    h: float
    err_g: float
    err_A: float
    err_W: float
    threshold: float = 1e-4

    @property
    def flagged(self):
        return {k: v for k, v in (("g", self.err_g), ("A", self.err_A), ("W", self.err_W))
                if v > self.threshold}

    @property
    def ok(self):
        return not self.flagged


def _rel_err(analytic, fd):
    analytic = np.atleast_1d(analytic)
    fd = np.atleast_1d(fd)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - fd) / (1.0 + np.abs(fd))))


def check_derivatives(problem, x=None, h=None, lam=None, threshold=1e-4):
    """
    Compare ``eval_g``, ``eval_A`` and ``eval_W`` with central differences.

    The Hessian is checked by differencing ``grad_x L = g - A^T lam``.
    ``h`` defaults to ``1e-6 * (1 + ||x||)``.  Errors are measured as
    ``|analytic - fd| / (1 + |fd|)`` entrywise.
    """
    x = np.array(problem.x0 if x is None else x, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"x must have length {problem.n}")
    if h is None:
        h = 1e-6 * (1.0 + np.linalg.norm(x))
    if h <= 0:
        raise ValueError("h must be positive")
    if lam is None:
        lam = np.linspace(0.5, 1.5, problem.m)
    lam = np.asarray(lam, dtype=float)

    n, m = problem.n, problem.m
    fd_g = np.empty(n)
    fd_A = np.empty((m, n))
    fd_W = np.empty((n, n))

    def grad_lag(z):
        return problem.eval_g(z) - problem.eval_A(z).T @ lam

    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        fd_g[j] = (problem.eval_f(x + e) - problem.eval_f(x - e)) / (2.0 * h)
        fd_A[:, j] = (problem.eval_c(x + e) - problem.eval_c(x - e)) / (2.0 * h)
        fd_W[:, j] = (grad_lag(x + e) - grad_lag(x - e)) / (2.0 * h)

    return DerivativeReport(
        x=x, h=h,
        err_g=_rel_err(problem.eval_g(x), fd_g),
        err_A=_rel_err(problem.eval_A(x), fd_A),
        err_W=_rel_err(problem.eval_W(x, lam), fd_W),
        threshold=threshold,
    )
