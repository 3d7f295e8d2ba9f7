"""
Noise-tolerant Byrd-Omojokun trust-region SQP iteration.

Each iteration splits the trial step into a normal component ``v`` (reduces the
linearized infeasibility inside ``zeta * Delta``) and a tangential component
``h = Z d`` (reduces the Lagrangian model in the null space of the Jacobian).
Steps are judged with the merit function ``f + nu ||c||`` through a ratio whose
numerator and denominator are both shifted by ``xi (eps_f + nu eps_c)``, with
``xi = 2 / (1 - pi0)``.  Classic mode drops the shift.

Only the noisy facade of the oracle is used here.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .noise import EvaluationFault, NoisyOracle
from .problems import NlpProblem
from .subproblems import (
    RANK_TOL,
    clip_to_radius,
    least_squares_multipliers,
    null_space_basis,
    solve_normal_tr,
    solve_tangential_tr,
)

__all__ = [
    "SolverConfig",
    "SolverState",
    "StepDecomposition",
    "IterationRecord",
    "SolverResult",
    "PenaltyOverflow",
    "compute_pred",
    "update_penalty",
    "relaxed_ratio",
    "tr_update",
    "solver_step",
    "run_solver",
    "initial_state",
    "TRACE_COLUMNS",
]

log = logging.getLogger(__name__)

MODES = ("relaxed", "classic")


class PenaltyOverflow(RuntimeError):
    """The penalty parameter exceeded ``nu_max``."""


@dataclass(frozen=True)
class SolverConfig:
    """
    Algorithmic constants and limits.

    ``eps_f`` and ``eps_c`` are the noise levels the solver is told about;
    they only enter the ratio test (and only in relaxed mode).
    ``reuse_merit`` evaluates the merit once per point: the noisy ``f`` and
    ``c`` at the current iterate are those sampled when it was accepted.
    With ``reuse_merit=False`` the ratio test re-samples them.
    """

    pi0: float = 0.25
    pi1: float = 0.3
    zeta: float = 0.8
    tau: float = 2.0
    delta0: float = 1.0
    nu_init: float = 1.0
    eps_f: float = 0.0
    eps_c: float = 0.0
    mode: str = "relaxed"
    max_iter: int = 500
    delta_min: float = 1e-14
    delta_max: float = 1e10
    tol_feas: float = 1e-8
    tol_opt: float = 1e-8
    converge_window: int = 3
    nu_max: float = 1e12
    reuse_merit: bool = True
    rank_tol: float = RANK_TOL
    cg_tol: float = 1e-8
    refine_subproblems: bool = True
    penalty_stall_tol: float = 1e-16

    def __post_init__(self):
        for name in ("pi0", "pi1", "zeta"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.tau > 1.0:
            raise ValueError("tau must exceed 1")
        if not (self.delta0 > 0.0 and self.nu_init > 0.0):
            raise ValueError("delta0 and nu_init must be positive")
        if self.eps_f < 0.0 or self.eps_c < 0.0:
            raise ValueError("noise levels must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_iter < 0 or self.converge_window < 1:
            raise ValueError("max_iter must be >= 0 and converge_window >= 1")
        if not 0.0 < self.delta_min < self.delta_max:
            raise ValueError("need 0 < delta_min < delta_max")

    @property
    def xi(self):
        return 2.0 / (1.0 - self.pi0)

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return SolverConfig(**values)

    def to_dict(self):
        return asdict(self)


@dataclass
class SolverState:
    """Iterate, multipliers, radius, penalty, counter and the cached merit data."""

    x: np.ndarray
    lam: np.ndarray
    delta: float
    nu: float
    k: int = 0
    f_cur: float = math.nan
    c_cur: np.ndarray | None = None
    min_delta: float = math.inf


@dataclass
class StepDecomposition:
    """Composite step and its model/merit reductions."""

    v: np.ndarray
    h: np.ndarray
    p: np.ndarray
    vpred: float
    hpred: float
    pred: float
    ared: float
    rho: float
    accepted: bool
    delta: float
    nu: float
    tangential_budget: float
    normal_change: float
    pred_decomposed: float
    reason: str = ""
    gamma1_ok: bool | None = None
    # noisy data the step was computed from, for independent re-verification
    g: np.ndarray | None = field(default=None, repr=False)
    W: np.ndarray | None = field(default=None, repr=False)
    A: np.ndarray | None = field(default=None, repr=False)
    c: np.ndarray | None = field(default=None, repr=False)

    @property
    def pred_identity_residual(self):
        """Relative gap between the direct and the decomposed ``pred``."""
        scale = max(abs(self.pred), abs(self.pred_decomposed), abs(self.hpred),
                    abs(self.normal_change), abs(self.pred - self.hpred - self.normal_change), 1e-300)
        return abs(self.pred - self.pred_decomposed) / scale


TRACE_COLUMNS = (
    "iter", "f_noisy", "f_true", "feas_true", "opt_true", "feas_stat_true", "step_norm",
    "delta", "nu", "rho", "accepted", "vpred", "hpred", "pred", "ared",
    "cauchy_margin_normal", "cauchy_margin_tangential",
)


@dataclass
class IterationRecord:
    """
    One row of the solver trace.

    The ``*_true`` columns stay NaN inside the solver; the harness fills them
    by re-evaluating the exact problem at ``x``.
    """

    iter: int
    f_noisy: float
    step_norm: float
    delta: float
    nu: float
    rho: float
    accepted: bool
    vpred: float
    hpred: float
    pred: float
    ared: float
    cauchy_margin_normal: float
    cauchy_margin_tangential: float
    f_true: float = math.nan
    feas_true: float = math.nan
    opt_true: float = math.nan
    feas_stat_true: float = math.nan
    feas_stat_noisy: float = math.nan
    opt_noisy: float = math.nan
    x: np.ndarray | None = field(default=None, repr=False)
    step: StepDecomposition | None = field(default=None, repr=False)

    def row(self):
        return {name: getattr(self, name) for name in TRACE_COLUMNS}

    @classmethod
    def from_row(cls, row):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in row.items() if k in names})


class SolverResult(NamedTuple):
    state: SolverState
    trace: list
    status: str


def compute_pred(g, W, p, nu, vpred):
    """Predicted merit reduction ``-p^T g - 0.5 p^T W p + nu * vpred``."""
    p = np.asarray(p, dtype=float)
    return float(-(p @ g) - 0.5 * (p @ W @ p) + nu * vpred)


def update_penalty(model_change, vpred, nu, cfg, c_norm=1.0):
    """
    Raise ``nu`` by factors of ``tau`` until ``pred > pi1 * nu * vpred``.

    ``pred = model_change + nu * vpred`` is affine in ``nu``.  When
    ``vpred <= penalty_stall_tol * c_norm`` the condition hardly depends on
    ``nu`` and is tested once.

    Returns
    -------
    nu : float
    pred : float
    stalled : bool
        True when the condition fails for a (numerically) zero ``vpred``.

    Raises
    ------
    PenaltyOverflow
        If ``nu`` would exceed ``cfg.nu_max``.
    """
    if vpred < 0.0:
        raise ValueError("vpred must be non-negative")
    pred = model_change + nu * vpred
    if vpred <= cfg.penalty_stall_tol * c_norm:
        return nu, pred, not pred > cfg.pi1 * nu * vpred
    while not pred > cfg.pi1 * nu * vpred:
        nu *= cfg.tau
        if nu > cfg.nu_max:
            raise PenaltyOverflow(f"penalty parameter exceeded {cfg.nu_max:g}")
        pred = model_change + nu * vpred
    return nu, pred, False


def relaxed_ratio(ared, pred, nu, cfg):
    """
    Ratio ``(ared + s) / (pred + s)`` with ``s = xi (eps_f + nu eps_c)`` in
    relaxed mode and ``s = 0`` in classic mode.  A non-positive denominator
    yields ``-inf``.
    """
    shift = cfg.xi * (cfg.eps_f + nu * cfg.eps_c) if cfg.mode == "relaxed" else 0.0
    den = pred + shift
    if not den > 0.0:
        return -math.inf
    return (ared + shift) / den


def tr_update(delta, rho, cfg):
    """Accept iff ``rho > pi0``; expand by ``tau`` (capped) or shrink by ``tau``."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if rho > cfg.pi0:
        return True, min(cfg.tau * delta, cfg.delta_max)
    return False, delta / cfg.tau


def _as_oracle(problem_or_oracle):
    if isinstance(problem_or_oracle, NlpProblem):
        return NoisyOracle(problem_or_oracle)
    return problem_or_oracle


def initial_state(oracle, cfg, x0=None):
    x = np.array(oracle.problem.x0 if x0 is None else x0, dtype=float)
    return SolverState(x=x, lam=np.zeros(oracle.m), delta=cfg.delta0, nu=cfg.nu_init,
                       f_cur=oracle.f(x), c_cur=oracle.c(x), min_delta=cfg.delta0)


def _gamma1_check(A, v, vpred, rank_tol):
    if A.shape[0] == 0 or vpred < 0.0:
        return None
    sv = np.linalg.svd(A, compute_uv=False)
    smin, smax = sv[-1], sv[0]
    if not smin > rank_tol:
        return None
    kappa = smax / smin
    gamma1 = 2.0 / (smin * min(1.0, 0.5 / kappa ** 2))
    nv = float(np.linalg.norm(v))
    ok = nv <= gamma1 * vpred * (1.0 + 1e-8) + 1e-14
    if not ok:
        log.warning("normal step bound violated: ||v|| = %.3e > Gamma1 * vpred = %.3e", nv, gamma1 * vpred)
    return ok


def solver_step(state, oracle, cfg):
    """
    Run one iteration from ``state``.

    Returns the new state and the :class:`IterationRecord` of this iteration.
    Raises :class:`EvaluationFault` or :class:`PenaltyOverflow`.
    """
    x = state.x
    delta = state.delta
    if cfg.reuse_merit and state.c_cur is not None:
        f_k, c_k = state.f_cur, state.c_cur
    else:
        f_k, c_k = oracle.f(x), oracle.c(x)
    g = oracle.g(x)
    A = np.atleast_2d(oracle.A(x)).reshape(oracle.m, oracle.n)
    lam = least_squares_multipliers(g, A, cfg.rank_tol)
    W = oracle.W(x, lam)
    c_norm = float(np.linalg.norm(c_k))

    normal = solve_normal_tr(A, c_k, cfg.zeta * delta, tol=cfg.rank_tol, refine=cfg.refine_subproblems)
    v = normal.step
    basis = null_space_basis(A, cfg.rank_tol)
    if basis.width and v.any():
        # For ill-conditioned A the least-squares v leaves range(A^T) by about
        # eps * cond(A); project so that v and h = Z d stay orthogonal.
        v = clip_to_radius(v - basis.Z @ (basis.Z.T @ v), cfg.zeta * delta)
    normal_vpred = c_norm - float(np.linalg.norm(A @ v + c_k))
    normal_margin = normal_vpred - normal.cauchy_bound
    budget = math.sqrt(max(delta * delta - float(v @ v), 0.0))
    q = g + W @ v
    tangential = solve_tangential_tr(q, W, basis, budget, tol=cfg.cg_tol,
                                     refine=cfg.refine_subproblems)
    h = tangential.step
    p = v + h

    vpred = max(c_norm - float(np.linalg.norm(A @ p + c_k)), 0.0)
    hpred = tangential.predicted_reduction
    model_change = compute_pred(g, W, p, 0.0, 0.0)
    normal_change = compute_pred(g, W, v, 0.0, 0.0)

    nu, pred, stalled = update_penalty(model_change, vpred, state.nu, cfg, c_norm)
    gamma1_ok = _gamma1_check(A, v, normal_vpred, cfg.rank_tol)

    x_trial = x + p
    f_t = oracle.f(x_trial)
    c_t = oracle.c(x_trial)
    if not cfg.reuse_merit:
        f_k, c_k_merit = oracle.f(x), oracle.c(x)
    else:
        c_k_merit = c_k
    ared = (f_k + nu * float(np.linalg.norm(c_k_merit))) - (f_t + nu * float(np.linalg.norm(c_t)))

    if stalled:
        rho, reason = -math.inf, "PenaltyStall"
        accepted, new_delta = False, delta / cfg.tau
    else:
        rho = relaxed_ratio(ared, pred, nu, cfg)
        accepted, new_delta = tr_update(delta, rho, cfg)
        reason = ""

    step = StepDecomposition(
        v=v, h=h, p=p, vpred=vpred, hpred=hpred, pred=pred, ared=ared, rho=rho,
        accepted=accepted, delta=delta, nu=nu, tangential_budget=budget,
        normal_change=normal_change,
        pred_decomposed=nu * vpred + hpred + normal_change,
        reason=reason, gamma1_ok=gamma1_ok, g=g, W=W, A=A, c=c_k,
    )
    record = IterationRecord(
        iter=state.k, f_noisy=f_k, step_norm=float(np.linalg.norm(p)) if accepted else 0.0,
        delta=delta, nu=nu, rho=rho, accepted=accepted, vpred=vpred, hpred=hpred,
        pred=pred, ared=ared, cauchy_margin_normal=normal_margin,
        cauchy_margin_tangential=tangential.cauchy_margin,
        feas_stat_noisy=float(np.linalg.norm(A.T @ c_k)),
        opt_noisy=float(np.linalg.norm(basis.Z.T @ g)),
        x=x.copy(), step=step,
    )

    if accepted:
        new_x, f_cur, c_cur = x_trial, f_t, c_t
    else:
        new_x, f_cur, c_cur = x, state.f_cur, state.c_cur
    new_state = SolverState(x=new_x, lam=lam, delta=new_delta, nu=nu, k=state.k + 1,
                            f_cur=f_cur, c_cur=c_cur, min_delta=min(state.min_delta, new_delta))
    return new_state, record


def run_solver(problem_or_oracle, cfg=None, x0=None):
    """
    Iterate until a termination condition holds.

    Statuses: ``Converged`` (``||A^T c|| <= tol_feas`` and
    ``||Z^T g|| <= tol_opt`` on the noisy data for ``converge_window``
    consecutive iterations), ``TrCollapse`` (``Delta < delta_min``),
    ``MaxIter``, ``PenaltyOverflow`` and ``EvaluationFault``.

    Returns
    -------
    SolverResult
        ``(state, trace, status)``.
    """
    cfg = SolverConfig() if cfg is None else cfg
    oracle = _as_oracle(problem_or_oracle)
    trace = []
    try:
        state = initial_state(oracle, cfg, x0)
    except EvaluationFault:
        state = SolverState(x=np.array(oracle.problem.x0, dtype=float), lam=np.zeros(oracle.m),
                            delta=cfg.delta0, nu=cfg.nu_init)
        return SolverResult(state, trace, "EvaluationFault")
    streak = 0
    status = "MaxIter"
    while state.k < cfg.max_iter:
        try:
            state, record = solver_step(state, oracle, cfg)
        except EvaluationFault as exc:
            log.warning("iteration %d aborted: %s", state.k, exc)
            status = "EvaluationFault"
            break
        except PenaltyOverflow as exc:
            log.warning("iteration %d aborted: %s", state.k, exc)
            status = "PenaltyOverflow"
            break
        trace.append(record)
        if record.feas_stat_noisy <= cfg.tol_feas and record.opt_noisy <= cfg.tol_opt:
            streak += 1
        else:
            streak = 0
        if streak >= cfg.converge_window:
            status = "Converged"
            break
        if state.delta < cfg.delta_min:
            status = "TrCollapse"
            break
    return SolverResult(state, trace, status)
