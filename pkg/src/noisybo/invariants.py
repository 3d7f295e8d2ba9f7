"""Per-iteration certificates that every solver trace must satisfy."""

import math

import numpy as np

__all__ = ["check_trace", "CAUCHY_TOL", "IDENTITY_RTOL", "ORTHO_TOL"]

CAUCHY_TOL = 1e-8
IDENTITY_RTOL = 1e-8
ORTHO_TOL = 1e-8
RADIUS_RTOL = 1e-12
# slack for inequalities derived algebraically from a floating-point test
_ROUNDOFF = 8.0 * np.finfo(float).eps


def _nu_step_ok(prev, cur, tau):
    if cur == prev:
        return True
    if cur < prev:
        return False
    j = round(math.log(cur / prev) / math.log(tau))
    return j >= 1 and abs(prev * tau ** j - cur) <= 1e-12 * cur


def check_trace(trace, cfg, nu_init=None):
    """
    Return the list of certificate violations in ``trace``.

    Checked on every iteration: both Cauchy margins, the ``pred`` identity,
    the penalty-loop exit condition (iterations rejected as ``PenaltyStall``
    are exempt: the loop cannot exit for them), the accepted-step merit
    inequality in relaxed mode, orthogonality of ``v`` and ``h``, the
    radius bounds and the tangential budget, and the ``nu`` update pattern.
    """
    out = []
    prev_nu = cfg.nu_init if nu_init is None else nu_init
    for rec in trace:
        k = rec.iter
        st = rec.step
        if rec.cauchy_margin_normal < -CAUCHY_TOL:
            out.append(f"iter {k}: normal Cauchy margin {rec.cauchy_margin_normal:.3e}")
        if rec.cauchy_margin_tangential < -CAUCHY_TOL:
            out.append(f"iter {k}: tangential Cauchy margin {rec.cauchy_margin_tangential:.3e}")
        if not _nu_step_ok(prev_nu, rec.nu, cfg.tau):
            out.append(f"iter {k}: nu {prev_nu:g} -> {rec.nu:g} is not a tau power increase")
        prev_nu = rec.nu
        if st is None:
            continue
        if st.pred_identity_residual > IDENTITY_RTOL:
            out.append(f"iter {k}: pred identity residual {st.pred_identity_residual:.3e}")
        if st.reason != "PenaltyStall" and not st.pred > cfg.pi1 * st.nu * st.vpred:
            out.append(f"iter {k}: pred {st.pred:.3e} <= pi1 nu vpred")
        if st.accepted and cfg.mode == "relaxed":
            slack = 2.0 * (cfg.eps_f + st.nu * cfg.eps_c)
            lhs, rhs = st.ared, cfg.pi0 * st.pred - slack
            scale = _ROUNDOFF * max(abs(st.ared), abs(st.pred), slack, 1e-300)
            if not lhs > rhs - scale:
                out.append(f"iter {k}: accepted ared {lhs:.6e} <= {rhs:.6e}")
        nv, nh, npn = (float(np.linalg.norm(a)) for a in (st.v, st.h, st.p))
        if abs(float(st.v @ st.h)) > ORTHO_TOL * nv * nh:
            out.append(f"iter {k}: |v.h| = {abs(float(st.v @ st.h)):.3e}")
        if nv > cfg.zeta * st.delta * (1.0 + RADIUS_RTOL):
            out.append(f"iter {k}: ||v|| {nv:.6e} > zeta Delta")
        if npn > st.delta * (1.0 + RADIUS_RTOL):
            out.append(f"iter {k}: ||p|| {npn:.6e} > Delta")
        if st.tangential_budget < (1.0 - cfg.zeta) * st.delta * (1.0 - RADIUS_RTOL):
            out.append(f"iter {k}: tangential budget {st.tangential_budget:.6e} < (1 - zeta) Delta")
        if not np.array_equal(st.p, st.v + st.h):
            out.append(f"iter {k}: p != v + h")
    return out
