"""
Acceptance suite.  Every criterion prints one PASS/FAIL line (they are also
collected in the terminal summary) and then asserts it.

Criteria 4 to 6 are checked on every iteration of every run made by this
module, recomputing the certificates from the noisy data each step used.
"""

import functools
import math
import time

import numpy as np
import pytest
from oracles import brute_force_ball, random_normal_instance, random_tangential_instance

from noisybo import (
    ExperimentSpec,
    NoiseSpec,
    NoisyOracle,
    SolverConfig,
    builtin_problem,
    quad_lin,
    run_experiment,
    run_solver,
    scenario,
)
from noisybo.subproblems import least_squares_multipliers, null_space_basis, solve_normal_tr, solve_tangential_tr

FULL_RANK = ["HS7", "HS6", "HS27", "HS39", "BYRDSPHR", "QUAD_LIN(3)"]
ALL_BUILTINS = FULL_RANK + ["RANK_DEFICIENT_TOY"]


def _timed(fn):
    @functools.wraps(fn)
    @functools.cache
    def wrapper():
        t0 = time.perf_counter()
        out = fn()
        return out, time.perf_counter() - t0

    return wrapper


# --- the runs ---------------------------------------------------------------------


@_timed
def noiseless_pairs():
    """Classic and relaxed on every built-in, eps = 0, 200 iterations (no early stop)."""
    out = {}
    for name in ALL_BUILTINS:
        problem = builtin_problem(name)
        pair = []
        for mode in ("classic", "relaxed"):
            cfg = SolverConfig(mode=mode, max_iter=200, tol_feas=0.0, tol_opt=0.0)
            pair.append((cfg, run_solver(problem, cfg)))
        out[name] = pair
    return out


@_timed
def noiseless_reference():
    hs7 = builtin_problem("HS7")
    cfg = SolverConfig(delta0=1.0)
    quads = []
    for seed in range(20):
        problem = quad_lin(m=3, seed=seed)
        quads.append((problem, cfg, run_solver(problem, cfg)))
    return (hs7, cfg, run_solver(hs7, cfg)), quads


@_timed
def small_delta0():
    return run_experiment(scenario("SmallDelta0", repetitions=10))


@_timed
def other_scenarios():
    return run_experiment(scenario("Benign", repetitions=3)) + run_experiment(scenario("MidRunCollapse", repetitions=3))


@_timed
def penalty_runs():
    out = []
    for name in ALL_BUILTINS:
        problem = builtin_problem(name)
        for eps in (0.01, 0.1):
            for seed in range(10):
                for mode in ("classic", "relaxed"):
                    cfg = SolverConfig(mode=mode, eps_f=eps, eps_c=eps)
                    res = run_solver(NoisyOracle(problem, NoiseSpec.uniform(eps, seed=seed)), cfg)
                    out.append((name, eps, seed, cfg, res))
    return out


def all_traces():
    """``(label, cfg, trace)`` for every run made by this module."""
    items = []
    for name, pair in noiseless_pairs()[0].items():
        for cfg, res in pair:
            items.append((f"{name}/{cfg.mode}/noiseless", cfg, res.trace))
    (hs7, cfg, res), quads = noiseless_reference()[0]
    items.append(("HS7/reference", cfg, res.trace))
    items += [(f"{p.name}/reference", c, r.trace) for p, c, r in quads]
    for r in small_delta0()[0] + other_scenarios()[0]:
        items.append((f"{r.summary.problem}/{r.summary.mode}/rep{r.summary.rep}", r.config, r.trace))
    for name, eps, seed, cfg, res in penalty_runs()[0]:
        items.append((f"{name}/{cfg.mode}/eps{eps}/seed{seed}", cfg, res.trace))
    return items


# --- independent certificate recomputation -------------------------------------------


def normal_cauchy_bound(A, c, radius):
    grad = A.T @ c
    gn, cn = np.linalg.norm(grad), np.linalg.norm(c)
    if gn == 0.0 or cn == 0.0:
        return 0.0
    return gn / (2.0 * cn) * min(radius, gn / np.linalg.norm(A.T @ A, 2))


def tangential_cauchy_bound(gr, B, radius):
    gn = np.linalg.norm(gr)
    bn = np.linalg.norm(B, 2) if B.size else 0.0
    return 0.5 * gn * (min(radius, gn / bn) if bn > 0.0 else radius)


def certificates(cfg, rec):
    st = rec.step
    A, c, g, W = st.A, st.c, st.g, st.W
    v, h, p = st.v, st.h, st.p
    delta, nu = st.delta, st.nu
    vpred_v = np.linalg.norm(c) - np.linalg.norm(A @ v + c)
    Z = null_space_basis(A, cfg.rank_tol).Z
    q = g + W @ v
    hpred = -(q @ h) - 0.5 * h @ W @ h
    budget = math.sqrt(max(delta ** 2 - v @ v, 0.0))
    return {
        "margin_normal": vpred_v - normal_cauchy_bound(A, c, cfg.zeta * delta),
        "margin_tangential": hpred - tangential_cauchy_bound(Z.T @ q, Z.T @ W @ Z, budget),
        "hpred": hpred,
        "budget": budget,
        "normal_change": -(g @ v) - 0.5 * v @ W @ v,
        "pred_direct": -(p @ g) - 0.5 * p @ W @ p + nu * st.vpred,
        "vpred_p": np.linalg.norm(c) - np.linalg.norm(A @ p + c),
    }


# --- criteria ----------------------------------------------------------------------


def test_criterion_1_noiseless_equivalence(acceptance_report):
    pairs, elapsed = noiseless_pairs()
    bad = []
    iters = 0
    for name, ((_, a), (_, b)) in pairs.items():
        iters += len(a.trace)
        same = a.status == b.status and len(a.trace) == len(b.trace) and np.array_equal(a.state.x, b.state.x)
        for ra, rb in zip(a.trace, b.trace):
            same = same and repr(ra.row()) == repr(rb.row()) and ra.x.tobytes() == rb.x.tobytes() \
                and ra.step.p.tobytes() == rb.step.p.tobytes()
        if not same:
            bad.append(name)
    ok = not bad and elapsed < 5.0
    acceptance_report(1, ok, f"{len(pairs)} built-ins, {iters} iterations per mode, "
                             f"{len(bad)} mismatching {bad}, {elapsed:.2f} s (< 5 s)")
    assert ok


def test_criterion_2_noiseless_correctness(acceptance_report):
    ((hs7, _, (state, _, status)), quads), elapsed = noiseless_reference()
    # target value: verify the KKT residual at the analytic minimizer
    xs = np.array([0.0, math.sqrt(3.0)])
    g, A = hs7.eval_g(xs), hs7.eval_A(xs)
    lam = least_squares_multipliers(g, A)
    kkt = max(np.linalg.norm(hs7.eval_c(xs)), np.linalg.norm(A.T @ lam - g))
    f_err = abs(hs7.eval_f(state.x) + math.sqrt(3.0))
    c_err = float(np.linalg.norm(hs7.eval_c(state.x)))
    hs7_ok = status == "Converged" and f_err <= 1e-6 and c_err <= 1e-6 and kkt <= 1e-8

    worst = 0.0
    quad_ok = True
    for problem, _, (qstate, _, qstatus) in quads:
        # closed-form KKT solve assembled from the problem data
        n, m = problem.n, problem.m
        zero = np.zeros(n)
        H = problem.eval_W(zero, np.zeros(m))
        C = problem.eval_A(zero)
        b = problem.eval_g(zero)
        d = -problem.eval_c(zero)
        K = np.block([[H, -C.T], [C, np.zeros((m, m))]])
        x_star = np.linalg.solve(K, np.concatenate([-b, d]))[:n]
        err = max(np.max(np.abs(qstate.x - x_star)), abs(problem.eval_f(qstate.x) - problem.eval_f(x_star)))
        worst = max(worst, err)
        quad_ok = quad_ok and qstatus == "Converged" and err <= 1e-6
    ok = hs7_ok and quad_ok and elapsed < 10.0
    acceptance_report(2, ok, f"HS7 {status}: |f - f*| = {f_err:.1e}, ||c|| = {c_err:.1e}, "
                             f"KKT residual at x* {kkt:.1e}; QUAD_LIN(3) worst error over 20 seeds "
                             f"{worst:.1e}; {elapsed:.2f} s (< 10 s)")
    assert ok


def test_criterion_3_small_initial_radius(acceptance_report):
    results, elapsed = small_delta0()
    f_star = builtin_problem("HS7").f_star
    classic = [r.summary for r in results if r.summary.mode == "classic"]
    relaxed = [r.summary for r in results if r.summary.mode == "relaxed"]
    n_collapse = sum(s.status == "TrCollapse" and s.feas_true > 0.1 for s in classic)
    n_good = sum(s.iterations <= 500 and s.feas_true <= 0.3 and abs(s.f_true - f_star) <= 0.3 for s in relaxed)
    ok = len(classic) == len(relaxed) == 10 and n_collapse >= 9 and n_good >= 9 and elapsed < 60.0
    acceptance_report(3, ok, f"classic TrCollapse with ||c|| > 0.1 in {n_collapse}/10, relaxed within "
                             f"0.3 of feasibility and f* in {n_good}/10 "
                             f"(max ||c|| {max(s.feas_true for s in relaxed):.3f}, "
                             f"max |f - f*| {max(abs(s.f_true - f_star) for s in relaxed):.3f}); "
                             f"{elapsed:.1f} s (< 60 s)")
    assert ok


def _random_subproblem(rng):
    n = int(rng.integers(1, 9))
    m = int(rng.integers(1, n + 1))
    A = rng.standard_normal((m, n)) * 10 ** rng.uniform(-2, 2)
    if m > 1 and rng.random() < 0.2:
        A[-1] = A[0] * rng.uniform(-2, 2)
    c = rng.standard_normal(m) * 10 ** rng.uniform(-2, 2)
    M = rng.standard_normal((n, n))
    W = 0.5 * (M + M.T) * 10 ** rng.uniform(-2, 2)
    g = rng.standard_normal(n) * 10 ** rng.uniform(-2, 2)
    return A, c, W, g, 10 ** rng.uniform(-4, 2)


def test_criterion_4_cauchy_decrease(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240)
    worst_n = worst_t = math.inf
    zeta = 0.8
    for _ in range(1000):
        A, c, W, g, delta = _random_subproblem(rng)
        normal = solve_normal_tr(A, c, zeta * delta)
        v = normal.step
        Z = null_space_basis(A).Z
        budget = math.sqrt(max(delta ** 2 - v @ v, 0.0))
        tang = solve_tangential_tr(g + W @ v, W, Z, budget)
        q = g + W @ v
        vp = np.linalg.norm(c) - np.linalg.norm(A @ v + c)
        hp = -(q @ tang.step) - 0.5 * tang.step @ W @ tang.step
        worst_n = min(worst_n, normal.cauchy_margin, vp - normal_cauchy_bound(A, c, zeta * delta))
        worst_t = min(worst_t, tang.cauchy_margin, hp - tangential_cauchy_bound(Z.T @ q, Z.T @ W @ Z, budget))
    elapsed_random = time.perf_counter() - t0

    traces = all_traces()
    n_iter = 0
    run_n = run_t = math.inf
    for _, cfg, trace in traces:
        for rec in trace:
            n_iter += 1
            cert = certificates(cfg, rec)
            run_n = min(run_n, rec.cauchy_margin_normal, cert["margin_normal"])
            run_t = min(run_t, rec.cauchy_margin_tangential, cert["margin_tangential"])
    ok = min(worst_n, run_n) >= -1e-8 and min(worst_t, run_t) >= -1e-8 and elapsed_random < 30.0
    acceptance_report(4, ok, f"1000 random instances: min margins normal {worst_n:.2e}, tangential "
                             f"{worst_t:.2e} ({elapsed_random:.1f} s < 30 s); {len(traces)} runs / {n_iter} "
                             f"iterations: normal {run_n:.2e}, tangential {run_t:.2e} (>= -1e-8)")
    assert ok


def test_criterion_5_merit_identities(acceptance_report):
    worst_identity = 0.0
    penalty_fail = accept_fail = 0
    stalls = accepted_relaxed = n_iter = 0
    for _, cfg, trace in all_traces():
        for rec in trace:
            n_iter += 1
            st = rec.step
            cert = certificates(cfg, rec)
            rhs = st.nu * st.vpred + cert["hpred"] + cert["normal_change"]
            scale = max(abs(st.pred), abs(st.nu * st.vpred), abs(cert["hpred"]), abs(cert["normal_change"]), 1e-300)
            worst_identity = max(worst_identity, abs(st.pred - rhs) / scale,
                                 abs(st.pred - cert["pred_direct"]) / scale)
            if st.reason == "PenaltyStall":
                # the loop cannot exit when vpred vanishes; the step is rejected instead
                stalls += 1
                assert not st.accepted
            elif not st.pred > cfg.pi1 * st.nu * st.vpred:
                penalty_fail += 1
            if st.accepted and cfg.mode == "relaxed":
                accepted_relaxed += 1
                if not st.ared > cfg.pi0 * st.pred - 2.0 * (cfg.eps_f + st.nu * cfg.eps_c):
                    accept_fail += 1
    ok = worst_identity <= 1e-8 and penalty_fail == 0 and accept_fail == 0
    acceptance_report(5, ok, f"{n_iter} iterations: pred identity max rel. residual {worst_identity:.1e} "
                             f"(<= 1e-8), pred <= pi1 nu vpred in {penalty_fail} ({stalls} PenaltyStall "
                             f"rejections), accepted-step inequality violated in {accept_fail}/{accepted_relaxed}")
    assert ok


def test_criterion_6_decomposition_geometry(acceptance_report):
    worst = {"ortho": 0.0, "v": 0.0, "p": 0.0, "budget": math.inf}
    n_iter = 0
    bad = 0
    for _, cfg, trace in all_traces():
        for rec in trace:
            n_iter += 1
            st = rec.step
            cert = certificates(cfg, rec)
            nv, nh, npn = np.linalg.norm(st.v), np.linalg.norm(st.h), np.linalg.norm(st.p)
            ortho = abs(st.v @ st.h) / (nv * nh) if nv * nh > 0 else 0.0
            worst["ortho"] = max(worst["ortho"], ortho)
            worst["v"] = max(worst["v"], nv / (cfg.zeta * st.delta))
            worst["p"] = max(worst["p"], npn / st.delta)
            worst["budget"] = min(worst["budget"], cert["budget"] / ((1 - cfg.zeta) * st.delta))
            if not (ortho <= 1e-8 and nv <= cfg.zeta * st.delta and npn <= st.delta * (1 + 1e-12)
                    and cert["budget"] >= (1 - cfg.zeta) * st.delta and np.array_equal(st.p, st.v + st.h)):
                bad += 1
    ok = bad == 0
    acceptance_report(6, ok, f"{n_iter} iterations, {bad} violations: max |v.h|/(|v||h|) {worst['ortho']:.1e}, "
                             f"max ||v||/(zeta Delta) {worst['v']:.15f}, max ||p||/Delta {worst['p']:.15f}, "
                             f"min budget/((1-zeta) Delta) {worst['budget']:.3f}")
    assert ok


def _nu_pattern_ok(trace, cfg):
    prev = cfg.nu_init
    for rec in trace:
        if rec.nu != prev:
            ratio = rec.nu / prev
            j = round(math.log(ratio, cfg.tau))
            if rec.nu < prev or j < 1 or rec.nu != prev * cfg.tau ** j:
                return False
        prev = rec.nu
    return True


def test_criterion_7_penalty_behaviour(acceptance_report):
    runs, elapsed = penalty_runs()
    pattern_bad = 0
    nu_max = {}
    for _, cfg, trace in all_traces():
        pattern_bad += not _nu_pattern_ok(trace, cfg)
    for name, _, _, _, res in runs:
        final = max([res.state.nu] + [r.nu for r in res.trace])
        nu_max[name] = max(nu_max.get(name, 0.0), final)
    bounded = all(nu_max[name] <= 1e6 for name in FULL_RANK)
    ok = pattern_bad == 0 and bounded
    detail = ", ".join(f"{k} {v:g}" for k, v in nu_max.items() if k in FULL_RANK)
    acceptance_report(7, ok, f"{pattern_bad} runs break the tau-power pattern; max nu on full-rank built-ins "
                             f"(eps 0.01 and 0.1, 10 seeds, both modes): {detail} (<= 1e6); "
                             f"rank-deficient toy reaches {nu_max['RANK_DEFICIENT_TOY']:g}; {elapsed:.1f} s")
    assert ok


def test_criterion_8_oracle_equivalence(acceptance_report):
    t0 = time.perf_counter()
    gaps_n, gaps_t = [], []
    for seed in range(200):
        A, c, radius = random_normal_instance(np.random.default_rng(10_000 + seed))
        v = solve_normal_tr(A, c, radius).step
        ours = (A.T @ c) @ v + 0.5 * v @ (A.T @ A) @ v
        gaps_n.append(abs(ours - brute_force_ball(A.T @ c, A.T @ A, radius)))
        q, W, Z, r2 = random_tangential_instance(np.random.default_rng(20_000 + seed))
        h = solve_tangential_tr(q, W, Z, r2).step
        d = Z.Z.T @ h
        B = Z.Z.T @ W @ Z.Z
        ours_t = (Z.Z.T @ q) @ d + 0.5 * d @ B @ d
        gaps_t.append(abs(ours_t - brute_force_ball(Z.Z.T @ q, B, r2)))
    elapsed = time.perf_counter() - t0
    ok = max(gaps_n) <= 1e-4 and max(gaps_t) <= 1e-4 and elapsed < 20.0
    acceptance_report(8, ok, f"200 normal + 200 tangential instances (n <= 3): max objective gap "
                             f"{max(gaps_n):.1e} / {max(gaps_t):.1e} (<= 1e-4); {elapsed:.1f} s (< 20 s)")
    assert ok


def test_criterion_9_determinism(tmp_path, acceptance_report):
    specs = []
    sd = scenario("SmallDelta0", repetitions=2)
    specs.append(sd)
    sj = scenario("MidRunCollapse", repetitions=2)
    sj.fmt = "json"
    specs.append(sj)
    specs.append(ExperimentSpec("QUAD_LIN(n=5,m=2,seed=3)", NoiseSpec.uniform(0.01, eps_W=0.01, seed=77,
                                                                         distribution="gaussian"),
                                {"delta0": 1.0, "max_iter": 200}, repetitions=2, fmt="json"))
    n_files = 0
    mismatched = []
    for i, spec in enumerate(specs):
        dirs = []
        for attempt in ("a", "b"):
            spec.out = str(tmp_path / f"{i}{attempt}")
            run_experiment(spec)
            dirs.append(tmp_path / f"{i}{attempt}")
        names = sorted(p.name for p in dirs[0].iterdir())
        if names != sorted(p.name for p in dirs[1].iterdir()):
            mismatched.append(f"spec {i} file set")
        for name in names:
            n_files += 1
            if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                mismatched.append(name)
    ok = not mismatched
    acceptance_report(9, ok, f"{len(specs)} specs re-run, {n_files} CSV/JSON files compared, "
                             f"{len(mismatched)} differ {mismatched[:3]}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
