"""Acceptance gate: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed to the
terminal even when output is captured).
"""
import time

import numpy as np
import pytest
from scipy.linalg import expm

from nudich import examples as E
from nudich.core import OdeFamily, check_asymptotics, compatibility_margin, evaluate
from nudich.datko import (
    DatkoConfig,
    datko_certify,
    datko_functional,
    derived_constants,
    fit_tail_envelope,
    necessary_direction_constants,
)
from nudich.envelope import (
    EnvelopeFit,
    Side,
    certify_dichotomy,
    collect_samples,
    envelope_margin,
    fit_envelope,
    projection_norm_curve,
    refute_envelope,
)
from nudich.lyapunov import (
    LyapunovEvaluator,
    canonical_H,
    check_form_conditions,
    check_L1_L2,
    check_lyapunov_inequality,
    polarize_W,
    theorem_3_4_pipeline,
)
from nudich.quadrature import integrate

from test_envelope import BOX, brute_force, make

SLACK = 0.05
_shared = {}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def ex25_grid():
    return E.build("Ex2_5").grid(t_max=20, time_points=41)


def fit_ex25():
    if "c1" not in _shared:
        ex = E.build("Ex2_5")
        _shared["c1"] = certify_dichotomy(ex.family, ex.projection, ex25_grid())
    return _shared["c1"]


def test_criterion_1_ex25_reproduction(report):
    start = time.perf_counter()
    ex = E.build("Ex2_5")
    grid = ex25_grid()
    dc = fit_ex25()
    ss = collect_samples(ex.family, ex.projection, grid)
    p_margin = envelope_margin(ss.p, Side.P_FORWARD, 1.0, 1.0, 3.0)
    q_margin = envelope_margin(ss.q, Side.Q_BACKWARD, 1.0, 1.0, 4.0)
    fits_tight = all(
        abs(np.log(f.N)) <= SLACK and abs(f.alpha - a) <= SLACK and abs(f.nu - nu) <= SLACK
        for f, a, nu in ((dc.p_fit, 1.0, 3.0), (dc.q_fit, 1.0, 4.0))
    )
    pairs = [(n * np.pi + np.pi / 2, n * np.pi) for n in range(6)]
    wit = collect_samples(ex.family, ex.projection, pairs, [np.array([1.0, 0.0])])
    uni = refute_envelope(wit.p, Side.P_FORWARD, uniform=True)
    growth = min(uni.growth_factors) if uni.growth_factors else 0.0
    elapsed = time.perf_counter() - start
    ok = (max(p_margin, q_margin) <= SLACK and fits_tight and not uni.feasible
          and not dc.uniform and growth >= np.exp(np.pi) - 0.01 and elapsed <= 10.0)
    report(1, ok, f"P fit ({dc.p_fit.N:.6f}, {dc.p_fit.alpha:.6f}, {dc.p_fit.nu:.6f}) "
                  f"Q fit ({dc.q_fit.N:.6f}, {dc.q_fit.alpha:.6f}, {dc.q_fit.nu:.6f}) "
                  f"margins {p_margin:.2e}/{q_margin:.2e} uniform={dc.uniform} "
                  f"min growth {growth:.4f} (need {np.exp(np.pi) - 0.01:.4f}) time {elapsed:.2f}s")


def test_criterion_2_ex32_both_directions(report):
    start = time.perf_counter()
    ex = E.build("Ex3_2")
    grid = ex.grid(t_max=10, time_points=21)
    env = fit_tail_envelope(ex.family, ex.projection, grid)
    worst = -np.inf
    for p in (1.0, 2.0):
        cfg = DatkoConfig(p, 0.5, 1.0)
        for t in (0.5, 1.0, 3.0):
            for x in grid.directions(2):
                val = datko_functional(ex.family, ex.projection, t, x, cfg, env)
                px = np.linalg.norm(ex.projection.P(t) @ x)
                qx = np.linalg.norm(ex.projection.Q(t) @ x)
                rhs = (2 / p) * np.exp(p * t) * (px ** p + qx ** p)
                worst = max(worst, val.total - rhs - val.error)
    bound_ok = worst <= 0
    cert = datko_certify(ex.family, ex.projection, ex.grid(t_max=6, time_points=7),
                         config=DatkoConfig(2.0, 0.5, 1.0))
    flags = cert.hypothesis_ok
    flags_ok = flags == {"gamma_gt_epsilon": False, "beta_in_range": False}
    pairs = [(2 * n * np.pi + np.pi / 2, 0.0) for n in range(6)]
    wit = collect_samples(ex.family, ex.projection, pairs, [np.array([0.0, 1.0])])
    q_rep = refute_envelope(wit.q, Side.Q_BACKWARD, uniform=False)
    dc = certify_dichotomy(ex.family, ex.projection, grid)
    elapsed = time.perf_counter() - start
    ok = bound_ok and flags_ok and not q_rep.feasible and not dc.dichotomy and elapsed <= 30.0
    report(2, ok, f"(a) max D - rhs - err = {worst:.3e}; (b) fitted epsilon {cert.epsilon:.5f}, flags {flags}; "
                  f"(c) Q witness infeasible={not q_rep.feasible}, dichotomy={dc.dichotomy}; "
                  f"time {elapsed:.2f}s")


def test_criterion_3_necessary_round_trip(report):
    ex = E.build("Ex2_5")
    grid = ex.grid(t_max=10, time_points=11)
    cfg = necessary_direction_constants(fit_ex25(), 2.0)
    rep = datko_certify(ex.family, ex.projection, grid, config=cfg, epsilon=1.0)
    _shared["K_est"] = rep.K_est
    ok = (cfg.beta == pytest.approx(1.0) and cfg.gamma == pytest.approx(1.5)
          and cfg.K == pytest.approx(1.0) and rep.K_est <= 1.05)
    report(3, ok, f"beta={cfg.beta:.6f} gamma={cfg.gamma:.6f} K={cfg.K:.6f} "
                  f"K_est={rep.K_est:.6f} over {len(rep.per_point)} points")


def test_criterion_4_sufficient_round_trip(report):
    ex = E.build("Ex2_5")
    grid = ex25_grid()
    M, eps, omega = 1.0, 1.0, 1e-3
    comp = compatibility_margin(ex.family, ex.projection, grid, M, eps, omega)
    dc = derived_constants(M, eps, omega, 1.0, 2.0, 1.0, 2.0)
    p_env, q_env = dc.envelopes()
    ss = collect_samples(ex.family, ex.projection, grid)
    pm = envelope_margin(ss.p, Side.P_FORWARD, p_env.N, p_env.alpha, p_env.nu)
    qm = envelope_margin(ss.q, Side.Q_BACKWARD, q_env.N, q_env.alpha, q_env.nu)
    ok = (comp <= 1e-9 and (dc.rate1, dc.rate2, dc.weight1, dc.weight2) == (1.0, 3.0, 2.0, 2.0)
          and max(pm, qm) <= 1e-9)
    report(4, ok, f"compatibility margin {comp:.2e}; rates {dc.rate1}, {dc.rate2}; "
                  f"weights {dc.weight1}, {dc.weight2}; N1={dc.N1:.4f} N2={dc.N2:.4f}; "
                  f"envelope margins {pm:.3e}/{qm:.3e}")


def test_criterion_5_lyapunov(report):
    ex = E.build("Ex2_5")
    grid = ex.grid(t_max=10, time_points=11)
    ev = LyapunovEvaluator(ex.family, ex.projection, canonical_H(ex.projection, 2.0), grid)
    rng = np.random.default_rng(5)
    triples = []
    for _ in range(50):
        s, t = np.sort(rng.uniform(0, 10, 2))
        triples.append((float(t), float(s), rng.standard_normal(2)))
    res = check_lyapunov_inequality(ev, triples)
    l12 = check_L1_L2(ev, 1.0, 2.0, 1.0, grid, times=[0.0, 1.0, 2.5, 5.0, 10.0])
    k_est = _shared.get("K_est", 1.0)
    ok = res.passed and l12.l2_holds and l12.tightest_K <= 2 * k_est
    report(5, ok, f"max residual {res.max_residual:.3e} (all within tolerance: {res.passed}); "
                  f"L2 holds={l12.l2_holds}; tightest L1 constant {l12.tightest_K:.4f} "
                  f"<= 2*K_est={2 * k_est:.4f}")


def test_criterion_6_pipeline(report):
    ex = E.build("Ex2_5")
    grid = ex.grid(t_max=10, time_points=11)
    dc = theorem_3_4_pipeline(ex.family, ex.projection, 1.0, 2.0, 1.0, grid,
                              epsilon=1.0, times=[0.0, 1.0, 3.0])
    direct = fit_ex25()
    ok = dc.dichotomy and dc.dichotomy == direct.dichotomy
    report(6, ok, f"pipeline dichotomy={dc.dichotomy} (chain ok {dc.diagnostics['chain_ok']}, "
                  f"P margin {dc.diagnostics['p_margin']:.2e}, Q margin {dc.diagnostics['q_margin']:.2e}); "
                  f"direct fit dichotomy={direct.dichotomy}")


def test_criterion_7_polarization(report):
    ex = E.build("Ex2_5")
    grid = ex.grid(t_max=10, time_points=11)
    ev = LyapunovEvaluator(ex.family, ex.projection, canonical_H(ex.projection, 2.0), grid)
    dirs = grid.directions(2)
    worst, conds = 0.0, True
    for t in (0.0, 1.0, 5.0):
        form = polarize_W(ev, t, held_out=16)
        cc = check_form_conditions(form, ex.projection, 1.0, 2.0, 1.0, dirs)
        worst = max(worst, form.consistency_error)
        conds = conds and form.symmetric and cc.condition_3 and cc.condition_4
    ok = worst <= 1e-6 and conds
    report(7, ok, f"worst relative consistency {worst:.3e}; symmetric with conditions 3-4: {conds}")


def test_criterion_8_projection_blow_up(report):
    ex = E.build("Ex2_6", {"a": 1.0})
    ts = np.linspace(0.0, 50.0, 201)
    curve = projection_norm_curve(ex.projection, ts)
    exact = np.sqrt(1 + (ts + 1) ** 2)
    got = np.array([v for _, v in curve])
    err = float(np.max(np.abs(got - exact)))
    exceeds = bool(np.all(got > ts + 1))
    dc = certify_dichotomy(ex.family, ex.projection, ex.grid(t_max=20, time_points=41))
    ok = err <= 1e-10 and exceeds and dc.dichotomy
    report(8, ok, f"max |norm - sqrt(1+(t+1)^2)| = {err:.2e}; exceeds t+1: {exceeds}; "
                  f"norm at t=50: {got[-1]:.4f}; dichotomy={dc.dichotomy}")


def test_criterion_9_negative_control(report):
    ex = E.build("Ex2_8")
    dc = certify_dichotomy(ex.family, ex.projection, ex.grid(t_max=20, time_points=41))
    q_failed = not (dc.q_fit is not None and dc.q_fit.feasible and dc.q_witness.feasible)
    trend = check_asymptotics(ex.family, ex.projection, 0.0, [1.0, 1.0], 10.0)
    ok = not dc.dichotomy and q_failed and trend.all_decay and not trend.q_grows
    report(9, ok, f"dichotomy={dc.dichotomy}; Q witness {dc.q_witness.label}; "
                  f"all solutions decay={trend.all_decay}; Q grows={trend.q_grows}")


def test_criterion_10_oracles(report):
    rng = np.random.default_rng(10)
    worst_a = 0.0
    a_ok = True
    for _ in range(20):
        n = int(rng.integers(3, 13))
        s = np.where(rng.random(n) < 0.3, 0.0, rng.uniform(0.1, 5, n))
        tau = np.where(rng.random(n) < 0.2, 0.0, rng.uniform(0.1, 5, n))
        s[0] = 0.0
        v = np.exp(rng.uniform(0, 1) + rng.uniform(0, 2) * s - rng.uniform(0.1, 3) * tau
                   - rng.uniform(0, 2, n))
        fit = fit_envelope(make(s + tau, s, v), Side.P_FORWARD, bound_max=BOX)
        A, K, logN = brute_force(s + tau, s, v)
        res = (A[1] - A[0]) * (s.max() + tau.max())
        gap = abs(np.log(fit.N) - logN.min())
        worst_a = max(worst_a, gap / res)
        a_ok = a_ok and gap <= res + 1e-9

    b_ok, worst_b = True, 0.0
    for eid in E.IDS:
        ex = E.build(eid)
        grid = ex.grid(t_max=8, time_points=9)
        env = fit_tail_envelope(ex.family, ex.projection, grid)
        cfg = DatkoConfig(2.0, 0.5 * env.nu, 1.0)
        cfg2 = DatkoConfig(2.0, 0.5 * env.nu, 1.0, quadrature=cfg.quadrature.halved())
        for t in (0.5, 3.0):
            for x in grid.directions(2):
                a = datko_functional(ex.family, ex.projection, t, x, cfg, env)
                b = datko_functional(ex.family, ex.projection, t, x, cfg2, env)
                d = abs(a.total - b.total)
                worst_b = max(worst_b, d / max(a.error + b.error, 1e-300))
                b_ok = b_ok and d <= a.error + b.error
    for f in (np.exp, np.cos, lambda x: 1 / (1 + x * x)):
        a = integrate(f, 0.0, 3.0)
        b = integrate(f, 0.0, 3.0, panels=16)
        b_ok = b_ok and abs(a.value - b.value) <= a.error + b.error

    A = np.array([[-1.0, 2.0], [-3.0, 0.5]])
    fam = OdeFamily(lambda t: A, 2)
    worst_c = max(float(np.max(np.abs(evaluate(fam, t, s) - expm(A * (t - s)))))
                  for t, s in ((1.0, 0.0), (2.5, 0.5), (4.0, 1.0), (0.3, 0.3)))
    c_ok = worst_c <= 1e-8
    report(10, a_ok and b_ok and c_ok,
           f"(a) worst logN gap / resolution {worst_a:.3f}; (b) halving within error: {b_ok} "
           f"(worst ratio {worst_b:.3f}); (c) max |U - expm| = {worst_c:.2e}")
