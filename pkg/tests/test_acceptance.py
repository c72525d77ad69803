"""End-to-end acceptance checks, one test per criterion."""

import time

import numpy as np
import pytest

from ddfeedback.errors import StructuralError
from ddfeedback.estimation import (default_horizon, error_bound_full_rank_C, error_decomposition,
                                   estimate_G_constant_noise, estimate_G_exact, estimate_G_minnorm)
from ddfeedback.experiments import run_montecarlo_g, run_rideshare, run_tracking
from ddfeedback.feedback_opt import QuadraticCost, gain_feasibility
from ddfeedback.hankel import build_hankel, is_persistently_exciting
from ddfeedback.lti_core import (LtiSystem, random_system, simulate, solve_discrete_lyapunov,
                                 structural_indices, transfer_closed_form)
from ddfeedback.tracking_analysis import (optimizer_gap_bound, output_box,
                                          stable_optimizer_quadratic, true_optimizer_quadratic)

SUITE_SIZE = 100


def suite_system(seed):
    """Seeded plant with ``n <= 6`` and up to two inputs, outputs and disturbances."""
    rng = np.random.default_rng(seed)
    n = 1 + seed % 6
    m, p, r = rng.integers(1, 3, size=3)
    while True:
        sys = random_system(n, m, p, r, rng)
        try:
            nu, _ = structural_indices(sys)
            return sys, nu, rng
        except StructuralError:
            continue


def suite_data(seed, kind):
    """Training data: ``kind`` is ``"iid"``, ``"constant"`` or ``"none"`` for the disturbance."""
    sys, nu, rng = suite_system(seed)
    T = default_horizon(sys.n, nu, sys.m, sys.r)
    K = T + 2
    u = rng.uniform(-1, 1, size=(K, sys.m))
    if kind == "iid":
        w = rng.uniform(-1, 1, size=(K, sys.r))
    elif kind == "constant":
        w = np.tile(rng.uniform(-1, 1, size=sys.r), (K, 1))
    else:
        w = np.zeros((K, sys.r))
    return sys, nu, T, simulate(sys, rng.normal(size=sys.n), u, w, K)


def rel_fro(G_hat, G):
    return np.linalg.norm(G_hat - G) / np.linalg.norm(G)


def test_criterion_01_exact_recovery(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(SUITE_SIZE):
        sys, nu, T, tr = suite_data(seed, "iid")
        est = estimate_G_exact(tr.u[:T], tr.w[:T + 1], tr.y[:T + 1], nu, state_dim=sys.n)
        worst = max(worst, rel_fro(est.G_hat, transfer_closed_form(sys)[0]))
    elapsed = time.perf_counter() - start
    acceptance(f"worst relative error {worst:.2e} over {SUITE_SIZE} systems in {elapsed:.2f} s")
    assert worst <= 1e-6
    assert elapsed < 10.0


def test_criterion_02_constant_noise_recovery(acceptance):
    worst = 0.0
    for seed in range(SUITE_SIZE):
        sys, nu, T, tr = suite_data(seed, "constant")
        est = estimate_G_constant_noise(tr.u[:T + 1], tr.y[:T + 2], nu, state_dim=sys.n)
        worst = max(worst, rel_fro(est.G_hat, transfer_closed_form(sys)[0]))
    acceptance(f"worst relative error {worst:.2e} over {SUITE_SIZE} systems")
    assert worst <= 1e-6


def test_criterion_03_noiseless_minnorm(acceptance):
    worst = 0.0
    for seed in range(SUITE_SIZE):
        sys, nu, T, tr = suite_data(seed, "none")
        est = estimate_G_minnorm(tr.u[:T + 1], tr.y[:T + 1], nu, audit_w=tr.w, state_dim=sys.n)
        assert est.residuals["W_i_M"] == 0.0
        worst = max(worst, rel_fro(est.G_hat, transfer_closed_form(sys)[0]))
    acceptance(f"worst relative error {worst:.2e} over {SUITE_SIZE} systems")
    assert worst <= 1e-8


def full_rank_output_system(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 4
    base = random_system(n, int(rng.integers(1, 3)), n, int(rng.integers(1, 3)), rng)
    C = np.eye(n) + 0.3 * rng.normal(size=(n, n))
    return LtiSystem(base.A, base.B, C, base.D, base.E), rng


def test_criterion_04_error_decomposition(acceptance):
    worst_identity = 0.0
    for seed in range(SUITE_SIZE):
        sys, nu, T, tr = suite_data(seed, "iid")
        tr_T = simulate(sys, tr.x[0], tr.u[:T + 1], tr.w[:T + 1], T + 1)
        est = estimate_G_minnorm(tr_T.u, tr_T.y, nu)
        dec = error_decomposition(sys, est.M, tr_T, nu)
        worst_identity = max(worst_identity, dec.discrepancy)
    dominated = 0
    for seed in range(SUITE_SIZE):
        sys, rng = full_rank_output_system(seed)
        T = default_horizon(sys.n, 1, sys.m, sys.r)
        tr = simulate(sys, rng.normal(size=sys.n), rng.uniform(-1, 1, size=(T + 1, sys.m)),
                      rng.uniform(-1, 1, size=(T + 1, sys.r)), T + 1)
        est = estimate_G_minnorm(tr.u, tr.y, 1)
        res = error_bound_full_rank_C(sys, est.M, tr)
        dominated += bool(res.holds)
    acceptance(f"worst identity discrepancy {worst_identity:.2e}; "
               f"bound dominates on {dominated}/{SUITE_SIZE} single-block trials")
    assert worst_identity <= 1e-8
    assert dominated == SUITE_SIZE


def test_criterion_05_optimizer_gap(acceptance):
    u_so = stable_optimizer_quadratic([[1.0]], [1.0], [[1.0]], [[1.2]], [[0.0]], [0.0]).u_so[0]
    u_star = true_optimizer_quadratic([[1.0]], [1.0], [[1.2]], [[0.0]], [0.0])[0]
    assert abs(u_so - 1 / 2.2) <= 1e-9 and abs(u_star - 1.2 / 2.44) <= 1e-9
    rng = np.random.default_rng(5)
    worst_ratio = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 4))
        p = m + int(rng.integers(0, 2))
        G_hat = rng.normal(size=(p, m))
        while np.linalg.svd(G_hat, compute_uv=False)[-1] < 0.2:
            G_hat = rng.normal(size=(p, m))
        G = G_hat + 0.1 * rng.normal(size=(p, m))
        H = rng.normal(size=(p, 1))
        Q = np.diag(rng.uniform(0.5, 2.0, m))
        y_ref, w = rng.normal(size=p), rng.normal(size=1)
        a = stable_optimizer_quadratic(Q, y_ref, G_hat, G, H, w).u_so
        b = true_optimizer_quadratic(Q, y_ref, G, H, w)
        R = 1 + np.abs(np.concatenate([a, b])).max()
        lo, hi = output_box([G, G_hat], H @ w, -R * np.ones(m), R * np.ones(m))
        ell = QuadraticCost(Q, y_ref, y_box=(lo, hi)).lipschitz_y()
        bound = optimizer_gap_bound(ell, np.diag(Q).min(), G, G_hat)
        worst_ratio = max(worst_ratio, np.linalg.norm(a - b) / bound)
    acceptance(f"u_so = {u_so:.9f}, u* = {u_star:.9f}; largest gap/bound ratio {worst_ratio:.3f} "
               "over 50 instances")
    assert worst_ratio <= 1.0


def test_criterion_06_tracking_bound(acceptance):
    start = time.perf_counter()
    res = run_tracking({"trials": 100})
    elapsed = time.perf_counter() - start
    emp, bound = res.empirical, res.bounds.bound
    ok_bound = bool(np.all(emp <= bound * (1 + 1e-12)))
    quiet = run_tracking({"trials": 1, "noise": 0.0, "levels": [[0.0, 0.0]], "horizon": 80})
    e = quiet.empirical
    ratios = e[6:][e[5:-1] > 1e-10] / e[5:-1][e[5:-1] > 1e-10]
    rate = quiet.constants.rate
    acceptance(f"empirical/bound equal at k=0, at most {np.max(emp[1:] / bound[1:]):.3f} "
               f"over the remaining {len(emp) - 1} steps; "
               f"noiseless decay {ratios.max():.3f} vs max(beta1, beta2) + 0.05 = {rate + 0.05:.3f}; "
               f"{elapsed:.2f} s")
    assert ok_bound
    assert ratios.size > 10 and ratios.max() <= rate + 0.05
    assert elapsed < 60.0


def test_criterion_07_gain_feasibility(acceptance):
    cert = solve_discrete_lyapunov(np.array([[0.5]]), np.eye(1))
    cost = QuadraticCost([[2.0]], [0.0])
    exact = gain_feasibility(cost, np.array([[1.0]]), 0.0, 0.0, cert)
    assert exact.lower == 0.0 and exact.upper == 0.5 and exact.upper_inclusive
    assert exact.contains(0.5) and exact.contains(1e-9) and not exact.contains(0.0)
    lhat = cost.lip_grad_hat(np.array([[1.0]]))
    at_edge = gain_feasibility(cost, np.array([[1.0]]), cost.mu / lhat, 0.0, cert)
    beyond = gain_feasibility(cost, np.array([[1.0]]), 1.01 * cost.mu / lhat, 0.0, cert)
    inside = gain_feasibility(cost, np.array([[1.0]]), 0.99 * cost.mu / lhat, 0.0, cert)
    acceptance(f"exact model (0, {exact.upper}]; mismatch at mu/l_hat rejected: {not at_edge.feasible}; "
               f"just inside accepted: {inside.feasible} with lower {inside.lower:.4f}")
    assert not at_edge.feasible and not beyond.feasible
    assert inside.feasible and 0 < inside.lower < inside.upper


def test_criterion_08_fundamental_lemma(acceptance):
    rng = np.random.default_rng(8)
    worst_residual, checked = 0.0, 0
    for n in range(1, 5):
        for m in (1, 2):
            L = 3
            sys = random_system(n, m, 2, 1, rng)
            T = 4 * (m + 1) * (n + L) + 10
            u = rng.uniform(-1, 1, size=(T, m))
            assert is_persistently_exciting(u, n + L)[0]
            tr = simulate(sys, rng.normal(size=n), u, None, T)
            q = T - L + 1
            stacked = np.vstack([build_hankel(u, L, q).matrix, build_hankel(tr.x[:T], 1, q).matrix])
            assert np.linalg.matrix_rank(stacked) == L * m + n
            basis = np.vstack([build_hankel(tr.u, L, q).matrix, build_hankel(tr.y, L, q).matrix])
            fresh = simulate(sys, rng.normal(size=n), rng.normal(size=(L, m)), None, L)
            target = np.concatenate([fresh.u.ravel(), fresh.y.ravel()])
            g, *_ = np.linalg.lstsq(basis, target, rcond=None)
            worst_residual = max(worst_residual, np.linalg.norm(basis @ g - target))
            checked += 1
    acceptance(f"rank L m + n on {checked} instances; worst span residual {worst_residual:.2e}")
    assert worst_residual <= 1e-8


def test_criterion_09_ride_service(acceptance):
    start = time.perf_counter()
    res = run_rideshare({"trials": 100})
    elapsed = time.perf_counter() - start
    ad, fx = res["adaptive"], res["fixed"]
    drift = max(ad.max_mass_drift, fx.max_mass_drift)
    acceptance(f"profit {ad.profit.sum():.3f} vs {fx.profit.sum():.3f}, rides {ad.accepted.sum():.3f} "
               f"vs {fx.accepted.sum():.3f}, mass drift {drift:.1e}, {elapsed:.2f} s")
    assert ad.profit.sum() >= fx.profit.sum()
    assert ad.accepted.sum() >= fx.accepted.sum()
    assert drift <= 1e-12
    assert elapsed < 120.0


def test_criterion_10_montecarlo_trend(acceptance, tmp_path):
    rows = run_montecarlo_g(None, tmp_path / "a.csv")
    run_montecarlo_g(None, tmp_path / "b.csv")
    errors = [r.mean_G_error for r in rows]
    identical = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    acceptance("mean errors " + ", ".join(f"n={r.n}: {r.mean_G_error:.2e}" for r in rows)
               + f"; reruns identical: {identical}")
    assert [r.n for r in rows] == [2, 5, 10]
    assert all(a <= b for a, b in zip(errors, errors[1:]))
    assert identical
