"""Acceptance checks.  Each records its outcome so the terminal summary prints
one PASS/FAIL line per criterion, followed by the individual checks."""

import math
import time

import numpy as np
import pytest

from subsketch.core import RngStream, condition_number, log_abs, power, zero_indicator
from subsketch.hardinstance import (
    NoiseModel,
    build_hard_instance,
    check_invariants,
    distinguishing_experiment,
    decoder_noise_threshold,
    multiplicative_eps_for,
    recovery_experiment,
)
from subsketch.median2d import build_l1_2d_sketch, line_cost, size_constant
from subsketch.sketches import (
    STABLE_ROW_CONSTANT,
    EvenMomentSketch,
    GramSketch,
    StableSketch,
    compute_lewis_weights,
)
from subsketch.spectrum import (
    dense_kernel_matrix,
    fourier_spectrum,
    lambda0_alternating_sum,
    lambda0_integral,
)
from subsketch.tukey import (
    fit_band_polynomial,
    mixed_vector,
    mollified_tukey_eval,
    mollified_tukey_norm,
    run_tukey_pipeline,
    sampling_estimate,
)


def _check(criterion, n, passed, detail):
    criterion(n, passed, detail)
    assert passed, detail


def test_criterion_1_spectrum_equivalence(criterion):
    start = time.perf_counter()
    kernels = [power(0.5), power(1), power(1.5), power(2), power(3), zero_indicator(), log_abs()]
    worst = 0.0
    for d in (2, 4, 6, 8):
        for k in kernels:
            dense = np.sort(np.linalg.eigvalsh(dense_kernel_matrix(k, d)))
            fast = np.sort(fourier_spectrum(k, d).eigenvalues())
            scale = max(np.abs(dense).max(), 1e-300)
            worst = max(worst, float(np.max(np.abs(dense - fast)) / scale))
    elapsed = time.perf_counter() - start
    _check(criterion, 1, worst <= 1e-8 and elapsed < 30, f"max relative deviation {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_lambda0_three_routes(criterion):
    start = time.perf_counter()
    worst = 0.0
    for d in (8, 16):
        for p in (0.5, 1.0, 1.5, 2.5):
            alt = float(lambda0_alternating_sum(power(p), d))
            wht = float(fourier_spectrum(power(p), d, method="wht").by_weight[d // 2])
            integral = lambda0_integral(p, d)
            worst = max(worst, abs(wht - alt) / abs(alt), abs(integral - alt) / abs(alt))
    elapsed = time.perf_counter() - start
    _check(criterion, 2, worst <= 1e-6 and elapsed < 10, f"max relative disagreement {worst:.2e}, {elapsed:.2f}s")


def test_criterion_3_even_p_dichotomy(criterion):
    vanish = all(lambda0_alternating_sum(power(2), d) == 0 for d in range(6, 25, 2))
    g = np.random.default_rng(3)
    worst = 0.0
    sizes = {}
    for case in range(1000):
        p = (2, 4, 6)[case % 3]
        d = int(g.integers(2, 5))
        A = g.standard_normal((int(g.integers(5, 60)), d))
        sk = GramSketch(A) if p == 2 and case % 2 else EvenMomentSketch(A, p)
        x = g.standard_normal(d)
        exact = np.sum(np.abs(A @ x) ** p)
        worst = max(worst, abs(sk.query(x) - exact) / exact)
        sizes.setdefault((type(sk).__name__, p, d), set()).add(sk.size_bits())
    fixed = all(len(s) == 1 for s in sizes.values())
    # the approximate sketch, by contrast, pays for smaller eps
    A = g.standard_normal((50, 3))
    growth = [StableSketch(A, 1.5, e, 0).size_bits() for e in (0.4, 0.2, 0.1)]
    ok = vanish and worst <= 1e-9 and fixed and growth[0] < growth[1] < growth[2]
    _check(
        criterion,
        3,
        ok,
        f"p=2 lambda0 exactly 0 for even d in [6, 24]: {vanish}; worst relative error {worst:.2e} over 1000 cases; "
        f"exact sizes depend only on (d, p): {fixed}; stable sizes at eps 0.4/0.2/0.1: {growth}",
    )


@pytest.mark.parametrize("d", [10, 12])
@pytest.mark.parametrize("p", [1.0, 1.5])
def test_criterion_4_recovery_threshold(criterion, d, p):
    start = time.perf_counter()
    try:
        add = recovery_experiment(d, p, NoiseModel("additive", decoder_noise_threshold(d, p)), 200, RngStream(d, f"c4-add-{p}"))
        eps = multiplicative_eps_for(d, p, 100.0)
        mul = recovery_experiment(d, p, NoiseModel("multiplicative", eps), 200, RngStream(d, f"c4-mul-{p}"))
    except ValueError as exc:
        _check(criterion, 4, False, f"d={d} p={p}: cannot build an instance ({exc})")
    elapsed = time.perf_counter() - start
    a, m = add["per_bit_success_rate"], mul["per_bit_success_rate"]
    ok = a >= 0.8 and abs(m - 0.5) <= 0.1 and elapsed < 300
    _check(
        criterion,
        4,
        ok,
        f"d={d} p={p}: additive rate {a:.3f} over 200 trials x {add['bits_per_trial']} bits; "
        f"100x multiplicative (eps={eps:.3g}) rate {m:.3f}; {elapsed:.1f}s",
    )


@pytest.mark.parametrize("d", [10, 12])
def test_criterion_5_instance_invariants(criterion, d):
    results = []
    for p in (1.0, 1.5):
        try:
            inst = build_hard_instance(d, p, RngStream(d, f"c5-{p}"))
        except ValueError as exc:
            _check(criterion, 5, False, f"d={d} p={p}: cannot build an instance ({exc})")
        inv = check_invariants(inst, all_queries=True)
        kappa = condition_number(inst.A)
        results.append((p, inv, kappa))
    ok = all(all(inv.values()) and kappa <= 10 for _, inv, _ in results)
    detail = "; ".join(
        f"d={d} p={p}: " + ", ".join(f"{k}={'ok' if v else 'violated'}" for k, v in inv.items()) + f", kappa={kappa:.6f}"
        for p, inv, kappa in results
    )
    _check(criterion, 5, ok, detail + f" (all {2**d} queries)")


def test_criterion_6_distinguishing(criterion):
    start = time.perf_counter()
    seps = [distinguishing_experiment(64, 2.0, None, RngStream(t, "c6")) for t in range(50)]
    elapsed = time.perf_counter() - start
    hits = sum(bool(s) for s in seps)
    rows = sorted({s.rows for s in seps})
    gap = min(s.gap for s in seps)
    _check(
        criterion,
        6,
        hits == 50 and elapsed < 60,
        f"{hits}/50 separated at d=64 p=2, R in {rows}, smallest gap d/(R coh^p)^(1/p) = {gap:.3f}, {elapsed:.1f}s",
    )


def test_criterion_7_stable_coverage(criterion):
    g = np.random.default_rng(7)
    A = g.standard_normal((200, 5))
    hits = 0
    for t in range(500):
        sk = StableSketch(A, 1.0, 0.2, RngStream(t, "c7"))
        x = g.standard_normal(5)
        exact = np.sum(np.abs(A @ x))
        hits += abs(sk.query(x) - exact) <= 0.2 * exact
    rate = hits / 500
    _check(criterion, 7, rate >= 0.85, f"coverage {rate:.3f} with r = ceil({STABLE_ROW_CONSTANT:g}/eps^2) = {sk.rows} rows")


def test_criterion_8_lewis_weights(criterion):
    g = np.random.default_rng(8)
    worst_res = worst_sum = worst_lev = 0.0
    for _ in range(20):
        n, d = int(g.integers(20, 200)), int(g.integers(2, 9))
        A = g.standard_normal((n, d)) * g.exponential(1.0, n)[:, None]
        for p in (1.0, 1.5, 2.0, 3.0):
            lw = compute_lewis_weights(A, p)
            W = lw.w ** (1 - 2 / p)
            G = np.linalg.inv(A.T @ (A * W[:, None]))
            again = np.einsum("ij,jk,ik->i", A, G, A) ** (p / 2)
            worst_res = max(worst_res, float(np.max(np.abs(again - lw.w))))
            worst_sum = max(worst_sum, abs(lw.w.sum() - d))
            if p == 2.0:
                Q, _ = np.linalg.qr(A)
                worst_lev = max(worst_lev, float(np.max(np.abs(lw.w - np.sum(Q**2, axis=1)))))
    ok = worst_res <= 1e-8 and worst_sum <= 1e-6 and worst_lev <= 1e-8
    _check(
        criterion,
        8,
        ok,
        f"residual {worst_res:.1e}, |sum w - d| {worst_sum:.1e}, p=2 vs leverage {worst_lev:.1e} (20 matrices x 4 p)",
    )


def test_criterion_9_tukey(criterion):
    start = time.perf_counter()
    tau, eps = 1.0, 0.1
    lo = np.linspace(0, 0.75 * tau, 1001)
    hi = np.linspace(1.25 * tau, 20 * tau, 1001)
    flat = np.array_equal(mollified_tukey_eval(lo, tau), lo) and np.all(mollified_tukey_eval(hi, tau) == tau)
    bp = fit_band_polynomial(tau, 3 / 16, 5.0, 0.05)
    x = mixed_vector(100_000, tau, 1000, RngStream(9, "c9-vector"))
    runs = [run_tukey_pipeline(x, tau, eps, RngStream(t, "c9")) for t in range(100)]
    rate = np.mean([r.rel_err <= 3 * eps for r in runs])
    exact = mollified_tukey_norm(x, tau)
    draws = [sampling_estimate(x, tau, eps, RngStream(t, "c9-var")) for t in range(500)]
    Z = np.array([z for z, _, _ in draws])
    K = Z.var(ddof=1) / (eps**2 * exact**2)
    K_mass = max(mollified_tukey_norm(x[L], tau) for _, _, L in draws) * eps**2 / tau
    elapsed = time.perf_counter() - start
    ok = flat and bp.rel_error <= 0.05 and rate >= 0.8 and K <= 1.5 and K_mass <= 2 and elapsed < 300
    _check(
        criterion,
        9,
        ok,
        f"flat regions exact: {flat}; band degree {bp.degree} certified to {bp.rel_error:.4f}; "
        f"{rate:.2f} of 100 runs within 3 eps (median rel err {np.median([r.rel_err for r in runs]):.3f}); "
        f"Var(Z) = {K:.3f} eps^2 F^2; sampled mass <= {K_mass:.3f} tau/eps^2; {elapsed:.1f}s",
    )


@pytest.mark.parametrize("eps", [0.05, 0.1])
def test_criterion_10_l1_2d(criterion, eps):
    n = 10_000
    g = np.random.default_rng(10)
    A = g.standard_normal((n, 2))
    sk = build_l1_2d_sketch(A, eps)
    worst = 0.0
    for M, cs in ((A[A[:, 0] > 0], sk.plus), (A[A[:, 0] < 0], sk.minus)):
        pts, w = -M[:, 1] / M[:, 0], np.abs(M[:, 0])
        span = pts.max() - pts.min()
        C = np.linspace(pts.min() - span, pts.max() + span, 1000)
        worst = max(worst, float(np.max(np.abs(cs.cost(C) / line_cost(pts, w, C) - 1))))
    theta = np.linspace(0, math.pi, 1000, endpoint=False)
    X = np.column_stack([np.cos(theta), np.sin(theta)])
    est = np.array([sk.query(x) for x in X])
    worst_dir = float(np.max(np.abs(est / np.abs(A @ X.T).sum(0) - 1)))
    K = size_constant(max(sk.plus.size, sk.minus.size), n, eps)
    ok = worst <= eps and worst_dir <= eps and K <= 2.0
    _check(
        criterion,
        10,
        ok,
        f"eps={eps}: center-grid error {worst:.2e}, direction error {worst_dir:.2e}, "
        f"sizes {sk.plus.size}/{sk.minus.size}, K = size eps / ln(n)^2 = {K:.3f}",
    )
