import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergodic_rvi.ctmc_rvi import (
    ctmc_hjb_residual, ctmc_rvi_rhs, ctmc_vi_rhs, euler_dt_limit, exact_ctmc, integrate,
    rvi_vi_offsets, solve_ctmc, solve_ctmc_batch,
)
from ergodic_rvi.discrete_rvi import ReducibleChainError
from ergodic_rvi.model import CtmcModel, build_c1, random_ctmc

# C1: pi = (2/3, 1/3) from 1*pi0 = 2*pi1, so beta = 2/3; V = (1/3, 0) solves Q V = beta - r
C1_VSTAR = np.array([1.0 / 3.0, 0.0])
C1_BETA = 2.0 / 3.0


@pytest.fixture
def c1():
    return build_c1()


def test_rvi_rhs_examples(c1):
    np.testing.assert_array_equal(ctmc_rvi_rhs(c1, [0.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(ctmc_rvi_rhs(c1, [1.0, 2.0 / 3.0]), [0.0, 0.0], atol=1e-15)


def test_rvi_rhs_shift(c1):
    h = np.array([0.3, -1.2])
    np.testing.assert_allclose(ctmc_rvi_rhs(c1, h + 5.0), ctmc_rvi_rhs(c1, h) - 5.0, atol=1e-14)


def test_vi_rhs_examples(c1):
    np.testing.assert_allclose(ctmc_vi_rhs(c1, C1_VSTAR, C1_BETA), [0.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(ctmc_vi_rhs(c1, [0.0, 0.0], 0.0), [1.0, 0.0])
    h = np.array([0.7, 0.1])
    np.testing.assert_allclose(ctmc_vi_rhs(c1, h, 0.4 + 0.25), ctmc_vi_rhs(c1, h, 0.4) - 0.25)


def test_integrate_one_euler_step():
    f = np.array([1.0, -2.0, 0.5])
    trace = integrate(lambda h: f, np.zeros(3), dt=0.1, T=0.1, method="euler")
    np.testing.assert_allclose(trace.values[-1], 0.1 * f)
    assert len(trace) == 2


def test_integrate_rejects_bad_step():
    with pytest.raises(ValueError):
        integrate(lambda h: h, np.zeros(2), dt=0.0, T=1.0)
    with pytest.raises(ValueError):
        integrate(lambda h: h, np.zeros(2), dt=0.5, T=0.1)


def test_integrate_divergence():
    trace = integrate(lambda h: h * np.array([1.0, -1.0]), np.ones(2), dt=0.1, T=1000.0,
                      blowup=1e6)
    assert trace.status == "diverged"


def test_c1_rk4_reaches_equilibrium(c1):
    trace, report = solve_ctmc(c1, dt=0.01, T=50.0, method="rk4")
    np.testing.assert_allclose(trace.values[-1], [1.0, 2.0 / 3.0], atol=1e-6)
    assert report.terminal_beta == pytest.approx(C1_BETA, abs=1e-6)
    assert np.all(np.diff(trace.times) > 0)


def test_euler_is_first_order(c1):
    # compare at a finite horizon where the transient still matters
    ref = solve_ctmc(c1, dt=1e-3, T=2.0, method="rk4", record_every=1000)[0].values[-1]
    errs = [np.max(np.abs(solve_ctmc(c1, dt=dt, T=2.0, method="euler",
                                     record_every=1000)[0].values[-1] - ref))
            for dt in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_hjb_residual_examples(c1):
    assert ctmc_hjb_residual(c1, C1_VSTAR, C1_BETA) <= 1e-15
    assert ctmc_hjb_residual(c1, [0.0, 0.0], 0.0) == 1.0
    v = np.array([0.2, -0.9])
    assert ctmc_hjb_residual(c1, v + 3.0, 0.1) == pytest.approx(ctmc_hjb_residual(c1, v, 0.1),
                                                                abs=1e-14)


def test_exact_ctmc_c1(c1):
    sol = exact_ctmc(c1)
    assert sol.beta == pytest.approx(C1_BETA, abs=1e-15)
    np.testing.assert_allclose(sol.value.values, C1_VSTAR, atol=1e-15)


def test_exact_ctmc_constant_cost():
    base = random_ctmc(np.random.default_rng(2), 4, 2)
    flat = CtmcModel(4, base.actions, base.rates, [np.full(2, 3.5)] * 4)
    sol = exact_ctmc(flat)
    assert sol.beta == pytest.approx(3.5, abs=1e-12)
    np.testing.assert_allclose(sol.value.values, 0.0, atol=1e-12)


def test_exact_ctmc_reports_reducible_policy():
    # action b in state 0 has no exits, which makes state 0 absorbing
    model = CtmcModel(2, [["a", "b"], ["a"]], [[[-1.0, 1.0], [0.0, 0.0]], [[1.0, -1.0]]],
                      [[1.0, 0.0], [1.0]])
    with pytest.raises(ReducibleChainError):
        exact_ctmc(model)


def test_random_model_rvi_matches_oracle():
    model = random_ctmc(np.random.default_rng(21), 4, 2)
    sol = exact_ctmc(model)
    _, report = solve_ctmc(model, dt=0.01, T=50.0)
    assert report.terminal_beta == pytest.approx(sol.beta, abs=1e-6)


def test_equilibrium_is_value_plus_beta():
    model = random_ctmc(np.random.default_rng(4), 5, 3)
    sol = exact_ctmc(model)
    np.testing.assert_allclose(ctmc_rvi_rhs(model, sol.value.values + sol.beta), 0.0, atol=1e-12)
    np.testing.assert_allclose(ctmc_vi_rhs(model, sol.value.values, sol.beta), 0.0, atol=1e-12)


def test_euler_guard(c1):
    limit = euler_dt_limit(c1)
    assert limit == 0.5
    solve_ctmc(c1, dt=limit, T=1.0, method="euler")
    with pytest.raises(ValueError):
        solve_ctmc(c1, dt=0.6, T=1.0, method="euler")


@pytest.mark.parametrize("mode, method", [("rvi", "rk4"), ("vi", "euler")])
def test_batch_matches_single_runs(mode, method):
    rng = np.random.default_rng(31)
    models = [build_c1()] + [random_ctmc(rng, int(rng.integers(2, 6)), int(rng.integers(1, 4)))
                             for _ in range(6)]
    betas = [exact_ctmc(m).beta for m in models]
    h0s = [rng.normal(size=m.n_states) for m in models]
    dt = 0.5 * min(euler_dt_limit(m) for m in models) if method == "euler" else 0.01
    batch = solve_ctmc_batch(models, mode, betas, h0s, dt=dt, T=200 * dt, method=method,
                             record_every=20)
    for m, beta, h0, tr in zip(models, betas, h0s, batch):
        single, _ = solve_ctmc(m, mode, beta, h0, dt=dt, T=200 * dt, method=method,
                               record_every=20)
        np.testing.assert_array_equal(tr.times, single.times)
        np.testing.assert_allclose(tr.values, single.values, atol=1e-12)
        assert tr.anchor == m.anchor


def test_batch_rejects_unstable_euler_step():
    with pytest.raises(ValueError):
        solve_ctmc_batch([build_c1()], dt=0.6, T=1.0, method="euler")


def test_vi_mode_needs_beta(c1):
    with pytest.raises(ValueError):
        solve_ctmc(c1, mode="vi")


def test_vi_mode_status_and_estimate(c1):
    _, report = solve_ctmc(c1, mode="vi", beta=C1_BETA, T=30.0, tol=1e-8)
    assert report.status == "converged"
    assert report.terminal_beta == C1_BETA
    # VI settles on V* plus a constant set by the initial condition
    np.testing.assert_allclose(report.terminal_value.anchored().values, C1_VSTAR, atol=1e-6)


# -- properties ---------------------------------------------------------------------

seeds = st.integers(0, 2 ** 31)


def _euler_vi(model, h0, beta, dt, n):
    h = np.array(h0, dtype=float)
    out = [h.copy()]
    for _ in range(n):
        h = h + dt * ctmc_vi_rhs(model, h, beta)
        out.append(h.copy())
    return np.array(out)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_euler_vi_semiflow_is_monotone(seed):
    rng = np.random.default_rng(seed)
    model = random_ctmc(rng, 4, 2)
    dt = euler_dt_limit(model)
    beta = exact_ctmc(model).beta
    g = rng.normal(size=4) * 3
    g2 = g + rng.uniform(0, 2, size=4)
    a, b = _euler_vi(model, g, beta, dt, 200), _euler_vi(model, g2, beta, dt, 200)
    assert np.all(a <= b + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_euler_vi_is_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    model = random_ctmc(rng, 4, 2)
    dt = 0.5 * euler_dt_limit(model)
    g, g2 = rng.normal(size=4) * 3, rng.normal(size=4) * 3
    a, b = _euler_vi(model, g, 1.0, dt, 100), _euler_vi(model, g2, 1.0, dt, 100)
    gap = np.max(np.abs(a - b), axis=1)
    assert np.all(gap <= gap[0] + 1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_exact_rvi_vi_identity(seed):
    rng = np.random.default_rng(seed)
    model = random_ctmc(rng, 4, 2)
    beta = exact_ctmc(model).beta
    h0 = rng.normal(size=4)
    dt = 0.5 * euler_dt_limit(model)
    rvi, _ = solve_ctmc(model, "rvi", h0=h0, dt=dt, T=300 * dt, method="euler", record_every=1)
    vi, _ = solve_ctmc(model, "vi", beta=beta, h0=h0, dt=dt, T=300 * dt, method="euler",
                       record_every=1)
    c = rvi_vi_offsets(vi.beta, beta, dt)
    np.testing.assert_allclose(rvi.values, vi.values + c[:, None], atol=1e-9)


def test_anchor_reading_tends_to_beta():
    model = random_ctmc(np.random.default_rng(8), 3, 3)
    sol = exact_ctmc(model)
    trace, _ = solve_ctmc(model, dt=0.01, T=50.0)
    err = np.abs(trace.beta - sol.beta)
    assert err[-1] < 1e-8
    assert err[-1] < err[len(err) // 4]
