import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergodic_rvi.model import (
    CtmcModel, DiffusionProblem, FiniteMdp, ValueField, build_c1, build_e1, build_lq_benchmark,
    build_pure_diffusion, random_ctmc, random_diffusion, random_mdp, span, validate,
)
from ergodic_rvi.pde_rvi import verify_lyapunov


def test_valid_mdp_row_gives_empty_report():
    mdp = FiniteMdp(2, [["a"], ["b"]], [[[0.5, 0.5]], [[0.5, 0.5]]], [[1.0], [0.0]])
    report = validate(mdp)
    assert report.ok and len(report) == 0


def test_row_sum_violation_is_located():
    mdp = FiniteMdp(2, [["a"], ["b"]], [[[0.5, 0.6]], [[0.5, 0.5]]], [[1.0], [0.0]])
    report = validate(mdp)
    assert not report.ok
    assert report.lines() == ["(state 0, action a): row sum 1.1 != 1"]


def test_negative_probability_and_nonfinite_cost():
    mdp = FiniteMdp(2, [["a"], ["b"]], [[[-0.5, 1.5]], [[0.5, 0.5]]], [[np.inf], [0.0]])
    msgs = " ".join(validate(mdp).lines())
    assert "non-finite cost" in msgs


def test_ctmc_zero_sum_row_is_valid():
    ctmc = CtmcModel(2, [["a"], ["a"]], [[[-1.0, 1.0]], [[1.0, -1.0]]], [[0.0], [1.0]])
    assert validate(ctmc).ok


def test_ctmc_bad_rows_reported():
    ctmc = CtmcModel(2, [["a"], ["a"]], [[[-1.0, 0.5]], [[-1.0, 1.0]]], [[0.0], [1.0]])
    lines = validate(ctmc).lines()
    assert any("rate row sum" in l for l in lines)
    assert any("negative off-diagonal" in l for l in lines)


def test_ctmc_reducible_lower_bound_graph_reported():
    # state 1 only reaches 0 under action b, so the uniform lower bound has no 1 -> 0 edge
    ctmc = CtmcModel(2, [["a"], ["a", "b"]],
                     [[[-1.0, 1.0]], [[0.0, 0.0], [1.0, -1.0]]], [[0.0], [1.0, 2.0]])
    assert any("irreducible" in l for l in validate(ctmc).lines())


def test_mdp_default_anchor_is_last_state():
    assert build_e1().anchor == 1
    assert build_c1().anchor == 1


@pytest.mark.parametrize("v, expected", [((1, 3, 2), 2.0), ((4, 4, 4), 0.0), ((-1, 4), 5.0)])
def test_span_examples(v, expected):
    assert span(v) == expected


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(-1e3, 1e3))
def test_span_shift_invariant(v, c):
    assert span(np.add(v, c)) == pytest.approx(span(v), abs=1e-9)
    assert span(v) >= 0


def test_value_field_is_immutable_and_anchored():
    f = ValueField([1.0, 2.0, 5.0], anchor=1)
    with pytest.raises(ValueError):
        f.values[0] = 3.0
    np.testing.assert_array_equal(f.anchored().values, [-1.0, 0.0, 3.0])
    np.testing.assert_array_equal(np.asarray(f), [1.0, 2.0, 5.0])


def test_lq_benchmark_grid_arithmetic():
    p = build_lq_benchmark(L=5, dx=0.05, u_max=3, du=0.1)
    assert p.n_nodes == 201
    assert p.n_actions == 61
    assert p.x[p.anchor] == 0.0
    assert p.actions[0] == -3.0 and p.actions[-1] == 3.0
    np.testing.assert_allclose(p.a, 1.0)
    assert (p.lyapunov.c0, p.lyapunov.c1, p.lyapunov.c2) == (12.0, 1.0, 9.0)
    assert validate(p).ok


def test_lq_lyapunov_point_check_at_three():
    # continuous generator of V = 1 + x^2 at x = u = 3: 2 + 2*3*3 - 2*9 = 2
    x, u = 3.0, 3.0
    lv = 2 + 2 * x * u - 2 * x ** 2
    assert lv == 2.0
    assert lv <= 12 - 1 * (1 + x ** 2)


def test_lq_constants_grid_sweep_oracle():
    # independent sweep of the continuous inequalities over the grid x actions
    x = np.linspace(-5, 5, 201)[:, None]
    u = np.linspace(-3, 3, 61)[None, :]
    drift = 2 + 2 * x * u - 2 * x ** 2
    assert np.max(drift - (12 - (1 + x ** 2))) <= 1e-12
    assert np.max((x ** 2 + u ** 2) / (1 + x ** 2)) == pytest.approx(9.0)


@pytest.mark.parametrize("args", [(0, 0.05, 3, 0.1), (5, 5, 3, 0.1), (5, 0.05, 0, 0.1),
                                  (5, 0.05, 3, 4)])
def test_lq_benchmark_rejects_bad_parameters(args):
    with pytest.raises(ValueError):
        build_lq_benchmark(*args)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([(4.0, 0.1), (2.0, 0.05), (3.0, 0.25)]),
       st.sampled_from([(1.0, 0.25), (2.0, 0.5), (3.0, 0.1)]))
def test_lq_benchmark_always_certified(grid, acts):
    p = build_lq_benchmark(grid[0], grid[1], acts[0], acts[1])
    assert validate(p).ok
    assert verify_lyapunov(p).passed


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6), st.integers(1, 4))
def test_random_constructors_are_admissible(seed, n, k):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n, k)
    ctmc = random_ctmc(rng, n, k)
    assert validate(mdp).ok, validate(mdp).lines()
    assert validate(ctmc).ok, validate(ctmc).lines()
    for rows in mdp.trans:
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)
    for rows in ctmc.rates:
        np.testing.assert_allclose(rows.sum(axis=1), 0.0, atol=1e-12)


def test_random_diffusion_is_admissible():
    rng = np.random.default_rng(3)
    for _ in range(5):
        assert validate(random_diffusion(rng)).ok


def test_diffusion_validation_catches_degenerate_sigma_and_negative_cost():
    p = build_pure_diffusion()
    sigma = np.array(p.sigma)
    sigma[3] = 0.0
    cost = np.array(p.cost)
    cost[0, 5] = -1.0
    bad = DiffusionProblem(p.half_width, p.dx, p.actions, p.drift, sigma, cost)
    lines = " ".join(validate(bad).lines())
    assert "degenerate" in lines and "negative running cost" in lines


def test_diffusion_validation_catches_cost_bound():
    p = build_lq_benchmark(L=4, dx=0.1, u_max=3, du=0.5)
    from dataclasses import replace
    from ergodic_rvi.model import Lyapunov
    tight = replace(p, lyapunov=Lyapunov(p.lyapunov.values, 12.0, 1.0, 5.0))
    assert any("c2" in l for l in validate(tight).lines())


def test_diffusion_anchor_must_be_nearest_zero():
    p = build_pure_diffusion()
    from dataclasses import replace
    assert any("anchor" in l for l in validate(replace(p, anchor=0)).lines())
