import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drmvp import clime
from helpers import random_pd
from lp_oracle import vertex_optimum

seeds = st.integers(0, 2**31 - 1)


def test_diagonal_shrinks_to_boundary():
    a = clime.clime_column(np.diag([2.0, 4.0]), 0, 0.01)
    np.testing.assert_allclose(a, [0.495, 0.0], atol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_identity_exact(k):
    np.testing.assert_allclose(clime.clime_column(np.eye(3), k, 0.0), np.eye(3)[k], atol=1e-14)


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        clime.clime_column(np.eye(2), 0, -0.1)


def test_singular_input_infeasible_at_zero():
    with pytest.raises(clime.Infeasible):
        clime.clime_column(np.zeros((2, 2)), 0, 0.0)


@settings(max_examples=60)
@given(st.sampled_from([2, 3]), seeds, st.sampled_from([0.0, 0.01, 0.05]))
def test_matches_vertex_oracle(p, seed, tau):
    g = random_pd(np.random.default_rng(seed), p)
    k = seed % p
    a = clime.clime_column(g, k, tau)
    best, _ = vertex_optimum(g, k, tau)
    assert np.abs(a).sum() == pytest.approx(best, abs=1e-7)
    assert np.max(np.abs(g @ a - np.eye(p)[k])) <= tau + 1e-7


@settings(max_examples=30)
@given(st.integers(2, 6), seeds)
def test_l1_non_increasing_in_tau(p, seed):
    g = random_pd(np.random.default_rng(seed), p)
    grid = np.linspace(0.0, 0.5, 12)
    norms = [np.abs(a).sum() for a in clime.clime_path(g, grid)]
    assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))


@settings(max_examples=30)
@given(st.integers(2, 6), seeds)
def test_warm_start_equals_cold_start(p, seed):
    g = random_pd(np.random.default_rng(seed), p, cond=100.0)
    grid = np.geomspace(1e-4, 0.3, 8)
    for tau, a in zip(grid, clime.clime_path(g, grid)):
        cold = clime.clime_columns(g, tau)
        assert np.abs(a).sum() == pytest.approx(np.abs(cold).sum(), rel=1e-9, abs=1e-12)


def test_path_rejects_bad_grids():
    with pytest.raises(ValueError):
        clime.clime_path(np.eye(2), [])
    with pytest.raises(ValueError):
        clime.clime_path(np.eye(2), [0.2, 0.1])


# ------------------------------------------------------------ symmetrize

def test_symmetrize_smaller_magnitude():
    out = clime.symmetrize(np.array([[1.0, 0.3], [0.1, 1.0]]))
    assert out[0, 1] == out[1, 0] == 0.1


def test_symmetrize_keeps_symmetric():
    a = np.array([[2.0, -0.4, 0.1], [-0.4, 3.0, 0.0], [0.1, 0.0, 1.0]])
    np.testing.assert_array_equal(clime.symmetrize(a), a)


def test_symmetrize_tie_keeps_upper():
    out = clime.symmetrize(np.array([[1.0, 0.2], [-0.2, 1.0]]))
    assert out[0, 1] == out[1, 0] == 0.2


@given(seeds)
def test_symmetrize_output_symmetric(seed):
    a = np.random.default_rng(seed).standard_normal((5, 5))
    out = clime.symmetrize(a)
    np.testing.assert_array_equal(out, out.T)
    assert np.all(np.abs(np.triu(out, 1)) <= np.abs(np.triu(a, 1)) + 0.0)


# ---------------------------------------------------------------- tuning

def test_loss_of_identity():
    assert clime.likelihood_loss(np.eye(4), np.eye(4)) == pytest.approx(4.0)
    assert clime.likelihood_loss(-np.eye(2), np.eye(2)) == np.inf


@pytest.mark.parametrize("tau", [0.05, 0.2, 0.5])
def test_shrunken_identity_has_larger_loss(tau):
    p = 3
    shrunk = clime.likelihood_loss((1 - tau) * np.eye(p), np.eye(p))
    assert shrunk == pytest.approx(p * (1 - tau) - p * np.log(1 - tau))
    assert shrunk > p


def test_tuning_on_identity_picks_identity():
    inv = clime.tune_tau(np.eye(4), np.geomspace(1e-8, 0.5, 40))
    np.testing.assert_allclose(inv.omega, np.eye(4), atol=1e-7)
    assert inv.tau_used == pytest.approx(1e-8)


def test_singleton_grid():
    g = random_pd(np.random.default_rng(0), 3)
    inv = clime.tune_tau(g, [0.01])
    assert inv.tau_used == 0.01
    np.testing.assert_allclose(inv.omega, clime.symmetrize(clime.clime_columns(g, 0.01)))


@settings(max_examples=20)
@given(st.integers(2, 6), seeds)
def test_tuned_estimate_invariants(p, seed):
    g = random_pd(np.random.default_rng(seed), p)
    inv = clime.tune_tau(g, clime.tau_grid(p, 60, 390, n_points=20))
    np.testing.assert_array_equal(inv.omega, inv.omega.T)
    assert inv.feasibility_residual <= inv.tau_used + 1e-7
    assert np.linalg.eigvalsh(inv.omega)[0] > 0


def test_fallback_to_pseudo_inverse(caplog):
    inv = clime.invert(-np.eye(2), [0.0, 0.1])
    assert inv.fallback
    np.testing.assert_allclose(inv.omega, -np.eye(2))
    assert "pseudo-inverse" in caplog.text
    with pytest.raises(clime.AllInfeasible):
        clime.tune_tau(-np.eye(2), [0.0, 0.1])


def test_tau_grid_shape():
    grid = clime.tau_grid(10, 250, 23400)
    assert grid.size == 100
    assert np.all(np.diff(grid) > 0)
    assert grid[0] == pytest.approx(1e-6 * 23400**-0.25 * np.sqrt(np.log(250)))


# --------------------------------------------------------------- weights

def test_weights_identity():
    w, wn = clime.weights_from_inverse(np.eye(2))
    np.testing.assert_array_equal(w, [1.0, 1.0])
    np.testing.assert_array_equal(wn, [0.5, 0.5])


def test_weights_diagonal_inverse():
    _, wn = clime.weights_from_inverse(np.linalg.inv(np.diag([1.0, 4.0])))
    np.testing.assert_allclose(wn, [0.8, 0.2])


def test_normalize_mixed_signs():
    np.testing.assert_allclose(clime.normalize(np.array([2.0, -1.0, 1.0])), [1.0, -0.5, 0.5])


def test_degenerate_normalizer():
    with pytest.raises(clime.DegenerateNormalizer):
        clime.normalize(np.array([1.0, -1.0]))


@given(seeds, st.floats(0.1, 10.0))
def test_normalized_weights_scale_free(seed, c):
    om = random_pd(np.random.default_rng(seed), 4)
    _, a = clime.weights_from_inverse(om)
    _, b = clime.weights_from_inverse(om / c)
    np.testing.assert_allclose(a, b, rtol=1e-12)


@pytest.mark.slow
def test_error_smaller_at_finer_grid():
    from drmvp import market_sim as ms
    from drmvp.studies import _matrix_l1, estimate_inverses

    errs = {}
    for m in (2340, 23400):
        out = ms.simulate(ms.SimConfig(p=10, days=50, steps_per_day=m, seed=3))
        _, om, _, _ = estimate_inverses(out.ticks, 50)
        errs[m] = _matrix_l1(om - out.true_omega)
    assert np.mean(errs[23400] < errs[2340]) >= 0.8
