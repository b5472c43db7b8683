import logging

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.integrate import quad

from drmvp import market_sim as ms
from drmvp import realized_vol as rv

QUIET = ms.SimConfig(p=2, jump_intensity=0.0, noise_scale=0.0)
NOISY = ms.SimConfig(p=2, jump_intensity=0.0, noise_scale=0.01)


def constant_day(sigma, m, seed, config=NOISY):
    """Ticks for one day with a constant spot matrix."""
    sigma = np.atleast_2d(sigma)
    spot = np.broadcast_to(sigma, (m,) + sigma.shape).copy()
    times, prices, _ = ms.emit_ticks(spot, np.zeros(sigma.shape[0]), config,
                                     np.random.default_rng(seed), spot_open=sigma)
    return times, prices


sorted_times = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40, unique=True).map(
    lambda x: np.array(sorted(x)))


# ---------------------------------------------------------------- refresh

def test_refresh_hand_trace():
    tau, yi, yj = rv.pairwise_refresh([1, 3, 5], [10, 30, 50], [2, 3, 6], [20, 30, 60])
    assert tau.tolist() == [2, 3, 6]
    assert yi.tolist() == [10, 30, 50]
    assert yj.tolist() == [20, 30, 60]


def test_refresh_identical_grids():
    t = np.linspace(0, 1, 11)
    tau, _, _ = rv.pairwise_refresh(t, t, t, -t)
    assert np.array_equal(tau, t)


def test_refresh_single_observation():
    tau, _, _ = rv.pairwise_refresh([0.0], [1.0], [0.0, 0.5, 1.0], [1.0, 2.0, 3.0])
    assert tau.tolist() == [0.0]


def test_refresh_empty():
    tau, yi, yj = rv.pairwise_refresh([], [], [0.1], [1.0])
    assert tau.size == yi.size == yj.size == 0


@given(sorted_times, sorted_times)
def test_refresh_properties(ti, tj):
    tau, yi, yj = rv.pairwise_refresh(ti, ti * 10, tj, tj * 10)
    assert np.all(np.diff(tau) > 0)
    # prices are the last ticks at or before each refresh time
    assert np.all(yi <= tau * 10 + 1e-12) and np.all(yj <= tau * 10 + 1e-12)
    for a, b in zip(tau[:-1], tau[1:]):
        assert np.any((ti > a) & (ti <= b))
        assert np.any((tj > a) & (tj <= b))


# ----------------------------------------------------------------- entries

def test_phi_matches_weight_integral():
    val, _ = quad(lambda x: float(rv.tent(x)) ** 2, 0, 1, points=[0.5])
    assert rv.PreAvgConfig().phi == pytest.approx(val, abs=1e-6)
    with pytest.raises(ValueError):
        rv.PreAvgConfig(phi=0.1)


def test_window_rule():
    assert rv.PreAvgConfig().window(23400) == 152
    assert rv.PreAvgConfig().window(390) == 19


def test_constant_prices_give_zero():
    assert rv.jprvm_entry(np.full(500, 4.2), np.full(500, -1.0)) == 0.0


def test_short_series_withheld():
    # 9 increments, window 3 needs at least 6: fine; 3 increments is too short
    assert rv.jprvm_entry(np.arange(10.0), np.arange(10.0)) is not None
    assert rv.jprvm_entry(np.arange(4.0), np.arange(4.0)) is None


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.booleans())
def test_entry_symmetric(seed, robust):
    r = np.random.default_rng(seed)
    x, y = np.cumsum(r.standard_normal((2, 400)) * 0.01, axis=1)
    c = rv.PreAvgConfig(jump_robust=robust)
    assert rv.jprvm_entry(x, y, c) == rv.jprvm_entry(y, x, c)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_entry_scales_quadratically(seed, c):
    r = np.random.default_rng(seed)
    x, y = np.cumsum(r.standard_normal((2, 400)) * 0.01, axis=1)
    base = rv.jprvm_entry(x, y)
    assume(abs(base) > 1e-8)
    assert rv.jprvm_entry(c * x, c * y) == pytest.approx(c**2 * base, rel=1e-9)


@pytest.mark.slow
def test_single_asset_oracle():
    sigma2, m, reps = 4e-4, 23400, 200
    est = []
    for k in range(reps):
        _, prices = constant_day(sigma2, m, k, QUIET)
        est.append(rv.jprvm_entry(prices[0], prices[0]))
    est = np.array(est)
    se = est.std(ddof=1) / np.sqrt(reps)
    assert abs(est.mean() - sigma2) < 4 * se


def test_truncation_effectiveness():
    sigma = np.array([[4e-4, 1e-4], [1e-4, 3e-4]])
    m, wins = 2340, 0
    robust, plain = rv.PreAvgConfig(), rv.PreAvgConfig(jump_robust=False)
    for d in range(100):
        _, prices = constant_day(sigma, m, 1000 + d)
        jumped = prices[0].copy()
        jumped[m // 2:] += 0.05
        changes = [abs(rv.jprvm_entry(jumped, prices[1], c) - rv.jprvm_entry(prices[0], prices[1], c))
                   for c in (robust, plain)]
        wins += changes[0] < changes[1]
    assert wins >= 95


# ---------------------------------------------------------------- assembly

def test_assemble_two_by_two():
    rc = rv.assemble_matrix({(0, 0): 1.0, (1, 1): 2.0, (0, 1): 0.5}, 2)
    np.testing.assert_array_equal(rc.matrix, [[1.0, 0.5], [0.5, 2.0]])
    assert rc.flagged == 0


def test_assemble_flags_missing_offdiagonal(caplog):
    with caplog.at_level(logging.WARNING):
        rc = rv.assemble_matrix({(0, 0): 1.0, (1, 1): 2.0, (0, 1): None}, 2)
    assert rc.flagged == 1
    assert rc.matrix[0, 1] == 0.0
    assert "flagged" in caplog.text


def test_assemble_missing_diagonal_is_fatal():
    with pytest.raises(ValueError):
        rv.assemble_matrix({(0, 0): None, (1, 1): 2.0, (0, 1): 0.1}, 2)


@pytest.mark.slow
def test_assembled_matrix_close_to_truth():
    cfg = ms.SimConfig(p=10, days=23, steps_per_day=23400, seed=4, burn_in=0)
    coeffs = ms.build_coefficients(cfg)
    state, hist = ms.initial_state(coeffs, cfg)
    state, rec = ms.evolve_day(state, coeffs, hist, ms.day_rng(cfg.seed, 0, 0), cfg)
    times, prices, _ = ms.emit_ticks(rec.spot, state.x, cfg, ms.day_rng(cfg.seed, 0, 1),
                                     spot_open=rec.spot_open, spot_eig=rec.spot_eig)
    rc = rv.estimate_day(times, prices)
    assert np.allclose(rc.matrix, rc.matrix.T)
    assert np.max(np.abs(rc.matrix - rec.gamma)) < 0.05


# -------------------------------------------------------------------- POET

def test_poet_cuts_everything_with_large_threshold():
    r = np.random.default_rng(0)
    a = r.standard_normal((4, 4))
    raw = rv.RealizedCov(0, a @ a.T + np.eye(4), np.ones((4, 4), int))
    # threshold sqrt(log 4) + 1/2 > 1 exceeds every correlation
    out = rv.poet_regularize(raw, n_factors=0, n_samples=1)
    assert out.threshold > 1
    np.testing.assert_allclose(out.matrix, np.diag(np.diag(raw.matrix)), rtol=1e-12)


def test_distinct_sectors_give_diagonal_residual():
    r = np.random.default_rng(1)
    a = r.standard_normal((5, 5))
    raw = rv.RealizedCov(0, a @ a.T + np.eye(5), np.ones((5, 5), int))
    out = rv.poet_regularize(raw, n_factors=0, sector_labels=list("abcde"))
    np.testing.assert_allclose(out.matrix, np.diag(np.diag(raw.matrix)), rtol=1e-12)


def test_poet_argument_checks():
    raw = rv.RealizedCov(0, np.eye(3), np.ones((3, 3), int))
    with pytest.raises(ValueError):
        rv.poet_regularize(raw, n_factors=3)
    with pytest.raises(ValueError):
        rv.poet_regularize(raw, n_factors=1, sector_labels=["a", "b"])


@settings(max_examples=40)
@given(st.integers(3, 8), st.integers(0, 10_000), st.integers(0, 2))
def test_poet_output_pd(p, seed, k):
    r = np.random.default_rng(seed)
    # indefinite input, as pairwise assembly can produce
    a = r.standard_normal((p, p))
    raw = rv.RealizedCov(0, (a + a.T) / 2, np.full((p, p), 100))
    out = rv.poet_regularize(raw, n_factors=k)
    np.testing.assert_allclose(out.matrix, out.matrix.T)
    assert np.linalg.eigvalsh(out.matrix)[0] > 0


@pytest.mark.slow
def test_poet_beats_raw_on_factor_truth():
    # three sector factors with strong loadings plus diagonal idiosyncratic risk
    p, m = 20, 390
    r = np.random.default_rng(0)
    sector = np.repeat(np.arange(3), [7, 7, 6])
    load = np.zeros((p, 3))
    load[np.arange(p), sector] = r.uniform(0.5, 1.5, p) * 0.04
    truth = load @ load.T + np.diag(r.uniform(0.5, 1.5, p) * 1e-4)
    wins = 0
    for d in range(50):
        times, prices = constant_day(truth, m, d)
        raw = rv.estimate_day(times, prices)
        reg = rv.poet_regularize(raw, 3)
        wins += np.linalg.norm(reg.matrix - truth) < np.linalg.norm(raw.matrix - truth)
    assert wins >= 45


def test_pd_repair_floor():
    out = rv.pd_repair(np.diag([1.0, -1.0, 2.0]))
    assert np.linalg.eigvalsh(out)[0] == pytest.approx(1e-8 * 2.0 / 3.0)


def test_estimate_panel_shapes():
    out = ms.simulate(ms.SimConfig(p=3, days=24, steps_per_day=100, burn_in=0))
    panel = rv.estimate_panel(out.ticks, n_factors=1)
    assert len(panel) == 24
    assert all(rc.regularized and rc.matrix.shape == (3, 3) for rc in panel)
