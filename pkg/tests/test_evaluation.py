import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from drmvp import evaluation as ev

seeds = st.integers(0, 2**31 - 1)


def random_returns(seed, days=8, p=3):
    r = np.random.default_rng(seed)
    return 1e-3 * r.standard_normal((days, ev.N_INTERVALS, p))


def random_weights(seed, days=8, p=3):
    w = np.random.default_rng(seed).uniform(0.1, 1.0, (days, p))
    return w / w.sum(axis=1, keepdims=True)


# ------------------------------------------------------------ return grid

def test_grid_prices_last_tick():
    t = np.array([0.0, 0.3, 0.5, 1.0])
    y = np.array([1.0, 2.0, 3.0, 4.0])
    out = ev.grid_prices(t, y, n_intervals=4)
    np.testing.assert_array_equal(out, [1.0, 1.0, 3.0, 3.0, 4.0])


def test_grid_prices_before_first_tick():
    out = ev.grid_prices([0.6, 1.0], [5.0, 6.0], n_intervals=2)
    np.testing.assert_array_equal(out, [5.0, 5.0, 6.0])


# ------------------------------------------------------------------- risk

def test_annualized_risk_constant_returns():
    c, days = 2e-3, 5
    returns = np.zeros((days, ev.N_INTERVALS, 2))
    returns[..., 0] = c
    w = np.tile([1.0, 0.0], (days, 1))
    assert ev.annualized_risk(w, returns) == pytest.approx(100 * np.sqrt(252 * 39 * c**2))


@given(seeds)
def test_annualized_risk_homogeneous(seed):
    r, w = random_returns(seed), random_weights(seed)
    assert ev.annualized_risk(w, 2 * r) == pytest.approx(2 * ev.annualized_risk(w, r), rel=1e-12)


def test_annualized_risk_zero():
    assert ev.annualized_risk(random_weights(0), np.zeros((8, 39, 3))) == 0.0


@given(seeds)
def test_annualized_risk_permutation_invariant(seed):
    r, w = random_returns(seed), random_weights(seed)
    perm = np.random.default_rng(seed).permutation(r.shape[0])
    assert ev.annualized_risk(w[perm], r[perm]) == pytest.approx(ev.annualized_risk(w, r), rel=1e-12)


@given(seeds)
def test_relative_risk_of_self_is_one(seed):
    w = random_weights(seed)
    rel, ok = ev.relative_risk(w, w, random_returns(seed))
    assert rel == 1.0
    assert ok.all()


def test_relative_risk_skips_zero_days():
    r = random_returns(1)
    r[2] = 0.0
    w = random_weights(1)
    rel, ok = ev.relative_risk(2 * w, w, r)
    assert not ok[2] and ok.sum() == 7
    assert rel == pytest.approx(4.0)


# ------------------------------------------------------------------ ranks

def test_ranks_strictly_worse_model():
    stats = ev.rank_models([[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]])
    np.testing.assert_array_equal(stats.mean_rank, [1.0, 2.0])
    np.testing.assert_array_equal(stats.first_place, [3, 0])


def test_ranks_tie_average():
    stats = ev.rank_models([[1.0], [1.0], [2.0]])
    np.testing.assert_array_equal(stats.ranks[:, 0], [1.5, 1.5, 3.0])


@given(seeds, st.integers(2, 5))
def test_rank_sums(seed, m):
    r = np.random.default_rng(seed).integers(0, 3, (m, 10)).astype(float)
    stats = ev.rank_models(r)
    np.testing.assert_allclose(stats.ranks.sum(axis=0), m * (m + 1) / 2)


def test_mean_l2_self_zero():
    w = random_weights(3)
    assert ev.mean_l2(w, w) == 0.0
    assert ev.mean_l2(w, w + [3.0, 4.0, 0.0]) == pytest.approx(5.0)


# --------------------------------------------------------------------- DM

def test_dm_shift_lowers_p_with_n():
    r = np.random.default_rng(0)
    ps = []
    for n in (20, 80, 320):
        b = r.standard_normal(n)
        a = b + 0.3 + 0.5 * r.standard_normal(n)
        stat, p = ev.dm_test(a, b)
        d = a - b
        assert p == pytest.approx(norm.sf(d.mean() / (d.std() / np.sqrt(n))), rel=1e-12)
        ps.append(p)
    assert all(p < 0.5 for p in ps)
    assert ps[0] > ps[1] > ps[2]


def test_dm_zero_mean_gives_half():
    b = np.zeros(12)
    a = np.array([1.0, -1.0] * 6)
    stat, p = ev.dm_test(a, b)
    assert stat == 0.0 and p == 0.5


def test_dm_identical_series():
    a = np.arange(20.0)
    with pytest.raises(ev.DegenerateVariance):
        ev.dm_test(a, a.copy())


def test_dm_input_checks():
    with pytest.raises(ValueError):
        ev.dm_test(np.ones(5), np.zeros(5))
    with pytest.raises(ValueError):
        ev.dm_test(np.ones(12), np.zeros(11))


@settings(max_examples=30)
@given(seeds)
def test_dm_antisymmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((2, 30))
    s1, p1 = ev.dm_test(a, b)
    s2, p2 = ev.dm_test(b, a)
    assert s2 == pytest.approx(-s1, rel=1e-12)
    assert p2 == pytest.approx(1 - p1, abs=1e-12)


def test_newey_west_lag_changes_variance():
    d = np.sin(np.arange(50.0))
    assert ev.long_run_variance(d, 0) == pytest.approx(np.var(d))
    assert ev.long_run_variance(d, 3) != ev.long_run_variance(d, 0)


# ----------------------------------------------------------------- Sharpe

def test_sharpe_hand_series():
    w = np.ones((3, 1))
    assert ev.sharpe(w, np.array([[1.0], [2.0], [3.0]])) == pytest.approx(2.0)


def test_sharpe_alternating():
    assert ev.sharpe(np.ones(6), np.array([0.1, -0.1] * 3)) == pytest.approx(0.0, abs=1e-15)


def test_sharpe_constant_rejected():
    with pytest.raises(ZeroDivisionError):
        ev.sharpe(np.ones(4), np.full(4, 0.2))


def test_sharpe_risk_free():
    r = np.array([[1.0], [2.0], [3.0]])
    assert ev.sharpe(np.ones((3, 1)), r, risk_free=np.ones(3)) == pytest.approx(1.0)


# -------------------------------------------------------------------- ACF

def test_acf_iid_coverage():
    # 100 assets x 20 lags keeps the binomial sd of the coverage near 0.5%
    x = np.random.default_rng(0).standard_normal((2000, 100))
    res = ev.weight_acf(x)
    assert res.band == pytest.approx(1.96 / np.sqrt(2000))
    assert abs(res.coverage() - 0.95) <= 0.02


def test_acf_ar1():
    r = np.random.default_rng(1)
    x = np.zeros(5000)
    for t in range(1, x.size):
        x[t] = 0.7 * x[t - 1] + r.standard_normal()
    res = ev.weight_acf(x)
    assert abs(res.acf[0, 1] - 0.7) < 0.03
    assert abs(res.acf[0, 2] - 0.49) < 0.04


def test_acf_lag_zero_and_constant():
    x = np.column_stack([np.random.default_rng(2).standard_normal(50), np.ones(50)])
    res = ev.weight_acf(x, max_lag=5)
    assert res.acf.shape == (2, 6)
    assert res.acf[0, 0] == 1.0
    assert res.constant.tolist() == [False, True]
    assert np.all(np.isnan(res.acf[1]))


def test_acf_short_series():
    with pytest.raises(ValueError):
        ev.weight_acf(np.ones(21), max_lag=20)


# --------------------------------------------------------------- evaluate

def test_evaluate_is_pure_and_ordered():
    r = random_returns(4, days=15)
    expost = random_weights(4, days=15)
    preds = {"drmvp": random_weights(5, days=15), "martingale": random_weights(6, days=15),
             "expost": expost}
    close = r.sum(axis=1)
    a = ev.evaluate(preds, expost, r, close, reference="drmvp")
    b = ev.evaluate(preds, expost, r, close, reference="drmvp")
    assert [x.model for x in a] == list(preds)
    assert repr(a) == repr(b)
    assert a[2].mean_relative_risk == 1.0 and a[2].mean_l2 == 0.0
    assert set(a[0].dm_pvalues) == {"martingale", "expost"}
    assert sum(x.first_place_count for x in a) >= 15


def test_normalization_gap_zero_for_constant_draws():
    g = np.array([1.0, 2.0, 3.0])
    draws = np.tile(np.diag(g)[None], (10, 1, 1))
    assert ev.normalization_gap(draws, g) == pytest.approx(0.0, abs=1e-15)
