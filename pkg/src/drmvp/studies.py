"""Simulation studies: estimation error, prediction error, out-of-sample risk,
normalization gap and weight autocorrelation.

Every function takes plain parameters plus a seed and returns a flat dict of
results, so replications can be farmed out and aggregated in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import clime, market_sim, model, realized_vol
from .evaluation import normalization_gap, weight_acf
from .lags import LagSpec
from .market_sim import SimConfig


@dataclass(frozen=True)
class EstimationSettings:
    preavg: realized_vol.PreAvgConfig = realized_vol.PreAvgConfig()
    n_factors: int | None = 3
    n_tau: int = 100
    c_min: float = 1e-6
    c_max: float = 10.0


def estimate_inverses(ticks, n_days_window: int, settings: EstimationSettings = EstimationSettings()):
    """Realized volatility, CLIME inverse and realized weights for each day."""
    p = ticks.p
    gam, om, taus = [], [], []
    for d in range(ticks.days):
        t, y = ticks.day_slice(d)
        rc = realized_vol.estimate_day(t, y, settings.preavg, day=d)
        if settings.n_factors is not None:
            rc = realized_vol.poet_regularize(rc, settings.n_factors)
        m_day = float(np.median(rc.n_obs[np.triu_indices(p)]))
        grid = clime.tau_grid(p, n_days_window, m_day, settings.n_tau, settings.c_min, settings.c_max)
        inv = clime.invert(rc.matrix, grid, day=d)
        gam.append(rc.matrix)
        om.append(inv.omega)
        taus.append(inv.tau_used)
    om = np.array(om)
    return np.array(gam), om, om.sum(axis=2), np.array(taus)


def _matrix_l1(a):
    """Largest absolute column sum."""
    return np.max(np.sum(np.abs(a), axis=-2), axis=-1)


def estimation_errors(p: int, n_days: int, m: int, seed: int, settings=EstimationSettings(),
                      **sim_kw) -> dict:
    """Mean max- and l1-errors of the daily inverse and weight estimates."""
    cfg = SimConfig(p=p, days=n_days, steps_per_day=m, seed=seed, **sim_kw)
    out = market_sim.simulate(cfg)
    _, om, w, _ = estimate_inverses(out.ticks, n_days, settings)
    d_om = om - out.true_omega
    d_w = w - out.true_weights
    return {
        "omega_max": float(np.mean(np.max(np.abs(d_om), axis=(1, 2)))),
        "omega_l1": float(np.mean(_matrix_l1(d_om))),
        "w_max": float(np.mean(np.max(np.abs(d_w), axis=1))),
        "w_l1": float(np.mean(np.sum(np.abs(d_w), axis=1))),
    }


def prediction_errors(p: int, n_days: int, m: int, seed: int, n_paths: int = 2000,
                      spec: LagSpec = LagSpec(), lasso: model.LassoConfig = model.LassoConfig(),
                      settings=EstimationSettings(), **sim_kw) -> dict:
    """Errors of the next-day predictions after ``n_days`` observed days.

    Compares the fitted conditional mean with the true one and the predicted
    portfolio with a Monte-Carlo estimate of the conditional mean portfolio.
    """
    cfg = SimConfig(p=p, days=n_days, steps_per_day=m, seed=seed, lag_spec=spec, **sim_kw)
    out = market_sim.simulate(cfg)
    _, _, w_hat, _ = estimate_inverses(out.ticks, n_days, settings)
    fit = model.ebic_select(model.build_features(w_hat, spec), lasso)
    g_hat, wbar_hat = model.predict_g(fit, w_hat)

    coeffs = out.coeffs
    _, g_true, _ = market_sim.conditional_targets(coeffs, out.final_history, cfg)
    rng = market_sim.day_rng(seed, cfg.burn_in + n_days, 7)
    draws = market_sim.sample_day_inverses(out.final_state, coeffs, out.final_history, cfg,
                                           n_paths, rng)
    w_draw = draws.sum(axis=2)
    ewbar = (w_draw / w_draw.sum(axis=1, keepdims=True)).mean(axis=0)
    return {
        "g_max": float(np.max(np.abs(g_hat - g_true))),
        "g_l1": float(np.sum(np.abs(g_hat - g_true))),
        "wbar_l1": float(np.sum(np.abs(wbar_hat - ewbar))),
        "wbar_max": float(np.max(np.abs(wbar_hat - ewbar))),
    }


def portfolio_risks(p: int, n_days: int, m: int, seed: int, n_test: int = 20,
                    spec: LagSpec = LagSpec(), lasso: model.LassoConfig = model.LassoConfig(),
                    settings=EstimationSettings(), models=("drmvp", "har", "martingale"),
                    **sim_kw) -> dict:
    """Mean out-of-sample risk ``w' Gamma_d w`` of each model's portfolio,
    scaled by the risk of the true daily MVP."""
    cfg = SimConfig(p=p, days=n_days + n_test, steps_per_day=m, seed=seed, lag_spec=spec, **sim_kw)
    out = market_sim.simulate(cfg)
    _, _, w_hat, _ = estimate_inverses(out.ticks, n_days, settings)
    gam = out.true_gamma[n_days:]
    best = 1.0 / out.true_weights[n_days:].sum(axis=1)
    res = {}
    for name in models:
        bt = model.rolling_backtest(w_hat, spec, n_days, model=name, config=lasso)
        risk = np.einsum("dp,dpq,dq->d", bt.w_bar_hat, gam, bt.w_bar_hat)
        res[name] = float(np.mean(risk / best))
    return res


def normalization_gaps(p: int, seed: int, n_paths: int = 5000, n_days: int = 30, m: int = 390,
                       **sim_kw) -> dict:
    """Gap between the conditional mean portfolio and the normalized
    conditional mean of the weights, one step ahead of a simulated path."""
    cfg = SimConfig(p=p, days=n_days, steps_per_day=m, seed=seed, **sim_kw)
    out = market_sim.simulate(cfg, with_ticks=False, check_grid=False)
    _, g, _ = market_sim.conditional_targets(out.coeffs, out.final_history, cfg)
    rng = market_sim.day_rng(seed, cfg.burn_in + n_days, 7)
    draws = market_sim.sample_day_inverses(out.final_state, out.coeffs, out.final_history, cfg,
                                           n_paths, rng)
    return {"gap": normalization_gap(draws, g)}


def martingale_check(p: int, n_days: int, seed: int, m: int = 390, **sim_kw) -> dict:
    """Mean and standard error of ``Omega_d - E[Omega_d | past]`` over a path."""
    cfg = SimConfig(p=p, days=n_days, steps_per_day=m, seed=seed, **sim_kw)
    out = market_sim.simulate(cfg, with_ticks=False, check_grid=False)
    diff = out.true_omega - out.true_target
    return {
        "mean": diff.mean(axis=0),
        "se": diff.std(axis=0, ddof=1) / np.sqrt(n_days),
        "max_abs": float(np.max(np.abs(diff))),
    }


def weight_acf_study(p: int, n_days: int, m: int, seed: int, max_lag: int = 20,
                     estimated: bool = False, **sim_kw) -> dict:
    cfg = SimConfig(p=p, days=n_days, steps_per_day=m, seed=seed, **sim_kw)
    out = market_sim.simulate(cfg, with_ticks=estimated, check_grid=estimated)
    if estimated:
        _, _, w, _ = estimate_inverses(out.ticks, n_days)
    else:
        w = out.true_weights
    w = w / w.sum(axis=1, keepdims=True)
    res = weight_acf(w, max_lag)
    return {"acf": res.acf, "band": res.band}


def with_sim(config: SimConfig, **kw) -> SimConfig:
    return replace(config, **kw)
