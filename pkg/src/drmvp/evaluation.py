"""Out-of-sample scoring of predicted portfolios."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

N_INTERVALS = 39
TRADING_DAYS = 252


class DegenerateVariance(ValueError):
    pass


def grid_prices(times, prices, n_intervals: int = N_INTERVALS) -> np.ndarray:
    """Last-tick prices at ``i / n_intervals``, ``i = 0..n_intervals``.

    Before the first tick the first price is used.
    """
    t = np.asarray(times, float)
    y = np.asarray(prices, float)
    grid = np.arange(n_intervals + 1) / n_intervals
    idx = np.searchsorted(t, grid + 1e-12, side="right") - 1
    return y[np.clip(idx, 0, None)]


def intraday_returns(ticks, n_intervals: int = N_INTERVALS, days=None) -> np.ndarray:
    """Equal-interval log returns, shape ``(days, n_intervals, p)``."""
    days = range(ticks.days) if days is None else days
    out = []
    for d in days:
        t, y = ticks.day_slice(d)
        out.append(np.column_stack([np.diff(grid_prices(t[i], y[i], n_intervals))
                                    for i in range(len(t))]))
    return np.array(out)


def portfolio_returns(weights, returns) -> np.ndarray:
    """``(days, intervals)`` portfolio returns for per-day weights."""
    return np.einsum("dip,dp->di", np.asarray(returns, float), np.asarray(weights, float))


def annualized_risk(weights, returns) -> float:
    """``100 * sqrt(252 / d * sum of squared intraday portfolio returns)``."""
    r = portfolio_returns(weights, returns)
    return float(100.0 * np.sqrt(TRADING_DAYS / r.shape[0] * np.sum(r**2)))


def daily_risk(weights, returns) -> np.ndarray:
    return np.sum(portfolio_returns(weights, returns) ** 2, axis=1)


def relative_risk(candidate, expost, returns) -> tuple[float, np.ndarray]:
    """Mean per-day ratio of candidate to ex-post realized risk.

    Days with zero ex-post risk are excluded; the mask of used days is returned.
    """
    num = daily_risk(candidate, returns)
    den = daily_risk(expost, returns)
    ok = den > 0
    if not np.any(ok):
        return float("nan"), ok
    return float(np.mean(num[ok] / den[ok])), ok


@dataclass
class RankStats:
    ranks: np.ndarray  # (models, days)
    mean_rank: np.ndarray
    first_place: np.ndarray


def rank_models(risks) -> RankStats:
    """Per-day average ranks of ``risks`` with shape ``(models, days)``."""
    r = np.asarray(risks, float)
    ranks = np.apply_along_axis(rankdata, 0, r)
    first = np.sum(r == r.min(axis=0, keepdims=True), axis=1)
    return RankStats(ranks, ranks.mean(axis=1), first)


def mean_l2(candidate, reference) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(candidate) - np.asarray(reference), axis=1)))


def long_run_variance(d: np.ndarray, lag: int = 0) -> float:
    """Newey-West variance with Bartlett weights (plain variance at lag 0)."""
    d = d - d.mean()
    n = d.size
    v = d @ d / n
    for k in range(1, lag + 1):
        v += 2.0 * (1.0 - k / (lag + 1)) * (d[k:] @ d[:-k]) / n
    return float(v)


def dm_test(loss_a, loss_b, one_sided: bool = True, lag: int = 0) -> tuple[float, float]:
    """Diebold-Mariano test on ``d = loss_a - loss_b``.

    The one-sided alternative is that ``b`` has the smaller expected loss;
    returns ``(statistic, p_value)``.
    """
    a, b = np.asarray(loss_a, float), np.asarray(loss_b, float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("loss series must be 1-d with equal length")
    if a.size < 10:
        raise ValueError("need at least 10 observations")
    d = a - b
    var = long_run_variance(d, lag)
    if var < 1e-300:
        raise DegenerateVariance("loss differential has zero variance")
    stat = float(d.mean() / np.sqrt(var / d.size))
    p = float(norm.sf(stat)) if one_sided else float(2.0 * norm.sf(abs(stat)))
    return stat, p


def sharpe(weights, close_returns, risk_free=None) -> float:
    """Mean over sample sd of daily portfolio excess returns."""
    w = np.asarray(weights, float)
    r = np.asarray(close_returns, float)
    er = np.sum(w * r, axis=-1) if r.ndim == 2 else w * r
    if risk_free is not None:
        er = er - np.asarray(risk_free, float)
    sd = er.std(ddof=1)
    if not sd > 0:
        raise ZeroDivisionError("excess returns have zero standard deviation")
    return float(er.mean() / sd)


@dataclass
class AcfResult:
    acf: np.ndarray  # (assets, max_lag + 1), lag 0 first
    band: float
    constant: np.ndarray  # assets whose ACF is undefined

    def coverage(self) -> float:
        """Share of (asset, lag >= 1) autocorrelations inside the band."""
        vals = self.acf[~self.constant, 1:]
        return float(np.mean(np.abs(vals) <= self.band))


def weight_acf(series, max_lag: int = 20) -> AcfResult:
    """Sample autocorrelations per column with the 5% band ``1.96/sqrt(N)``."""
    x = np.asarray(series, float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if n <= max_lag + 1:
        raise ValueError(f"need more than {max_lag + 1} observations")
    xc = x - x.mean(axis=0)
    c0 = np.sum(xc**2, axis=0)
    const = c0 <= 1e-300
    out = np.full((p, max_lag + 1), np.nan)
    for k in range(max_lag + 1):
        ck = np.sum(xc[k:] * xc[: n - k], axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[:, k] = np.where(const, np.nan, ck / c0)
    out[~const, 0] = 1.0
    return AcfResult(out, float(1.96 / np.sqrt(n)), const)


@dataclass
class MetricReport:
    model: str
    annualized_risk: float
    mean_relative_risk: float
    mean_rank: float
    first_place_count: int
    mean_l2: float
    sharpe: float = float("nan")
    dm_pvalues: dict = field(default_factory=dict)


def evaluate(predictions: dict, expost, returns, close_returns=None, risk_free=None,
             reference: str | None = None, dm_lag: int = 0) -> list[MetricReport]:
    """Score each named prediction panel against the ex-post portfolios.

    ``predictions`` maps model name to ``(days, p)`` normalized weights.  With
    ``reference`` set, DM p-values test whether it beats each other model.
    """
    names = list(predictions)
    risks = np.array([daily_risk(predictions[k], returns) for k in names])
    ranks = rank_models(risks)
    reports = []
    for m, name in enumerate(names):
        w = predictions[name]
        rel, _ = relative_risk(w, expost, returns)
        sr = float("nan")
        if close_returns is not None:
            try:
                sr = sharpe(w, close_returns, risk_free)
            except ZeroDivisionError:
                pass
        reports.append(MetricReport(name, annualized_risk(w, returns), rel,
                                    float(ranks.mean_rank[m]), int(ranks.first_place[m]),
                                    mean_l2(w, expost), sr))
    if reference is not None:
        r = names.index(reference)
        for m, name in enumerate(names):
            if m == r:
                continue
            try:
                _, pv = dm_test(risks[m], risks[r], lag=dm_lag)
            except (DegenerateVariance, ValueError):
                pv = float("nan")
            reports[r].dm_pvalues[name] = pv
    return reports


def normalization_gap(draws: np.ndarray, g: np.ndarray) -> float:
    """``|| mean of normalized row sums - g / 1'g ||_max`` over inverse draws."""
    w = draws.sum(axis=2)
    wbar = (w / w.sum(axis=1, keepdims=True)).mean(axis=0)
    return float(np.max(np.abs(wbar - g / g.sum())))
