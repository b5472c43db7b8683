"""Daily realized integrated volatility from noisy, jumpy, asynchronous ticks.

Pairs of assets are synchronized by refresh times, each entry is estimated by
the jump-robust pre-averaging estimator, and the assembled matrix can be
regularized by a factor-plus-thresholding step.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.integrate import quad

log = logging.getLogger(__name__)


def tent(x):
    """Pre-averaging weight ``g(x) = min(x, 1 - x)``."""
    x = np.asarray(x, dtype=float)
    return np.minimum(x, 1.0 - x)


@dataclass(frozen=True)
class PreAvgConfig:
    """Pre-averaging settings; the window is ``floor(n ** window_power)``."""

    window_power: float = 0.5
    phi: float = 1.0 / 12.0
    trunc_const: float = 3.0
    trunc_exponent: float = 0.47
    jump_robust: bool = True

    def __post_init__(self):
        val, _ = quad(lambda x: float(tent(x)) ** 2, 0.0, 1.0, points=[0.5])
        if abs(val - self.phi) > 1e-6:
            raise ValueError(f"phi={self.phi} does not match the integral of g^2 ({val:.8f})")
        if self.trunc_const <= 0:
            raise ValueError("trunc_const must be positive")

    def window(self, n: int) -> int:
        return int(np.floor(n ** self.window_power + 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RealizedCov:
    day: int
    matrix: np.ndarray
    n_obs: np.ndarray
    regularized: bool = False
    n_factors: int | None = None
    threshold: float | None = None
    flagged: int = 0
    meta: dict = field(default_factory=dict)


def pairwise_refresh(ti, yi, tj, yj):
    """Refresh-time synchronization of two tick series.

    Returns ``(tau, yi_sync, yj_sync)`` with previous-tick prices at each
    refresh time.  Empty arrays are returned if either series is empty.
    """
    ti, tj = np.asarray(ti, float), np.asarray(tj, float)
    yi, yj = np.asarray(yi, float), np.asarray(yj, float)
    if ti.size == 0 or tj.size == 0:
        e = np.empty(0)
        return e, e.copy(), e.copy()
    if ti.shape == tj.shape and np.array_equal(ti, tj):
        return ti.copy(), yi.copy(), yj.copy()
    taus = [max(ti[0], tj[0])]
    ni, nj = ti.size, tj.size
    while True:
        a = int(np.searchsorted(ti, taus[-1], side="right"))
        b = int(np.searchsorted(tj, taus[-1], side="right"))
        if a >= ni or b >= nj:
            break
        taus.append(max(ti[a], tj[b]))
    tau = np.array(taus)
    ii = np.searchsorted(ti, tau, side="right") - 1
    jj = np.searchsorted(tj, tau, side="right") - 1
    return tau, yi[ii], yj[jj]


def _preaverage(dx: np.ndarray, w: int):
    """Averaged returns over the ``n - w + 1`` windows of length ``w``."""
    s = np.arange(1, w + 1) / w
    gw = tent(s)
    return sliding_window_view(dx, w) @ gw


def _correction_weights(w: int) -> np.ndarray:
    s = np.arange(w + 1) / w
    return np.diff(tent(s)) ** 2


def truncation_level(xbar: np.ndarray, w: int, n: int, config: PreAvgConfig) -> float:
    return config.trunc_const * (w / n) ** config.trunc_exponent * np.sqrt(np.sum(xbar**2) / w)


def jprvm_entry(xi, xj, config: PreAvgConfig = PreAvgConfig()) -> float | None:
    """Pre-averaged, bias-corrected and (optionally) truncated covariance of
    two synchronized log-price series.  Returns ``None`` when there are fewer
    than ``2w`` increments."""
    xi, xj = np.asarray(xi, float), np.asarray(xj, float)
    di, dj = np.diff(xi), np.diff(xj)
    n = di.size
    if n < 1:
        return None
    w = config.window(n)
    if w < 2 or n < 2 * w:
        return None
    bi, bj = _preaverage(di, w), _preaverage(dj, w)
    corr = sliding_window_view(di * dj, w) @ _correction_weights(w)
    terms = bi * bj - 0.5 * corr
    if config.jump_robust:
        keep = (np.abs(bi) < truncation_level(bi, w, n, config)) & (
            np.abs(bj) < truncation_level(bj, w, n, config))
        terms = np.where(keep, terms, 0.0)
    return float(np.sum(terms) / (w * config.phi))


def assemble_matrix(entries: dict, p: int, day: int = 0, n_obs=None) -> RealizedCov:
    """Symmetric matrix from ``{(i, j): value or None}`` with ``i <= j``.

    Missing off-diagonal entries become 0 with a warning; a missing diagonal
    entry is an error.
    """
    mat = np.zeros((p, p))
    flagged = 0
    for i in range(p):
        for j in range(i, p):
            v = entries.get((i, j), entries.get((j, i)))
            if v is None:
                if i == j:
                    raise ValueError(f"day {day}: variance of asset {i} could not be estimated")
                flagged += 1
                v = 0.0
            mat[i, j] = mat[j, i] = v
    if flagged:
        log.warning("day %d: %d off-diagonal entries flagged and set to 0", day, flagged)
    nobs = np.zeros((p, p), dtype=int) if n_obs is None else np.asarray(n_obs)
    return RealizedCov(day=day, matrix=mat, n_obs=nobs, flagged=flagged)


def estimate_day(times, prices, config: PreAvgConfig = PreAvgConfig(), day: int = 0) -> RealizedCov:
    """Raw pairwise estimate for one day from per-asset tick arrays."""
    p = len(times)
    entries, nobs = {}, np.zeros((p, p), dtype=int)
    for i in range(p):
        for j in range(i, p):
            if i == j:
                xi = xj = np.asarray(prices[i], float)
                n = xi.size
            else:
                tau, xi, xj = pairwise_refresh(times[i], prices[i], times[j], prices[j])
                n = tau.size
            entries[(i, j)] = jprvm_entry(xi, xj, config)
            nobs[i, j] = nobs[j, i] = max(n - 1, 0)
    return assemble_matrix(entries, p, day=day, n_obs=nobs)


def poet_threshold(p: int, n: int) -> float:
    return float(np.sqrt(np.log(p) / np.sqrt(n)) + 1.0 / np.sqrt(p))


def pd_repair(mat: np.ndarray) -> np.ndarray:
    """Clip eigenvalues from below at ``1e-8 * trace / p``.

    A non-positive trace (possible for a badly indefinite pairwise estimate)
    is replaced by the sum of absolute eigenvalues.
    """
    p = mat.shape[0]
    sym = (mat + mat.T) / 2
    ev, vec = np.linalg.eigh(sym)
    scale = np.trace(sym)
    if not scale > 0:
        scale = max(np.abs(ev).sum(), np.finfo(float).tiny)
    floor = 1e-8 * scale / p
    out = (vec * np.maximum(ev, floor)) @ vec.T
    return (out + out.T) / 2


def poet_regularize(raw: RealizedCov, n_factors: int = 3, sector_labels=None,
                    n_samples: int | None = None) -> RealizedCov:
    """Keep the top principal components and sparsify the residual.

    Without sector labels the residual is hard-thresholded on the correlation
    scale at ``sqrt(log p / sqrt(n)) + 1/sqrt(p)``; with labels, cross-sector
    residual entries are zeroed.  The result is made PD by eigenvalue clipping.
    """
    mat = (raw.matrix + raw.matrix.T) / 2
    p = mat.shape[0]
    if not 0 <= n_factors < p:
        raise ValueError(f"need 0 <= K < p, got K={n_factors}, p={p}")
    ev, vec = np.linalg.eigh(mat)
    top = np.argsort(-ev, kind="stable")[:n_factors]
    low = (vec[:, top] * ev[top]) @ vec[:, top].T
    resid = mat - low
    thr = None
    if sector_labels is not None:
        labels = np.asarray(sector_labels)
        if labels.shape != (p,):
            raise ValueError(f"expected {p} sector labels, got {labels.size}")
        mask = labels[:, None] == labels[None, :]
    else:
        if n_samples is None:
            n_samples = int(np.median(np.diag(raw.n_obs))) if np.any(raw.n_obs) else 1
        thr = poet_threshold(p, max(int(n_samples), 1))
        d = np.sqrt(np.clip(np.diag(resid), 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.abs(resid) / np.outer(d, d)
        mask = np.nan_to_num(corr, nan=0.0) >= thr
    np.fill_diagonal(mask, True)
    out = pd_repair(low + np.where(mask, resid, 0.0))
    return RealizedCov(day=raw.day, matrix=out, n_obs=raw.n_obs, regularized=True,
                       n_factors=n_factors, threshold=thr, flagged=raw.flagged,
                       meta=dict(raw.meta))


def estimate_panel(ticks, config: PreAvgConfig = PreAvgConfig(), n_factors: int | None = 3,
                   sector_labels=None, days=None) -> list[RealizedCov]:
    """Estimate every day of a :class:`~drmvp.market_sim.TickPanel`.

    ``n_factors=None`` skips regularization.
    """
    out = []
    for d in (range(ticks.days) if days is None else days):
        t, y = ticks.day_slice(d)
        rc = estimate_day(t, y, config, day=d)
        if n_factors is not None:
            rc = poet_regularize(rc, n_factors, sector_labels)
        out.append(rc)
    return out
