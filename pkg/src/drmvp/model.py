"""Sparse autoregressive models for daily non-normalized MVP weights.

Each asset's weight is regressed on lagged (AR) or trailing-mean (HAR) weights
of all assets by LASSO, with the penalty chosen by EBIC.  All assets share the
same design, so the coordinate descent runs on every response at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clime import DegenerateNormalizer, normalize
from .lags import LagSpec, aggregate

log = logging.getLogger(__name__)

LOSS_FLOOR = 1e-300
ZERO_TOL = 1e-12


class InsufficientHistory(ValueError):
    pass


@dataclass(frozen=True)
class LassoConfig:
    lambda_min: float = 1e-6
    lambda_max: float = 10.0
    n_lambda: int = 100
    gamma: float = 0.5
    penalize_intercept: bool = True
    # divide the response by its sd so the grid is unit-free
    scale_response: bool = True
    tol: float = 1e-9
    max_sweeps: int = 10000
    # plain sweeps before the exact active-set finish
    finish_after: int = 5

    def __post_init__(self):
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if self.n_lambda < 1 or self.max_sweeps < 1 or self.finish_after < 1:
            raise ValueError("n_lambda, max_sweeps and finish_after must be >= 1")

    def grid(self) -> np.ndarray:
        """Descending penalty path."""
        return np.logspace(np.log10(self.lambda_max), np.log10(self.lambda_min), self.n_lambda)


@dataclass
class FeaturePanel:
    y: np.ndarray  # (n, p) responses
    x: np.ndarray  # (n, P) features, term-major then asset
    spec: LagSpec
    days: np.ndarray  # response day indices

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]


def lag_features(history, spec: LagSpec) -> np.ndarray:
    """Feature row predicting the day after the end of ``history``."""
    return aggregate(np.asarray(history)[-spec.max_lag:], spec).reshape(-1)


def build_features(weights, spec: LagSpec) -> FeaturePanel:
    """Pair each day's weights with features built from earlier days only."""
    w = np.asarray(weights, float)
    if w.ndim == 1:
        w = w[:, None]
    L = spec.max_lag
    if w.shape[0] <= L:
        raise InsufficientHistory(f"need more than {L} days, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights contain non-finite values")
    rows = [lag_features(w[d - L:d], spec) for d in range(L, w.shape[0])]
    return FeaturePanel(y=w[L:].copy(), x=np.array(rows), spec=spec, days=np.arange(L, w.shape[0]))


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass
class _Standardized:
    z: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    ys: np.ndarray
    yscale: np.ndarray
    keep: np.ndarray


def _standardize(x, y, scale_response):
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    keep = sd > 1e-14 * np.maximum(1.0, np.abs(mean))
    z = np.zeros_like(x)
    z[:, keep] = (x[:, keep] - mean[keep]) / sd[keep]
    if scale_response:
        ysd = y.std(axis=0)
        yscale = np.where(ysd > 0, ysd, 1.0)
    else:
        yscale = np.ones(y.shape[1])
    return _Standardized(z, mean, np.where(keep, sd, 1.0), y / yscale, yscale, keep)


def lambda_max(z, ys) -> np.ndarray:
    """Smallest penalty zeroing every slope, per response (standardized scale)."""
    n = z.shape[0]
    return 2.0 / n * np.max(np.abs(z.T @ (ys - ys.mean(axis=0))), axis=0)


def _objective(q, c, x, half):
    return x @ q @ x - 2.0 * c @ x + 2.0 * half * np.abs(x).sum()


def _feature_sign(q, c, x, half, keep, max_steps=1000):
    """Feature-sign active-set search for ``min x'Qx - 2c'x + 2 half ||x||_1``.

    Starts from ``x`` and returns ``(x, certified)``.  Each step strictly lowers
    the objective, so the search ends at the exact minimizer.
    """
    x = x.copy()
    scale = max(1.0, half)
    for _ in range(max_steps):
        g = c - q @ x
        act = np.flatnonzero(x != 0)
        s = np.sign(x[act])
        if np.all(np.abs(g[act] - half * s) <= 1e-10 * scale):
            viol = np.where(keep & (x == 0), np.abs(g) - half, -np.inf)
            j = int(np.argmax(viol))
            if viol[j] <= 1e-12 * scale:
                return x, True
            # add the worst violator with the sign that lowers the objective
            act = np.append(act, j)
            s = np.append(s, np.sign(g[j]))
            x[j] = 0.0
        qa, rhs = q[np.ix_(act, act)], c[act] - half * s
        new = np.linalg.lstsq(qa, rhs, rcond=None)[0]
        cur = x[act]
        v = rhs - qa @ new
        if np.max(np.abs(v), initial=0.0) > 1e-9 * scale:
            # singular support with no stationary point: v spans part of the
            # null space of qa, so moving along it leaves the quadratic term
            # unchanged and lowers the linear term until a coefficient hits 0
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -cur / v
            t = t[(t > 0) & np.isfinite(t)]
            if t.size == 0:
                return x, False
            step = t.min()
            moved = cur + step * v
            moved[np.isclose(step, -cur / np.where(v == 0, np.inf, v))] = 0.0
            x[act] = moved
            continue
        if np.all(np.sign(new) == s):
            x[act] = new
            continue
        # discrete line search over sign changes between cur and new
        d = new - cur
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -cur / d
        ts = np.unique(np.concatenate([t[(t > 0) & (t < 1)], [1.0]]))
        best_t, best_f = None, _objective(q, c, x, half)
        for tt in ts:
            trial = x.copy()
            trial[act] = cur + tt * d
            hit = np.isclose(tt, t)
            trial[act[hit]] = 0.0
            f = _objective(q, c, trial, half)
            if f < best_f:
                best_t, best_f, best_x = tt, f, trial
        if best_t is None:
            return x, False
        x = best_x
    return x, False


def _cd(q, c, ybar, lam, b, b0, penalize_intercept, tol, max_sweeps, keep, finish_after=5):
    """Coordinate descent on ``(1/n)||y - b0 - Zb||^2 + lam(|b0| + ||b||_1)``
    for all responses.  ``q = Z'Z/n``, ``c = Z'y/n``.  Updates in place.

    Sweeps stop once no coefficient moves by ``tol``.  On ill-conditioned
    designs, responses still moving after ``finish_after`` sweeps are
    finished by an exact active-set search.
    """
    half = lam / 2.0
    # a hair above lam/2 so that lam = lambda_max zeroes slopes despite round-off
    cut = half * (1.0 + 1e-12)
    b0[:] = soft_threshold(ybar, half) if penalize_intercept else ybar
    idx = np.flatnonzero(keep)
    for sweep in range(min(max_sweeps, finish_after)):
        delta = 0.0
        for j in idx:
            old = b[j].copy()
            r = c[j] - q[j] @ b + q[j, j] * old
            b[j] = soft_threshold(r, cut) / q[j, j]
            d = np.max(np.abs(b[j] - old))
            if d > delta:
                delta = d
        if delta < tol:
            return sweep + 1, np.ones(b.shape[1], bool)
    failed = []
    for i in range(b.shape[1]):
        x, cert = _feature_sign(q, c[:, i], b[:, i], half, keep)
        if cert:
            b[:, i] = x
        else:
            failed.append(i)
    ok = np.ones(b.shape[1], bool)
    if not failed:
        return sweep + 1, ok
    # singular supports (more features than rows): keep sweeping
    cols = np.array(failed)
    bl = b[:, cols]
    for sweep in range(sweep + 1, max_sweeps):
        delta = 0.0
        for j in idx:
            old = bl[j].copy()
            r = c[j, cols] - q[j] @ bl + q[j, j] * old
            bl[j] = soft_threshold(r, cut) / q[j, j]
            delta = max(delta, np.max(np.abs(bl[j] - old)))
        if delta < tol:
            b[:, cols] = bl
            return sweep + 1, ok
    b[:, cols] = bl
    ok[cols] = False
    return max_sweeps, ok


def kkt_residual(z, ys, b0, b, lam, penalize_intercept=True) -> np.ndarray:
    """Largest KKT violation per response on the standardized problem."""
    n = z.shape[0]
    r = ys - b0 - z @ b
    grad = -2.0 / n * (z.T @ r)
    nz = np.abs(b) > ZERO_TOL
    viol = np.where(nz, np.abs(grad + lam * np.sign(b)), np.maximum(np.abs(grad) - lam, 0.0))
    g0 = -2.0 / n * r.sum(axis=0)
    if penalize_intercept:
        nz0 = np.abs(b0) > ZERO_TOL
        v0 = np.where(nz0, np.abs(g0 + lam * np.sign(b0)), np.maximum(np.abs(g0) - lam, 0.0))
    else:
        v0 = np.abs(g0)
    return np.maximum(viol.max(axis=0, initial=0.0), v0)


@dataclass
class DrmvpFit:
    spec: LagSpec
    intercept: np.ndarray  # (p,)
    coef: np.ndarray  # (p, P) row i predicts asset i
    lambda_used: np.ndarray
    ebic: np.ndarray
    nonzero: np.ndarray
    kkt: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    overfit: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.intercept.shape[0]

    def theta(self) -> np.ndarray:
        return np.column_stack([self.intercept, self.coef])

    def predict(self, features) -> np.ndarray:
        return self.intercept + self.coef @ np.asarray(features, float)


def ebic(loss, k, n, n_features, gamma=0.5):
    """``n log L + k log n + 2 k gamma log P``."""
    return n * np.log(loss) + k * np.log(n) + 2.0 * k * gamma * np.log(n_features)


def _path(panel: FeaturePanel, lambdas, config: LassoConfig):
    x, y = panel.x, panel.y
    n, P = x.shape
    st = _standardize(x, y, config.scale_response)
    q = st.z.T @ st.z / n
    ybar = st.ys.mean(axis=0)
    # centring here as in lambda_max keeps the two bit-compatible
    c = st.z.T @ (st.ys - ybar) / n
    p = y.shape[1]
    b = np.zeros((P, p))
    b0 = np.zeros(p)
    for lam in lambdas:
        sweeps, ok = _cd(q, c, ybar, lam, b, b0, config.penalize_intercept,
                         config.tol, config.max_sweeps, st.keep, config.finish_after)
        if not np.all(ok):
            log.debug("lasso not converged after %d sweeps at lambda=%g", sweeps, lam)
        yield lam, st, b.copy(), b0.copy(), ok


def _to_original(st: _Standardized, b, b0):
    coef = (b / st.sd[:, None]) * st.yscale[None, :]
    coef[~st.keep] = 0.0
    inter = (b0 - (st.mean / st.sd) @ np.where(st.keep[:, None], b, 0.0)) * st.yscale
    return inter, coef.T


def lasso_fit(panel: FeaturePanel, lam: float, config: LassoConfig = LassoConfig()):
    """Single-penalty fit; returns ``(intercept, coef, kkt, converged)`` for all assets."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    (_, st, b, b0, ok), = _path(panel, [lam], config)
    inter, coef = _to_original(st, b, b0)
    kkt = kkt_residual(st.z, st.ys, b0, b, lam, config.penalize_intercept)
    return inter, coef, kkt, ok


def ebic_select(panel: FeaturePanel, config: LassoConfig = LassoConfig(), lambdas=None) -> DrmvpFit:
    """EBIC-tuned LASSO for every asset along a warm-started descending path.

    Ties go to the larger penalty.
    """
    lams = config.grid() if lambdas is None else np.sort(np.asarray(lambdas, float))[::-1]
    if lams.size == 0:
        raise ValueError("empty lambda grid")
    n, P = panel.n, panel.n_features
    p = panel.y.shape[1]
    best = np.full(p, np.inf)
    chosen = [None] * p
    for lam, st, b, b0, ok in _path(panel, lams, config):
        inter, coef = _to_original(st, b, b0)
        resid = panel.y - inter - panel.x @ coef.T
        loss = np.mean(resid**2, axis=0)
        over = loss <= LOSS_FLOOR
        k = np.sum(np.abs(b) > ZERO_TOL, axis=0)
        if config.penalize_intercept:
            k = k + (np.abs(b0) > ZERO_TOL)
        e = ebic(np.maximum(loss, LOSS_FLOOR), k, n, P, config.gamma)
        for i in np.flatnonzero(e < best):
            best[i] = e[i]
            chosen[i] = (lam, inter[i], coef[i], e[i], k[i], resid[:, i], ok[i], over[i],
                         b[:, i], b0[i], st)
    inter = np.array([c[1] for c in chosen])
    coef = np.array([c[2] for c in chosen])
    if not all(c[6] for c in chosen):
        log.warning("lasso did not converge for %d of %d selected fits",
                    sum(not c[6] for c in chosen), len(chosen))
    kkt = np.array([kkt_residual(c[10].z, c[10].ys[:, [i]], np.array([c[9]]), c[8][:, None], c[0],
                                 config.penalize_intercept)[0] for i, c in enumerate(chosen)])
    return DrmvpFit(
        spec=panel.spec, intercept=inter, coef=coef,
        lambda_used=np.array([c[0] for c in chosen]),
        ebic=np.array([c[3] for c in chosen]),
        nonzero=np.array([c[4] for c in chosen]),
        kkt=kkt,
        residuals=np.column_stack([c[5] for c in chosen]),
        converged=np.array([c[6] for c in chosen]),
        overfit=np.array([c[7] for c in chosen]),
    )


def har_ols_baseline(panel: FeaturePanel) -> DrmvpFit:
    """Per-asset OLS on an intercept and the asset's own lag terms."""
    n, p = panel.y.shape
    T = len(panel.spec.terms)
    if n <= T + 1:
        raise InsufficientHistory("too few rows for the own-lag regression")
    inter = np.zeros(p)
    coef = np.zeros((p, T * p))
    resid = np.zeros((n, p))
    full_rank = np.ones(p, bool)
    for i in range(p):
        cols = [t * p + i for t in range(T)]
        design = np.column_stack([np.ones(n), panel.x[:, cols]])
        sol, _, rank, _ = np.linalg.lstsq(design, panel.y[:, i], rcond=None)
        full_rank[i] = rank == design.shape[1]
        inter[i] = sol[0]
        coef[i, cols] = sol[1:]
        resid[:, i] = panel.y[:, i] - design @ sol
    return DrmvpFit(spec=panel.spec, intercept=inter, coef=coef, lambda_used=np.zeros(p),
                    ebic=np.full(p, np.nan), nonzero=np.count_nonzero(coef, axis=1) + 1,
                    kkt=np.zeros(p), residuals=resid, converged=full_rank,
                    overfit=np.zeros(p, bool), meta={"rank_deficient": ~full_rank})


def predict_g(fit: DrmvpFit, history) -> tuple[np.ndarray, np.ndarray]:
    """Next-day non-normalized weights and their normalized portfolio."""
    g = fit.predict(lag_features(history, fit.spec))
    return g, normalize(g)


MODELS = ("drmvp", "har", "martingale")


@dataclass
class Backtest:
    model: str
    days: np.ndarray
    g_hat: np.ndarray
    w_bar_hat: np.ndarray
    fallback: np.ndarray
    lambdas: np.ndarray | None = None


def rolling_backtest(weights, spec: LagSpec, window: int, model: str = "drmvp",
                     config: LassoConfig = LassoConfig(), start: int | None = None) -> Backtest:
    """One-day-ahead predictions refitted on a trailing ``window`` of days.

    Day ``d`` is predicted from days ``d - window .. d - 1`` only.
    """
    w = np.asarray(weights, float)
    T, p = w.shape
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    first = window if start is None else max(start, window)
    if T <= first:
        raise InsufficientHistory(f"need more than {first} days, got {T}")
    days = np.arange(first, T)
    g_hat = np.zeros((days.size, p))
    wb = np.zeros((days.size, p))
    fb = np.zeros(days.size, bool)
    lams = np.full((days.size, p), np.nan)
    prev = None
    for k, d in enumerate(days):
        hist = w[d - window:d]
        if model == "martingale":
            g = hist[-1].copy()
        else:
            panel = build_features(hist, spec)
            fit = ebic_select(panel, config) if model == "drmvp" else har_ols_baseline(panel)
            g = fit.predict(lag_features(hist, spec))
            lams[k] = fit.lambda_used
        g_hat[k] = g
        try:
            wb[k] = normalize(g)
        except DegenerateNormalizer:
            fb[k] = True
            wb[k] = prev if prev is not None else np.full(p, 1.0 / p)
            log.warning("day %d: degenerate normalizer, reusing previous portfolio", d)
        prev = wb[k]
    return Backtest(model=model, days=days, g_hat=g_hat, w_bar_hat=wb, fallback=fb, lambdas=lams)
