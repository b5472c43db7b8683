"""Synthetic high-frequency markets whose daily inverse integrated volatility
follows the DR-MVP dynamics.

The integrated volatility of each day is split in two parts.  The first part
``Gamma_1`` has an inverse with BEKK-type conditional mean ``G_1``; the second
enters only through a diagonal process ``Pi`` chosen so that the row sums of
the total inverse ``Omega = Gamma_1^{-1} - Gamma2tilde^{-1}`` have the prescribed
autoregressive conditional mean ``g``.

Both pieces follow the spot-volatility recursion

    Sigma_t = 2A - A S^{-1} A + (4s - 3s^2) A (S^{-1} - G) A - A M_t A,

with ``A`` the running mean of ``Sigma`` over the day, ``s`` the intraday
clock and ``S`` the spot matrix at the previous close.  Writing
``h(s) = s^2 (int_0^s Sigma)^{-1}`` the recursion is equivalent to

    h(s) = s S^{-1} - (2s^2 - s^3)(S^{-1} - G) + int_0^s M,

so the cumulative integrals are available in closed form on any grid.  The
simulator works with these exact cumulative integrals: the spot matrix on a
grid interval is the interval average, and the day integral satisfies
``Omega_d = G + int_0^1 M`` to round-off whatever the grid size.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .lags import LagSpec, aggregate, companion_radius

log = logging.getLogger(__name__)

PSD_RTOL = 1e-10


class PSDViolation(RuntimeError):
    """A simulated spot matrix lost positive semidefiniteness."""


@dataclass(frozen=True)
class SimConfig:
    p: int = 10
    days: int = 100
    steps_per_day: int = 390
    seed: int = 0
    lag_spec: LagSpec = field(default_factory=LagSpec)
    jump_intensity: float = 5.0
    jump_mean: float = 0.05
    jump_sd: float = 0.005
    noise_scale: float = 0.01
    coefficient_preset: str = "har_factor"
    burn_in: int = 30
    # "inverse": shock bounds scale with the eigen-diagonal of the previous
    # close's inverse; "capped": the same, capped at the target's eigen-diagonal
    # so the close-of-day matrix stays PSD; "spot": with the spot matrix itself.
    sigma1_units: str = "capped"
    pi_units: str = "spot"
    sigma1_clip: float = 0.2
    pi_clip: float = 1.0
    martingale: bool = True
    # which daily inverses feed the BEKK target: "gamma1" or "gamma"
    inverse_history: str = "gamma1"
    keep_prob: float = 1.0
    initial_log_price: float = 0.0

    def __post_init__(self):
        if isinstance(self.lag_spec, dict):
            object.__setattr__(self, "lag_spec", LagSpec.from_dict(self.lag_spec))
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.steps_per_day < 10:
            raise ValueError("steps_per_day must be >= 10")
        if self.days <= self.lag_spec.max_lag:
            raise ValueError("days must exceed the longest lag")
        if self.jump_sd <= 0:
            raise ValueError("jump_sd must be positive")
        if self.noise_scale < 0 or self.jump_intensity < 0:
            raise ValueError("noise_scale and jump_intensity must be >= 0")
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.sigma1_units not in ("inverse", "capped", "spot"):
            raise ValueError(f"unknown shock units {self.sigma1_units!r}")
        if self.pi_units not in ("inverse", "spot"):
            raise ValueError(f"unknown shock units {self.pi_units!r}")
        if self.inverse_history not in ("gamma1", "gamma"):
            raise ValueError(f"unknown inverse_history {self.inverse_history!r}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lag_spec"] = self.lag_spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["lag_spec"] = LagSpec.from_dict(d.get("lag_spec"))
        return cls(**d)


@dataclass
class CoefficientSet:
    beta0: np.ndarray
    betas: dict
    b0: np.ndarray
    bs: dict
    eigenbasis: np.ndarray
    q: np.ndarray
    q0: float

    @property
    def theta(self) -> np.ndarray:
        """Per-asset true parameter rows ``(beta0_i, beta_{h,i.} ...)``."""
        blocks = [self.betas[t] for t in sorted(self.betas)]
        return np.column_stack([self.beta0] + blocks)


@dataclass
class VolProcessState:
    """State carried from one close to the next."""

    sigma1: np.ndarray
    pi: np.ndarray
    eigenbasis: np.ndarray
    x: np.ndarray
    day: int = 0

    def copy(self) -> "VolProcessState":
        return VolProcessState(self.sigma1.copy(), self.pi.copy(),
                               self.eigenbasis, self.x.copy(), self.day)


@dataclass
class History:
    """Trailing daily quantities needed by the conditional targets."""

    omega1: deque
    omega: deque
    w: deque

    def push(self, rec: "DayRecord"):
        self.omega1.append(rec.omega1)
        self.omega.append(rec.omega)
        self.w.append(rec.w)

    def copy(self) -> "History":
        n = self.w.maxlen
        return History(deque(self.omega1, n), deque(self.omega, n), deque(self.w, n))


@dataclass
class DayRecord:
    day: int
    gamma: np.ndarray
    omega: np.ndarray
    omega1: np.ndarray
    g: np.ndarray
    target: np.ndarray  # conditional mean of omega
    w: np.ndarray
    spot: np.ndarray | None = None  # (m, p, p) interval-average spot matrices
    spot_open: np.ndarray | None = None
    spot_eig: tuple | None = None  # eigh of ``spot``


@dataclass
class TickPanel:
    """Per asset, per day: increasing timestamps (fraction of day) and log prices."""

    times: list  # times[i][d] -> array
    prices: list  # prices[i][d] -> array

    @property
    def p(self) -> int:
        return len(self.times)

    @property
    def days(self) -> int:
        return len(self.times[0]) if self.times else 0

    def day_slice(self, d: int):
        return [self.times[i][d] for i in range(self.p)], [self.prices[i][d] for i in range(self.p)]


@dataclass
class SimOutput:
    config: SimConfig
    coeffs: CoefficientSet
    ticks: TickPanel | None
    true_gamma: np.ndarray  # (N, p, p)
    true_omega: np.ndarray
    true_g: np.ndarray  # (N, p)
    true_weights: np.ndarray  # (N, p) non-normalized
    true_target: np.ndarray  # (N, p, p) conditional mean of omega
    final_state: VolProcessState | None = None
    final_history: History | None = None

    @property
    def true_weights_normalized(self) -> np.ndarray:
        w = self.true_weights
        return w / w.sum(axis=1, keepdims=True)


def day_rng(seed: int, day: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (day, stream) cell of a run."""
    ss = np.random.SeedSequence(seed, spawn_key=(day, stream))
    return np.random.Generator(np.random.Philox(ss))


def spectrum(p: int) -> np.ndarray:
    q = np.array([246.0 + i for i in range(1, p + 1)])
    q[:3] = [40.0, 80.0, 120.0][: min(3, p)]
    return q


def _bekk_factor(beta: np.ndarray) -> np.ndarray:
    bbar = (beta + beta.T) / 2
    colsum = bbar.sum(axis=0)
    if np.any(colsum <= 0):
        raise ValueError("BEKK factor needs positive column sums")
    return bbar / np.sqrt(colsum)[None, :]


def _term_weights(spec: LagSpec) -> dict:
    if spec.kind == "har" and spec.horizons == (1, 5, 22):
        return {1: 0.3, 5: 0.6, 22: 0.1}
    n = len(spec.terms)
    return {t: 1.0 / n for t in spec.terms}


def build_coefficients(config: SimConfig) -> CoefficientSet:
    """Preset coefficients: a bidiagonal base matrix split across lag terms,
    intercept and BEKK factors from a factor-like eigen spectrum."""
    p = config.p
    if p < 2:
        raise ValueError("p must be >= 2")
    if config.coefficient_preset != "har_factor":
        raise ValueError(f"unknown coefficient preset {config.coefficient_preset!r}")
    base = np.zeros((p, p))
    np.fill_diagonal(base, 0.2)
    base[np.arange(1, p), np.arange(p - 1)] = 0.7
    betas = {t: wt * base for t, wt in _term_weights(config.lag_spec).items()}

    vals, vecs = np.linalg.eigh(base + base.T)
    order = np.argsort(-vals, kind="stable")
    U = vecs[:, order]
    # fix eigenvector signs so the basis is reproducible
    idx = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[idx, np.arange(p)])[None, :]

    q = spectrum(p)
    q0 = 800.0
    beta0 = U @ (q * (U.T @ np.ones(p))) + q0
    b0 = U @ np.diag(np.sqrt(q)) @ U.T
    bs = {t: _bekk_factor(b) for t, b in betas.items()}
    return CoefficientSet(beta0=beta0, betas=betas, b0=b0, bs=bs, eigenbasis=U, q=q, q0=q0)


def stationary_bekk(coeffs: CoefficientSet, tol: float = 1e-10, max_iter: int = 20000) -> np.ndarray:
    """Fixed point of ``X = B0 B0' + sum_j B_j X B_j'``."""
    c = coeffs.b0 @ coeffs.b0.T
    x = c.copy()
    for _ in range(max_iter):
        xn = c + sum(b @ x @ b.T for b in coeffs.bs.values())
        if np.max(np.abs(xn - x)) <= tol * np.max(np.abs(xn)):
            return (xn + xn.T) / 2
        x = xn
    raise RuntimeError("BEKK fixed point did not converge")


def initial_state(coeffs: CoefficientSet, config: SimConfig) -> tuple[VolProcessState, History]:
    """Start at the stationary BEKK inverse with flat weight history."""
    p = config.p
    spec = config.lag_spec
    rho = companion_radius(coeffs.betas, spec)
    if rho >= 1:
        raise ValueError(f"companion spectral radius {rho:.4f} >= 1")
    omega1 = stationary_bekk(coeffs)
    bsum = sum(coeffs.betas.values())
    wstar = np.linalg.solve(np.eye(p) - bsum, coeffs.beta0)
    target_pi = omega1 @ np.ones(p) - wstar
    if np.any(target_pi == 0):
        raise ValueError("degenerate diagonal target at start")
    omega = omega1 - np.diag(target_pi)
    L = spec.max_lag
    hist = History(deque([omega1] * L, L), deque([omega] * L, L), deque([omega @ np.ones(p)] * L, L))
    # weight history is flat at the fixed point of g
    hist.w = deque([wstar] * L, L)
    state = VolProcessState(
        sigma1=np.linalg.inv(omega1),
        pi=1.0 / target_pi,
        eigenbasis=coeffs.eigenbasis,
        x=np.full(p, config.initial_log_price),
    )
    return state, hist


def conditional_targets(coeffs: CoefficientSet, history: History, config: SimConfig):
    """Return ``(G1, g, r)``: BEKK target for ``Gamma_1^{-1}``, the conditional
    mean of ``w`` and the diagonal target ``r = G1 1 - g``."""
    spec = config.lag_spec
    src = history.omega1 if config.inverse_history == "gamma1" else history.omega
    om_terms = aggregate(np.array(src), spec)
    w_terms = aggregate(np.array(history.w), spec)
    g1 = coeffs.b0 @ coeffs.b0.T
    g = coeffs.beta0.copy()
    for k, t in enumerate(spec.terms):
        b = coeffs.bs[t]
        g1 = g1 + b @ om_terms[k] @ b.T
        g = g + coeffs.betas[t] @ w_terms[k]
    g1 = (g1 + g1.T) / 2
    r = g1 @ np.ones(len(g)) - g
    return g1, g, r


def _clipped_paths(u, c, m, rng, shape_prefix=()):
    """Clipped scaled Brownian paths ``clip(u W_s, -c u, c u)`` at s_k = k/m."""
    p = u.shape[-1]
    z = rng.standard_normal(shape_prefix + (m, p)) * np.sqrt(1.0 / m)
    w = np.cumsum(z, axis=-2)
    w = np.concatenate([np.zeros(shape_prefix + (1, p)), w], axis=-2)
    x = u[..., None, :] * w
    return np.clip(x, -c * u[..., None, :], c * u[..., None, :])


def _shock_scales(state: VolProcessState, config: SimConfig, g1: np.ndarray):
    U = state.eigenbasis
    s1 = state.sigma1 if config.sigma1_units == "spot" else np.linalg.inv(state.sigma1)
    u1 = np.einsum("ik,ij,jk->k", U, s1, U)
    if config.sigma1_units == "capped":
        # the close-of-day inner matrix G + U diag(2 int M - M_1) U' needs
        # 3c u <= eigen-diagonal of G in the worst case
        u1 = np.minimum(u1, np.einsum("ik,ij,jk->k", U, g1, U))
    u2 = 1.0 / state.pi if config.pi_units == "inverse" else state.pi
    return np.abs(u1), np.abs(u2)


def _psd_check(mats: np.ndarray, what: str, offset: int = 0, ev: np.ndarray | None = None):
    if ev is None:
        ev = np.linalg.eigvalsh(mats)
    tr = np.trace(mats, axis1=-2, axis2=-1)
    bad = ev[..., 0] < -PSD_RTOL * np.abs(tr)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise PSDViolation(
            f"{what} lost PSD at step {k + offset} (min eigenvalue {ev[k, 0]:.3e}); "
            "the martingale shock exceeded the eigen-wise bound "
            "m < 1/sigma - 2s(1/sigma - g) that keeps the spot matrix PSD"
        )


def sigma2_from_partition(sigma1, pi, gamma1_cum, gamma2t_cum):
    """Spot matrix of the supplementary component.

    Differentiates ``Gamma_2 = Gamma_1 (Gamma2tilde - Gamma_1)^{-1} Gamma_1``:
    ``Sigma_2 = Sigma_1 P + P' Sigma_1 - P' (Pi - Sigma_1) P`` with
    ``P = (Gamma2tilde - Gamma_1)^{-1} Gamma_1``.
    """
    P = np.linalg.solve(gamma2t_cum - gamma1_cum, gamma1_cum)
    s2 = sigma1 @ P + P.T @ sigma1 - P.T @ (np.diag(pi) - sigma1) @ P
    return (s2 + s2.T) / 2


def evolve_day(state: VolProcessState, coeffs: CoefficientSet, history: History,
               rng: np.random.Generator, config: SimConfig, grid: bool = True):
    """Advance the volatility process over one day.

    Returns the new state and a :class:`DayRecord`.  With ``grid=True`` the
    interval-average spot matrices are formed and checked for PSD.
    """
    p, m = config.p, config.steps_per_day
    U = state.eigenbasis
    g1, g, r = conditional_targets(coeffs, history, config)
    s_inv = np.linalg.inv(state.sigma1)
    pi_inv = 1.0 / state.pi

    if config.martingale:
        u1, u2 = _shock_scales(state, config, g1)
        m1 = _clipped_paths(u1, config.sigma1_clip, m, rng)
        m2 = _clipped_paths(u2, config.pi_clip, m, rng)
    else:
        m1 = np.zeros((m + 1, p))
        m2 = np.zeros((m + 1, p))
    # left-point integral of the shocks, zero at the open
    cm1 = np.concatenate([np.zeros((1, p)), np.cumsum(m1[:-1], axis=0) / m])
    cm2 = np.concatenate([np.zeros((1, p)), np.cumsum(m2[:-1], axis=0) / m])

    omega1 = g1 + (U * cm1[-1]) @ U.T
    h2_end = r + cm2[-1]
    omega = omega1 - np.diag(h2_end)
    omega = (omega + omega.T) / 2
    gamma = np.linalg.inv(omega)
    gamma = (gamma + gamma.T) / 2
    w = omega @ np.ones(p)
    target = g1 - np.diag(r)

    # spot at the close, from differentiating s^2 h(s)^{-1} at s = 1
    inner = g1 + (U * (2 * cm1[-1] - m1[-1])) @ U.T
    om1_inv = np.linalg.inv(omega1)
    sigma1_end = om1_inv @ inner @ om1_inv
    sigma1_end = (sigma1_end + sigma1_end.T) / 2
    pi_end = (r + 2 * cm2[-1] - m2[-1]) / h2_end**2
    _psd_check(sigma1_end[None], "close-of-day Sigma_1", offset=m)
    if np.any(pi_end == 0) or not np.all(np.isfinite(pi_end)):
        raise PSDViolation("diagonal process Pi hit zero at the close")

    spot = spot_open = spot_eig = None
    if grid:
        s = np.arange(m + 1) / m
        a = s[1:, None, None]
        b = (2 * s[1:] ** 2 - s[1:] ** 3)[:, None, None]
        h1 = a * s_inv + b * (g1 - s_inv) + np.einsum("ik,tk,jk->tij", U, cm1[1:], U)
        h2 = s[1:, None] * pi_inv + (2 * s[1:] ** 2 - s[1:] ** 3)[:, None] * (r - pi_inv) + cm2[1:]
        H = h1 - h2[:, :, None] * np.eye(p)[None]
        cum = (s[1:] ** 2)[:, None, None] * np.linalg.inv(H)
        cum = np.concatenate([np.zeros((1, p, p)), cum])
        spot = np.diff(cum, axis=0) * m
        spot = (spot + np.swapaxes(spot, 1, 2)) / 2
        spot_eig = np.linalg.eigh(spot)
        _psd_check(spot, "total spot matrix", ev=spot_eig[0])
        spot_open = np.linalg.inv(s_inv - np.diag(pi_inv))

    new_state = VolProcessState(sigma1_end, pi_end, U, state.x.copy(), state.day + 1)
    rec = DayRecord(day=state.day + 1, gamma=gamma, omega=omega, omega1=omega1, g=g,
                    target=target, w=w, spot=spot, spot_open=spot_open, spot_eig=spot_eig)
    return new_state, rec


def psd_sqrt(mats: np.ndarray, eig: tuple | None = None) -> np.ndarray:
    """Symmetric square roots with negative eigenvalues clipped to zero."""
    ev, vec = np.linalg.eigh(mats) if eig is None else eig
    ev = np.sqrt(np.clip(ev, 0.0, None))
    return (vec * ev[..., None, :]) @ np.swapaxes(vec, -1, -2)


def emit_ticks(spot: np.ndarray, x0: np.ndarray, config: SimConfig, rng: np.random.Generator,
               spot_open: np.ndarray | None = None, spot_eig: tuple | None = None):
    """Observed log prices on the day grid.

    ``spot`` holds the ``m`` interval spot matrices.  Returns ``(times, Y, x_end)``
    where ``times[i]`` and ``Y[i]`` are asset ``i``'s kept observations.
    """
    m, p = spot.shape[0], spot.shape[1]
    root = psd_sqrt(spot, spot_eig)
    z = rng.standard_normal((m, p))
    dx = (root @ z[:, :, None])[:, :, 0] * np.sqrt(1.0 / m)
    counts = rng.poisson(config.jump_intensity / m, size=(m, p))
    nj = int(counts.sum())
    if nj:
        sizes = rng.normal(config.jump_mean, config.jump_sd, size=nj)
        signs = rng.choice(np.array([-1.0, 1.0]), size=nj)
        jumps = np.zeros((m, p))
        flat = np.repeat(np.arange(m * p), counts.ravel())
        np.add.at(jumps.reshape(-1), flat, sizes * signs)
        dx = dx + jumps
    x = x0[None, :] + np.concatenate([np.zeros((1, p)), np.cumsum(dx, axis=0)])
    base = spot_open if spot_open is not None else spot[0]
    sd = np.sqrt(config.noise_scale * np.clip(np.diag(base), 0.0, None))
    y = x + rng.standard_normal((m + 1, p)) * sd[None, :]
    t = np.arange(m + 1) / m
    times, prices = [], []
    for i in range(p):
        if config.keep_prob < 1:
            keep = rng.random(m + 1) < config.keep_prob
            keep[0] = keep[-1] = True
        else:
            keep = slice(None)
        times.append(t[keep].copy())
        prices.append(y[keep, i].copy())
    return times, prices, x[-1]


def simulate(config: SimConfig, with_ticks: bool = True, check_grid: bool | None = None) -> SimOutput:
    """Run burn-in plus ``config.days`` recorded days."""
    coeffs = build_coefficients(config)
    state, hist = initial_state(coeffs, config)
    p, n_days = config.p, config.days
    total = config.burn_in + n_days
    grid = with_ticks if check_grid is None else (check_grid or with_ticks)
    gam = np.empty((n_days, p, p))
    om = np.empty((n_days, p, p))
    tg = np.empty((n_days, p, p))
    gg = np.empty((n_days, p))
    ww = np.empty((n_days, p))
    times = [[] for _ in range(p)]
    prices = [[] for _ in range(p)]
    for d in range(total):
        # burn-in days only need the day integrals
        recorded = d >= config.burn_in
        state, rec = evolve_day(state, coeffs, hist, day_rng(config.seed, d, 0), config,
                                grid=grid and recorded)
        hist.push(rec)
        if with_ticks and recorded:
            t, y, state.x = emit_ticks(rec.spot, state.x, config, day_rng(config.seed, d, 1),
                                       spot_open=rec.spot_open, spot_eig=rec.spot_eig)
        k = d - config.burn_in
        if k < 0:
            continue
        gam[k], om[k], tg[k], gg[k], ww[k] = rec.gamma, rec.omega, rec.target, rec.g, rec.w
        if with_ticks:
            for i in range(p):
                times[i].append(t[i])
                prices[i].append(y[i])
    ticks = TickPanel(times, prices) if with_ticks else None
    return SimOutput(config, coeffs, ticks, gam, om, gg, ww, tg, state, hist)


def sample_day_inverses(state: VolProcessState, coeffs: CoefficientSet, history: History,
                        config: SimConfig, n_paths: int, rng: np.random.Generator,
                        chunk: int = 250) -> np.ndarray:
    """Monte-Carlo draws of next day's ``Omega`` given the current state.

    Only the martingale integrals are random, so the draws skip the spot grid.
    Returns an array of shape ``(n_paths, p, p)``.
    """
    p, m = config.p, config.steps_per_day
    U = state.eigenbasis
    g1, g, r = conditional_targets(coeffs, history, config)
    base = g1 - np.diag(r)
    out = np.empty((n_paths, p, p))
    if not config.martingale:
        out[:] = base
        return out
    u1, u2 = _shock_scales(state, config, g1)
    done = 0
    while done < n_paths:
        k = min(chunk, n_paths - done)
        m1 = _clipped_paths(u1, config.sigma1_clip, m, rng, (k,))
        m2 = _clipped_paths(u2, config.pi_clip, m, rng, (k,))
        i1 = m1[:, :-1].sum(axis=1) / m
        i2 = m2[:, :-1].sum(axis=1) / m
        om = base[None] + np.einsum("ik,nk,jk->nij", U, i1, U)
        om[:, np.arange(p), np.arange(p)] -= i2
        out[done:done + k] = om
        done += k
    return out


def with_overrides(config: SimConfig, **kw) -> SimConfig:
    return replace(config, **kw)
