"""Sparse inverse volatility matrices by constrained l1-minimization.

Each column solves ``min ||a||_1  s.t.  ||G a - e_k||_inf <= tau``.  Splitting
``a = a+ - a-`` and adding slacks gives the standard-form LP

    min 1'(a+ + a-)
    s.t. [ G -G I 0] x = tau + e_k
         [-G  G 0 I]      tau - e_k,    x >= 0,

whose all-slack basis is dual feasible.  A dense dual simplex with Bland's
rule solves it deterministically, and because only the right-hand side
depends on ``tau`` the optimal basis of one grid point warm-starts the next.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-12
FEAS_TOL = 1e-10


class Infeasible(RuntimeError):
    pass


class AllInfeasible(RuntimeError):
    pass


class DegenerateNormalizer(ZeroDivisionError):
    pass


@dataclass
class InverseCov:
    day: int
    omega: np.ndarray
    tau_used: float
    feasibility_residual: float
    l1_norm: float
    loss: float = float("nan")
    fallback: bool = False


class ColumnLP:
    """Dual simplex tableau for one CLIME column, reusable across ``tau``."""

    def __init__(self, gamma: np.ndarray, k: int):
        g = np.asarray(gamma, float)
        p = g.shape[0]
        self.p, self.k = p, k
        eye = np.eye(p)
        z = np.zeros((p, p))
        self.A = np.block([[g, -g, eye, z], [-g, g, z, eye]])
        self.cost = np.concatenate([np.ones(2 * p), np.zeros(2 * p)])
        self.basis = list(range(2 * p, 4 * p))
        # B^{-1} A and B^{-1} start as the identity-basis values
        self.tab = self.A.copy()
        self.binv = np.eye(2 * p)
        self.pivots = 0

    def _rhs(self, tau: float) -> np.ndarray:
        e = np.zeros(self.p)
        e[self.k] = 1.0
        return np.concatenate([tau + e, tau - e])

    def solve(self, tau: float, max_pivots: int = 10000) -> np.ndarray:
        if tau < 0:
            raise ValueError("tau must be >= 0")
        xb = self.binv @ self._rhs(tau)
        n = self.A.shape[1]
        for _ in range(max_pivots):
            neg = np.flatnonzero(xb < -FEAS_TOL)
            if neg.size == 0:
                break
            # Bland: leaving variable with the smallest index
            r = int(neg[np.argmin([self.basis[i] for i in neg])])
            row = self.tab[r]
            basic = np.zeros(n, bool)
            basic[self.basis] = True
            cand = np.flatnonzero((row < -PIVOT_TOL) & ~basic)
            if cand.size == 0:
                raise Infeasible(f"column {self.k} infeasible at tau={tau:g}")
            cb = self.cost[self.basis]
            red = self.cost[cand] - cb @ self.tab[:, cand]
            red = np.maximum(red, 0.0)
            ratio = red / -row[cand]
            best = ratio.min()
            # ties resolved by the smallest column index
            j = int(cand[np.flatnonzero(ratio <= best + 1e-12 * max(1.0, best))[0]])
            piv = self.tab[r, j]
            self.tab[r] /= piv
            self.binv[r] /= piv
            xb[r] /= piv
            col = self.tab[:, j].copy()
            col[r] = 0.0
            self.tab -= np.outer(col, self.tab[r])
            self.binv -= np.outer(col, self.binv[r])
            xb -= col * xb[r]
            self.basis[r] = j
            self.pivots += 1
        else:
            raise RuntimeError("dual simplex pivot limit reached")
        x = np.zeros(n)
        x[self.basis] = np.maximum(xb, 0.0)
        return x[: self.p] - x[self.p: 2 * self.p]


def clime_column(gamma_hat, k: int, tau: float) -> np.ndarray:
    """Minimal l1-norm vector with ``||gamma_hat a - e_k||_inf <= tau``."""
    return ColumnLP(gamma_hat, k).solve(tau)


def clime_columns(gamma_hat, tau: float) -> np.ndarray:
    p = np.asarray(gamma_hat).shape[0]
    return np.column_stack([clime_column(gamma_hat, k, tau) for k in range(p)])


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Keep the smaller-magnitude entry of each symmetric pair (upper entry on ties)."""
    a = np.asarray(a, float)
    up = np.triu(a)
    lo = np.triu(a.T)
    pick = np.where(np.abs(lo) < np.abs(up), lo, up)
    out = np.triu(pick, 1)
    out = out + out.T
    out[np.diag_indices_from(out)] = np.diag(a)
    return out


def likelihood_loss(omega: np.ndarray, gamma_hat: np.ndarray) -> float:
    """``<omega, gamma_hat> - logdet(omega)``; ``inf`` unless omega is PD."""
    ev = np.linalg.eigvalsh(omega)
    if ev[0] <= 0:
        return float("inf")
    return float(np.sum(omega * gamma_hat) - np.sum(np.log(ev)))


def tau_grid(p: int, n_days: int, m: float, n_points: int = 100,
             c_min: float = 1e-6, c_max: float = 10.0) -> np.ndarray:
    """``C * m^{-1/4} * sqrt(log(max(p, N)))`` over log-spaced ``C``."""
    c = np.logspace(np.log10(c_min), np.log10(c_max), n_points)
    return c * m ** -0.25 * np.sqrt(np.log(max(p, n_days)))


def _feasibility(gamma_hat, a):
    return float(np.max(np.abs(gamma_hat @ a - np.eye(a.shape[0]))))


def clime_path(gamma_hat, grid) -> list:
    """Column solutions for every ``tau`` in an ascending grid.

    Entries are ``None`` where some column is infeasible.
    """
    g = np.asarray(gamma_hat, float)
    p = g.shape[0]
    grid = np.asarray(grid, float)
    if grid.size == 0:
        raise ValueError("empty tau grid")
    if np.any(np.diff(grid) < 0):
        raise ValueError("tau grid must be ascending")
    solvers = [ColumnLP(g, k) for k in range(p)]
    out = []
    for tau in grid:
        try:
            out.append(np.column_stack([s.solve(tau) for s in solvers]))
        except Infeasible:
            out.append(None)
            # an infeasible dual ray leaves the basis valid; keep going
    return out


def tune_tau(gamma_hat, grid, day: int = 0) -> InverseCov:
    """Solve along the grid and keep the likelihood-loss minimizer.

    Non-PD candidates get infinite loss; ties within 1e-10 go to the smaller
    ``tau``.  Raises :class:`AllInfeasible` if no candidate is PD.
    """
    g = (np.asarray(gamma_hat, float) + np.asarray(gamma_hat, float).T) / 2
    grid = np.asarray(grid, float)
    best = None
    for tau, a in zip(grid, clime_path(g, grid)):
        if a is None:
            continue
        om = symmetrize(a)
        loss = likelihood_loss(om, g)
        if not np.isfinite(loss):
            continue
        if best is None or loss < best[0] - 1e-10:
            best = (loss, tau, a, om)
    if best is None:
        raise AllInfeasible(f"day {day}: no PD CLIME estimate on the grid")
    loss, tau, a, om = best
    return InverseCov(day=day, omega=om, tau_used=float(tau),
                      feasibility_residual=_feasibility(g, a),
                      l1_norm=float(np.abs(om).sum()), loss=loss)


def invert(gamma_hat, grid, day: int = 0) -> InverseCov:
    """:func:`tune_tau` with a pseudo-inverse fallback."""
    try:
        return tune_tau(gamma_hat, grid, day)
    except AllInfeasible as exc:
        log.warning("%s; falling back to the pseudo-inverse", exc)
        g = np.asarray(gamma_hat, float)
        om = np.linalg.pinv((g + g.T) / 2)
        om = (om + om.T) / 2
        return InverseCov(day=day, omega=om, tau_used=float("nan"),
                          feasibility_residual=_feasibility(g, om),
                          l1_norm=float(np.abs(om).sum()), fallback=True)


def normalize(w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(w, float)
    s = w.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s) < tol):
        raise DegenerateNormalizer("weights sum to (nearly) zero")
    return w / s


def weights_from_inverse(inv) -> tuple[np.ndarray, np.ndarray]:
    """Row sums of the inverse and their normalized version."""
    om = inv.omega if isinstance(inv, InverseCov) else np.asarray(inv, float)
    w = om @ np.ones(om.shape[0])
    return w, normalize(w)
