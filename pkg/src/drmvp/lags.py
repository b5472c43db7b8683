"""Lag specifications shared by the simulator and the weight model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LagSpec:
    """AR(q) or HAR lag structure.

    For ``kind="har"`` each horizon ``h`` contributes the trailing mean of the
    last ``h`` observations; for ``kind="ar"`` lag ``j`` contributes the single
    observation ``j`` days back.
    """

    kind: str = "har"
    horizons: tuple[int, ...] = (1, 5, 22)
    q: int | None = None

    def __post_init__(self):
        if self.kind not in ("har", "ar"):
            raise ValueError(f"unknown lag kind {self.kind!r}")
        if self.kind == "ar":
            if self.q is None or self.q < 1:
                raise ValueError("AR lag spec needs q >= 1")
        else:
            h = tuple(int(x) for x in self.horizons)
            if not h or min(h) < 1 or any(b <= a for a, b in zip(h, h[1:])):
                raise ValueError("HAR horizons must be strictly increasing and >= 1")
            object.__setattr__(self, "horizons", h)

    @classmethod
    def har(cls, horizons=(1, 5, 22)) -> "LagSpec":
        return cls(kind="har", horizons=tuple(horizons))

    @classmethod
    def ar(cls, q: int) -> "LagSpec":
        return cls(kind="ar", q=int(q), horizons=())

    @property
    def terms(self) -> tuple[int, ...]:
        """Horizon (HAR) or lag (AR) labels, one per feature block."""
        if self.kind == "ar":
            return tuple(range(1, self.q + 1))
        return self.horizons

    @property
    def max_lag(self) -> int:
        return max(self.terms)

    def to_dict(self) -> dict:
        if self.kind == "ar":
            return {"kind": "ar", "q": self.q}
        return {"kind": "har", "horizons": list(self.horizons)}

    @classmethod
    def from_dict(cls, d: dict | None) -> "LagSpec":
        if d is None:
            return cls()
        if d.get("kind", "har") == "ar":
            return cls.ar(d["q"])
        return cls.har(d.get("horizons", (1, 5, 22)))


def aggregate(history, spec: LagSpec) -> np.ndarray:
    """Lag terms from ``history`` (oldest first, most recent last).

    Returns an array of shape ``(len(spec.terms),) + history.shape[1:]``; the
    first axis follows ``spec.terms``.
    """
    h = np.asarray(history)
    if h.shape[0] < spec.max_lag:
        raise ValueError(f"need {spec.max_lag} past values, got {h.shape[0]}")
    if spec.kind == "ar":
        return np.stack([h[-j] for j in spec.terms])
    return np.stack([h[-k:].mean(axis=0) for k in spec.terms])


def var_coefficients(betas: dict, spec: LagSpec) -> list[np.ndarray]:
    """Unroll per-term coefficient matrices into plain VAR lag matrices."""
    p = next(iter(betas.values())).shape[0]
    out = [np.zeros((p, p)) for _ in range(spec.max_lag)]
    for t in spec.terms:
        if spec.kind == "ar":
            out[t - 1] += betas[t]
        else:
            for j in range(t):
                out[j] += betas[t] / t
    return out


def companion_radius(betas: dict, spec: LagSpec) -> float:
    """Spectral radius of the VAR companion matrix built from ``betas``."""
    mats = var_coefficients(betas, spec)
    p, L = mats[0].shape[0], len(mats)
    comp = np.zeros((p * L, p * L))
    comp[:p, :] = np.hstack(mats)
    if L > 1:
        comp[p:, :-p] = np.eye(p * (L - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))
