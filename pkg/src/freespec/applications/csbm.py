"""Gaussian contextual stochastic block model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from ..errors import ValidationError
from ..rng import make_rng

DENSE_LIMIT = 400


@dataclass(frozen=True)
class CsbmInstance:
    """Graph ``A = (lam/n) v v* + G`` and features ``Y = sqrt(mu/n) u v* + H``."""

    n: int
    p: int
    lam: float
    mu: float
    v: np.ndarray
    seed: int

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValidationError("n and p must be positive")
        if self.lam < 0 or self.mu < 0:
            raise ValidationError("lambda and mu must be nonnegative")
        v = np.asarray(self.v, dtype=float)
        if v.shape != (self.n,) or not np.all(np.abs(v) == 1):
            raise ValidationError("v must be a sign vector of length n")
        object.__setattr__(self, "v", v)

    @property
    def gamma(self):
        return self.n / self.p

    @classmethod
    def random(cls, n, p, lam, mu, seed):
        return cls(n, p, float(lam), float(mu), make_rng(seed, 0xC0).choice([-1.0, 1.0], size=n), seed)


def csbm_build(inst: CsbmInstance):
    """``(A, Y, X_hat)`` with ``X_hat`` the symmetric ``(n+p)``-square block matrix

    ``[[lam A - (lam^2 + mu p/n) I, sqrt(mu p/n) Y*], [sqrt(mu p/n) Y, -mu I]]``.
    """
    n, p, lam, mu = inst.n, inst.p, inst.lam, inst.mu
    rng = make_rng(inst.seed, 0xC1)
    g = rng.standard_normal((n, n)) / np.sqrt(n)
    g = np.triu(g) + np.triu(g, 1).T
    g[np.diag_indices(n)] *= np.sqrt(2.0)
    a = (lam / n) * np.outer(inst.v, inst.v) + g
    u = rng.standard_normal(p) / np.sqrt(p)
    y = np.sqrt(mu / n) * np.outer(u, inst.v) + rng.standard_normal((p, n)) / np.sqrt(p)
    c = np.sqrt(mu * p / n)
    x = np.empty((n + p, n + p))
    x[:n, :n] = lam * a
    x[np.arange(n), np.arange(n)] -= lam**2 + mu * p / n
    x[:n, n:] = c * y.T
    x[n:, :n] = c * y
    x[n:, n:] = 0.0
    x[np.arange(n, n + p), np.arange(n, n + p)] = -mu
    return a, y, x


@dataclass(frozen=True)
class CsbmSnr:
    snr: float
    supercritical: bool


def csbm_snr(lam, mu, gamma) -> CsbmSnr:
    if lam < 0 or mu < 0 or gamma <= 0:
        raise ValidationError("need lam, mu >= 0 and gamma > 0")
    snr = 0.5 * (lam**2 + np.sqrt(lam**4 + 4 * mu**2 / gamma))
    return CsbmSnr(float(snr), bool(lam**2 + mu**2 / gamma > 1))


@dataclass(frozen=True)
class CsbmEstimate:
    v_hat: np.ndarray
    eigenvalue: float
    gap: float
    degenerate: bool


def csbm_estimate(x_hat, n, gap_tol=1e-12, seed=0) -> CsbmEstimate:
    """First ``n`` coordinates of the top unit eigenvector of ``X_hat``."""
    x_hat = np.asarray(x_hat)
    dim = x_hat.shape[0]
    if not 0 < n <= dim:
        raise ValidationError("need 0 < n <= dim")
    if dim <= DENSE_LIMIT or not np.any(x_hat):
        w, u = sla.eigh(x_hat)
        w, u = w[-2:], u[:, -2:]
    else:
        v0 = make_rng(seed, 0xC2).standard_normal(dim)
        w, u = spla.eigsh(x_hat, k=2, which="LA", v0=v0, tol=1e-12)
        order = np.argsort(w)
        w, u = w[order], u[:, order]
    top = u[:, -1]
    gap = float(w[-1] - w[-2]) if w.size > 1 else float("inf")
    return CsbmEstimate(top[:n].copy(), float(w[-1]), gap, bool(gap <= gap_tol * max(1.0, abs(w[-1]))))


def csbm_overlap(v, v_hat) -> float:
    """``(1/n) <v, v_hat>^2``."""
    return float(np.dot(v, v_hat) ** 2 / len(v))
