"""Spiked sample covariance: limiting edges and their variational forms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq, minimize_scalar

from ..errors import ValidationError
from ..rng import make_rng


@dataclass(frozen=True)
class ScovParams:
    """Covariance ``lam e1 e1* + I`` with ``p`` variables and ``n`` samples."""

    n: int
    p: int
    lam: float

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.lam < 0:
            raise ValidationError("need n, p >= 1 and lambda >= 0")

    @property
    def delta(self):
        return self.p / self.n

    @property
    def spectrum(self):
        mu = np.ones(self.p)
        mu[0] += self.lam
        return mu


@dataclass(frozen=True)
class ScovEdges:
    S: float
    H_plus: float
    H_minus: float


def scov_closed_forms(lam, delta) -> ScovEdges:
    """Limits of ``|Sigma_hat|``, ``lambda_max`` and ``lambda_min`` of ``Sigma_hat - Sigma``."""
    if lam < 0 or delta <= 0:
        raise ValidationError("need lambda >= 0 and delta > 0")
    r = np.sqrt(delta)
    s = (1 + r) ** 2 if lam <= r else (1 + lam) * (1 + delta / lam)
    if lam <= 1 + r:
        hp = delta + 2 * r
    else:
        hp = (1 + lam) / (2 * lam) * (r + np.sqrt(delta + 4 * lam)) * r
    if lam <= 1 - r:
        hm = delta - 2 * r
    else:
        hm = -2 * (1 + lam) * r / (r + np.sqrt(delta + 4 * lam))
    return ScovEdges(float(s), float(hp), float(hm))


def _sup_unit_interval(f, grid=2001, xatol=1e-13):
    """Supremum of ``f`` over ``[0, 1]``: grid scan, then bounded refinement."""
    xs = np.linspace(0.0, 1.0, grid)
    vals = np.array([f(x) for x in xs])
    i = int(np.argmax(vals))
    best = vals[i]
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    res = minimize_scalar(lambda x: -f(x), bounds=(lo, hi), method="bounded", options={"xatol": xatol})
    return max(best, -res.fun)


def _phi(u, v):
    return 2 * np.sqrt(u * v) - v if v < u else u


def scov_pi_forms(lam, delta) -> ScovEdges:
    """The edges as suprema over a mixing weight ``pi`` in ``(0, 1)``."""
    if lam < 0 or delta <= 0:
        raise ValidationError("need lambda >= 0 and delta > 0")

    def sq(pi):
        return (np.sqrt((1 - pi) * delta) + np.sqrt(1 + pi * lam)) ** 2

    s = _sup_unit_interval(sq)
    hp = _sup_unit_interval(lambda pi: sq(pi) - (1 + pi * lam))
    hm = -_sup_unit_interval(lambda pi: _phi(1 + pi * lam, (1 - pi) * delta))
    return ScovEdges(float(s), float(hp), float(hm))


# Weight on the per-coordinate variance as a function of the split parameter.
_WEIGHTS = {
    "norm": lambda a: 1.0 / (1.0 - a),
    "h_plus": lambda a: a / (1.0 - a),
    "h_minus": lambda a: a / (1.0 + a),
}


def _inner(mu, n, a, c):
    """``inf_x max_i mu_i/(n a x_i) + c mu_i`` over the open simplex."""
    top = c * mu.max()
    total = mu.sum() / (n * a)

    def excess(t):
        return np.sum(mu / (n * a * (t - c * mu))) - 1.0

    hi = top + total
    lo = top + 1e-15 * max(1.0, hi)
    if excess(lo) <= 0:
        return lo
    if excess(hi) >= 0:
        # Equal weights: the bound is attained with equality.
        return hi
    return brentq(excess, lo, hi, xtol=1e-15 * max(1.0, hi), maxiter=500)


def _outer(f, unbounded):
    """Minimize over ``a`` in ``(0, 1)``, or ``a > 0`` through ``a = s/(1-s)``."""
    to_a = (lambda s: s / (1 - s)) if unbounded else (lambda s: s)
    g = lambda s: f(to_a(s))  # noqa: E731
    ss = np.linspace(0, 1, 801)[1:-1]
    vals = np.array([g(s) for s in ss])
    i = int(np.argmin(vals))
    lo, hi = ss[max(i - 1, 0)] if i > 0 else 1e-12, ss[i + 1] if i + 1 < ss.size else 1 - 1e-12
    res = minimize_scalar(g, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    return min(float(vals[i]), float(res.fun))


@dataclass(frozen=True)
class ScovVariational:
    norm: float
    h_plus: float
    h_minus: float


def _general(mu, n):
    out = {}
    for name, c in _WEIGHTS.items():
        out[name] = _outer(lambda a, c=c: _inner(mu, n, a, c(a)), unbounded=(name == "h_minus"))
    return ScovVariational(out["norm"], out["h_plus"], -out["h_minus"])


def _rank_one(lam, n, p):
    """Two-variable form with weights ``(b, (1-b)/(p-1), ...)`` on the simplex."""
    out = {}
    for name, c in _WEIGHTS.items():
        def inner(a, c=c):
            ca = c(a)

            def f(b):
                return max((1 + lam) / (n * a * b) + (1 + lam) * ca, (p - 1) / (n * a * (1 - b)) + ca)

            res = minimize_scalar(f, bounds=(1e-15, 1 - 1e-15), method="bounded", options={"xatol": 1e-14})
            return res.fun

        out[name] = _outer(inner, unbounded=(name == "h_minus"))
    return ScovVariational(out["norm"], out["h_plus"], -out["h_minus"])


def scov_variational(mu_spectrum, n, method="auto") -> ScovVariational:
    """Free-model edges from the eigenvalues of ``Sigma`` and the sample size.

    ``method`` is ``"general"`` (full simplex), ``"rank-one"`` (spectrum must be
    ``(1 + lam, 1, ..., 1)``) or ``"auto"``.
    """
    mu = np.sort(np.asarray(mu_spectrum, dtype=float))[::-1]
    if mu.size == 0 or np.any(mu < 0) or mu[0] == 0:
        raise ValidationError("spectrum must be nonnegative and not identically zero")
    if n < 1:
        raise ValidationError("n must be positive")
    rank_one = mu.size > 1 and np.allclose(mu[1:], 1.0, rtol=0, atol=1e-14)
    if method == "rank-one" and not rank_one:
        raise ValidationError("spectrum is not a rank-one spike over the identity")
    if method == "rank-one" or (method == "auto" and rank_one):
        return _rank_one(mu[0] - 1.0, n, mu.size)
    if method not in ("auto", "general"):
        raise ValidationError(f"unknown method {method!r}")
    return _general(mu[mu > 0], n)


def scov_sample(params: ScovParams, seed) -> ScovVariational:
    """One draw of ``(|Sigma_hat|, lambda_max, lambda_min of Sigma_hat - Sigma)``."""
    x = make_rng(seed, 0x5C).standard_normal((params.p, params.n))
    x[0] *= np.sqrt(1 + params.lam)
    cov = x @ x.T / params.n
    norm = sla.eigvalsh(cov)[-1]
    err = sla.eigvalsh(cov - np.diag(params.spectrum))
    return ScovVariational(float(norm), float(err[-1]), float(err[0]))
