"""Isotropic outlier laws and eigenvector-overlap estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import ValidationError
from .model import GaussianSeriesModel, compute_parameters
from .rng import make_rng


def bbp_value(theta: float) -> float:
    """``B(theta)``: 2 below the threshold, ``theta + 1/theta`` above."""
    if theta < 0:
        raise ValidationError("theta must be nonnegative")
    return 2.0 if theta <= 1 else theta + 1.0 / theta


def bbp_overlap(theta: float) -> float:
    """Limiting squared overlap ``(1 - 1/theta^2)_+``."""
    if theta <= 1:
        return 0.0
    return 1.0 - 1.0 / theta**2


@dataclass(frozen=True)
class BbpPrediction:
    theta: float
    value: float
    error_radius: float
    rank: int
    isotropy_defect: float
    applicable: bool


def numerical_rank(a, rtol=1e-10) -> int:
    s = sla.svdvals(np.asarray(a))
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def bbp_window(model: GaussianSeriesModel, restarts=50) -> BbpPrediction:
    """Predicted top edge ``B(lambda_max(A0))`` and its error radius."""
    d = model.d
    theta = float(sla.eigvalsh(model.a0)[-1])
    r = numerical_rank(model.a0)
    s_id = model.covariance(np.eye(d, dtype=complex))
    defect = float(np.linalg.norm(s_id - np.eye(d), 2))
    s_star = compute_parameters(model, restarts=restarts).sigma_star
    radius = 2.0 * s_star * np.sqrt(r)
    applicable = s_star * np.sqrt(r) <= 1.0 and defect <= 1e-8
    return BbpPrediction(theta, bbp_value(max(theta, 0.0)), float(radius), r, defect, bool(applicable))


def srank_bound_check(model: GaussianSeriesModel, m):
    """``(sigma_*^2 r |M|, |S(M)|)`` for a self-adjoint ``M`` of rank ``r``."""
    m = np.asarray(m, dtype=complex)
    norm_m = float(np.linalg.norm(m, 2)) if m.size else 0.0
    if norm_m == 0:
        return 0.0, 0.0
    r = numerical_rank(m)
    s_star = compute_parameters(model).sigma_star
    exact = float(np.linalg.norm(model.covariance(m), 2))
    return s_star**2 * r * norm_m, exact


@dataclass(frozen=True)
class OverlapSandwich:
    lower: float
    point: float
    upper: float
    degenerate: bool

    def __iter__(self):
        return iter((self.lower, self.point, self.upper))


def _top(x):
    w, u = sla.eigh(x)
    gap = w[-1] - w[-2] if w.size > 1 else np.inf
    return w[-1], u[:, -1], gap


def perturb_overlap(x, p, t) -> OverlapSandwich:
    """Bracket ``<v_max, P v_max>`` by top-eigenvalue difference quotients."""
    if not t > 0:
        raise ValidationError("t must be positive")
    x = np.asarray(x)
    p = np.asarray(p)
    lam, v, gap = _top(x)
    point = float(np.real(np.vdot(v, p @ v)))
    lower = (lam - sla.eigvalsh(x - t * p)[-1]) / t
    upper = (sla.eigvalsh(x + t * p)[-1] - lam) / t
    return OverlapSandwich(float(lower), point, float(upper), bool(gap < 1e-12))


@dataclass(frozen=True)
class OverlapEstimate:
    mean: float
    std: float
    overlaps: np.ndarray
    center: float
    half_width: float
    max_deviation: float
    degenerate_trials: int

    @property
    def band(self):
        return self.center - self.half_width, self.center + self.half_width


def three_point_overlap(sampler: Callable, theta, delta, t, trials, seed) -> OverlapEstimate:
    """Overlap with the top eigenspace of the mean, with its theoretical band.

    ``sampler(rng)`` returns one draw ``(X, EX)``.  For each draw the
    matrices ``X + s P`` with ``s`` in ``{0, t, -t}`` and
    ``P = 1_{(theta - delta, theta]}(EX)`` are evaluated; ``epsilon`` is the
    largest deviation of their top eigenvalues from ``B(lambda_max(EX + s P))``.
    """
    if not 0 < t <= delta:
        raise ValidationError("need 0 < t <= delta")
    overlaps = np.empty(trials)
    eps = 0.0
    degenerate = 0
    for k in range(trials):
        x, ex = sampler(make_rng(seed, k))
        w, u = sla.eigh(ex)
        # Rounding can push the top eigenvalue of EX just past theta.
        sel = (w > theta - delta) & (w <= theta + 1e-10 * max(1.0, abs(theta)))
        p = u[:, sel] @ u[:, sel].conj().T
        sw = perturb_overlap(x, p, t)
        overlaps[k] = sw.point
        degenerate += sw.degenerate
        for s in (0.0, t, -t):
            top = sla.eigvalsh(x + s * p)[-1]
            ref = bbp_value(max(float(sla.eigvalsh(ex + s * p)[-1]), 0.0))
            eps = max(eps, abs(top - ref))
    center = bbp_overlap(theta)
    return OverlapEstimate(
        float(overlaps.mean()),
        float(overlaps.std(ddof=1)) if trials > 1 else 0.0,
        overlaps,
        center,
        t + 2 * eps / t,
        eps,
        degenerate,
    )


def low_rank_split(a, r):
    """Keep the ``r`` eigenpairs of largest modulus; return the tail norm too."""
    a = np.asarray(a)
    d = a.shape[0]
    if not 0 <= r <= d:
        raise ValidationError("rank must lie in [0, d]")
    w, u = sla.eigh(a)
    order = np.argsort(-np.abs(w), kind="stable")
    keep = order[:r]
    a_r = (u[:, keep] * w[keep]) @ u[:, keep].conj().T
    tail = float(np.abs(w[order[r]])) if r < d else 0.0
    return a_r, tail


__all__ = [
    "bbp_value",
    "bbp_overlap",
    "BbpPrediction",
    "bbp_window",
    "numerical_rank",
    "srank_bound_check",
    "OverlapSandwich",
    "perturb_overlap",
    "OverlapEstimate",
    "three_point_overlap",
    "low_rank_split",
]
