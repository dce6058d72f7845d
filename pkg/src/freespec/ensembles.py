"""Standard model builders: Wigner ensembles, periodic band matrices, spikes."""

import numpy as np

from .errors import ValidationError
from .model import GaussianSeriesModel, RademacherEntries, UniversalModel


def _mean(d, a0):
    return np.zeros((d, d)) if a0 is None else np.asarray(a0)


def gue_model(d, a0=None) -> GaussianSeriesModel:
    """Complex Wigner model with ``E|X_ij|^2 = 1/d``, so ``S(M) = tr(M) 1``."""
    coeffs = []
    for i in range(d):
        e = np.zeros((d, d), complex)
        e[i, i] = 1 / np.sqrt(d)
        coeffs.append(e)
    s = 1 / np.sqrt(2 * d)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d), complex)
            e[i, j] = e[j, i] = s
            coeffs.append(e)
            f = np.zeros((d, d), complex)
            f[i, j], f[j, i] = 1j * s, -1j * s
            coeffs.append(f)
    return GaussianSeriesModel(_mean(d, a0), np.array(coeffs))


def goe_model(d, a0=None) -> GaussianSeriesModel:
    """Real Wigner model with all entry variances ``1/d`` (``E G^2 = 1``)."""
    w = np.full((d, d), 1.0 / d)
    np.fill_diagonal(w, 0.0)
    return GaussianSeriesModel.from_variance_profile(_mean(d, a0), w, np.full(d, 1.0 / d))


def band_offsets(width):
    """Circular offsets of a band with ``width`` nonzeros per row.

    Odd widths include the diagonal; even widths leave it empty.
    """
    if width < 1:
        raise ValidationError("band width must be positive")
    h = width // 2
    offs = list(range(-h, h + 1))
    if width % 2 == 0:
        offs.remove(0)
    return offs


def band_mask(d, width):
    if width > d:
        raise ValidationError("band width exceeds dimension")
    mask = np.zeros((d, d), bool)
    idx = np.arange(d)
    for o in band_offsets(width):
        mask[idx, (idx + o) % d] = True
    return mask


def band_model(d, width, a0=None) -> GaussianSeriesModel:
    """Gaussian periodic band matrix with entry variance ``1/width`` on the band."""
    mask = band_mask(d, width)
    w = np.where(mask, 1.0 / width, 0.0)
    diag = np.diagonal(w).copy()
    np.fill_diagonal(w, 0.0)
    return GaussianSeriesModel.from_variance_profile(_mean(d, a0), w, diag)


def rademacher_band(d, width, a0=None) -> UniversalModel:
    """Periodic band matrix with independent entries ``+-width^{-1/2}``."""
    mask = np.triu(band_mask(d, width))
    rows, cols = np.nonzero(mask)
    scales = np.full(rows.size, 1.0 / np.sqrt(width))
    return UniversalModel(_mean(d, a0), (RademacherEntries(rows, cols, scales),))


def spike(theta, v):
    """Rank-one mean ``theta v v*`` for a (normalized) vector ``v``."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    return theta * np.outer(v, v)
