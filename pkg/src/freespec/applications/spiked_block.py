"""Anisotropic spiked matrix with block-constant noise variances."""

from __future__ import annotations

import numpy as np

from ..block import BlockModelSpec
from ..errors import ValidationError
from ..rng import make_rng


def spiked_block_build(delta, block_sizes, x, seed):
    """``(X, X_null, snr)`` for noise variances ``Delta`` on blocks.

    ``X~ = x x*/d + H`` with ``H_ij ~ N(0, (1 + [i=j]) Delta_ij / d)``, then
    ``X = (1/Delta) * X~ - diag((1/(d Delta)) 1)`` entrywise.  ``X_null`` uses
    the same noise with ``x = 0``.  ``snr`` is that of the block model with
    ``B = 1/Delta`` and signal ``x``.
    """
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    if np.any(delta <= 0):
        raise ValidationError("noise variances must be positive")
    spec = BlockModelSpec(block_sizes, 1.0 / delta, x)
    d = spec.d
    labels = spec.labels
    full = delta[np.ix_(labels, labels)]
    h = make_rng(seed, 0xB5).standard_normal((d, d))
    h = np.triu(h) + np.triu(h, 1).T
    h *= np.sqrt((1 + np.eye(d)) * full / d)
    inv = 1.0 / full
    comp = np.diag(inv.sum(axis=1) / d)
    z = spec.z
    x_null = inv * h - comp
    x_full = inv * (np.outer(z, z) / d + h) - comp
    return x_full, x_null, spec.snr
