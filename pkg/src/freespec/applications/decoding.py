"""Decoding node labels from noisy edge parities on a regular graph."""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError
from ..rng import derive_seed, make_rng


def circulant_graph(d: int, k: int) -> sp.csr_matrix:
    """``k``-regular circulant graph joining vertices at cyclic distance ``<= k/2``.

    Odd ``k`` needs even ``d`` and adds the antipodal edge.
    """
    if not 0 <= k < d:
        raise ValidationError("need 0 <= k < d")
    if k % 2 and d % 2:
        raise ValidationError("odd degree needs an even number of vertices")
    idx = np.arange(d)
    a = sp.lil_matrix((d, d))
    for s in range(1, k // 2 + 1):
        a[idx, (idx + s) % d] = 1
        a[idx, (idx - s) % d] = 1
    if k % 2:
        a[idx, (idx + d // 2) % d] = 1
    return a.tocsr()


def random_regular_graph(d: int, k: int, seed) -> sp.csr_matrix:
    """Uniform simple ``k``-regular graph on ``d`` vertices."""
    if k * d % 2:
        raise ValidationError("k * d must be even")
    g = nx.random_regular_graph(k, d, seed=derive_seed(seed, 0x6A))
    return sp.csr_matrix(nx.to_scipy_sparse_array(g, nodelist=range(d), dtype=float))


def theta_prime(p: float, k: int) -> float:
    """Normalized signal strength ``sqrt(k)(1-2p) / sqrt(4p(1-p))``."""
    if not 0 <= p <= 0.5:
        raise ValidationError("flip probability must lie in [0, 1/2]")
    if p == 0:
        return float("inf")
    return float(np.sqrt(k) * (1 - 2 * p) / np.sqrt(4 * p * (1 - p)))


def flip_probability_for(theta: float, k: int) -> float:
    """Flip probability giving normalized strength ``theta`` at degree ``k``."""
    if theta < 0:
        raise ValidationError("theta must be nonnegative")
    s = theta / np.sqrt(k + theta**2)
    return float((1 - s) / 2)


@dataclass(frozen=True)
class GraphDecodingInstance:
    adjacency: sp.csr_matrix
    p: float
    x: np.ndarray
    seed: int

    def __post_init__(self):
        a = sp.csr_matrix(self.adjacency, dtype=float)
        if a.shape[0] != a.shape[1] or (a - a.T).nnz or a.diagonal().any():
            raise ValidationError("adjacency must be symmetric with empty diagonal")
        deg = np.asarray(a.sum(axis=1)).ravel()
        if deg.size and not np.all(deg == deg[0]):
            raise ValidationError("graph must be regular")
        if not 0 <= self.p <= 0.5:
            raise ValidationError("flip probability must lie in [0, 1/2]")
        x = np.asarray(self.x, dtype=float)
        if x.shape != (a.shape[0],) or not np.all(np.abs(x) == 1):
            raise ValidationError("labels must be signs")
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "x", x)

    @property
    def d(self):
        return self.adjacency.shape[0]

    @property
    def k(self):
        return int(round(self.adjacency[0].sum())) if self.d else 0

    @classmethod
    def random(cls, d, k, p, seed, graph="random-regular"):
        if graph == "random-regular":
            a = random_regular_graph(d, k, seed)
        elif graph == "circulant":
            a = circulant_graph(d, k)
        else:
            raise ValidationError(f"unknown graph kind {graph!r}")
        x = make_rng(seed, 0xD0).choice([-1.0, 1.0], size=d)
        return cls(a, p, x, seed)


@dataclass(frozen=True)
class DecodingMatrices:
    y: np.ndarray
    y_prime: np.ndarray | None
    mean_prime: np.ndarray | None
    theta_prime: float
    infinite: bool


def decode_build(inst: GraphDecodingInstance) -> DecodingMatrices:
    """Observed parities ``Y`` and the unit-variance rescaling ``Y'``.

    ``Y_ij = x_i x_j xi_ij`` on edges with ``xi_ij = -1`` with probability
    ``p``.  For ``p = 0`` the rescaling is undefined; ``theta_prime`` is then
    infinite and ``Y'`` is omitted.
    """
    d, k, p = inst.d, inst.k, inst.p
    rng = make_rng(inst.seed, 0xD1)
    upper = sp.triu(inst.adjacency, k=1).tocoo()
    flips = np.where(rng.random(upper.nnz) < p, -1.0, 1.0)
    vals = inst.x[upper.row] * inst.x[upper.col] * flips
    y = np.zeros((d, d))
    y[upper.row, upper.col] = vals
    y[upper.col, upper.row] = vals
    tp = theta_prime(p, k)
    if p == 0:
        return DecodingMatrices(y, None, None, tp, True)
    scale = 1.0 / np.sqrt(4 * k * p * (1 - p))
    mean = tp * (inst.x[:, None] * inst.adjacency.toarray() * inst.x[None, :]) / k
    return DecodingMatrices(y, y * scale, mean, tp, False)


def decode_round(vec, epsilon: float, seed) -> np.ndarray:
    """Randomized rounding of a unit vector to signs.

    Coordinate ``i`` is ``+1`` with probability ``(1 + m_i)/2`` where
    ``m_i = v_i sqrt(d)/c`` if ``|v_i| sqrt(d) <= c`` and 0 otherwise, with
    ``c = 2/sqrt(epsilon)``.
    """
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    v = np.real(np.asarray(vec, dtype=complex))
    d = v.size
    c = 2.0 / np.sqrt(epsilon)
    w = v * np.sqrt(d)
    m = np.where(np.abs(w) <= c, w / c, 0.0)
    u = make_rng(seed, 0xD2).random(d)
    return np.where(u < (1 + m) / 2, 1.0, -1.0)
