"""Kikuchi matrices for even-order tensor PCA detection."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError
from ..linalg import lanczos_top
from ..rng import make_rng

DEFAULT_DIM_CAP = 200_000


def binomial_table(n: int, k: int) -> np.ndarray:
    """``table[a, b] = C(a, b)`` for ``0 <= a <= n``, ``0 <= b <= k``."""
    table = np.zeros((n + 1, k + 1), dtype=np.int64)
    for a in range(n + 1):
        for b in range(min(a, k) + 1):
            table[a, b] = comb(a, b)
    return table


def colex_rank(subsets, table) -> np.ndarray:
    """Co-lex rank of sorted subsets given along the last axis."""
    s = np.asarray(subsets, dtype=np.int64)
    k = s.shape[-1]
    return table[s, np.arange(1, k + 1)].sum(axis=-1)


def colex_unrank(rank: int, k: int, n: int) -> tuple:
    """Inverse of :func:`colex_rank` for a single subset of ``range(n)``."""
    out = []
    for size in range(k, 0, -1):
        c = size - 1
        while comb(c + 1, size) <= rank:
            c += 1
        out.append(c)
        rank -= comb(c, size)
    if c >= n:
        raise ValidationError("rank out of range")
    return tuple(reversed(out))


def all_subsets(n: int, k: int) -> np.ndarray:
    """All ``k``-subsets of ``range(n)`` in co-lex order, one per row."""
    rows = [tuple(reversed(c)) for c in itertools.combinations(range(n - 1, -1, -1), k)]
    arr = np.array(rows, dtype=np.int64).reshape(-1, k)
    order = np.argsort(colex_rank(arr, binomial_table(n, k)), kind="stable")
    return arr[order]


def _check_range(n, p, ell):
    if p < 4 or p % 2:
        raise ValidationError("p must be even and at least 4")
    if not (p // 2 <= ell and 4 * ell < 3 * p):
        raise ValidationError("need p/2 <= ell < 3p/4")
    if n < ell + p // 2:
        raise ValidationError("need n >= ell + p/2")


@dataclass(frozen=True)
class KikuchiParams:
    k_star: int
    sigma_sq: int
    v_sq: int
    s1_factor: int
    r: int


def kikuchi_params(n: int, p: int, ell: int) -> KikuchiParams:
    _check_range(n, p, ell)
    h = p // 2
    k_star = comb(ell, h) * comb(n - ell, h)
    v_sq = comb(p, h) * comb(n - p, ell - h)
    return KikuchiParams(k_star, k_star, v_sq, k_star, comb(n, ell - h))


@dataclass(frozen=True)
class TensorPcaInstance:
    """``Y_U = lam * prod_{i in U} x_i + Z_U`` over ``p``-subsets ``U``.

    ``noise`` is indexed by the co-lex rank of ``U``.
    """

    n: int
    p: int
    ell: int
    lam: float
    x: np.ndarray
    noise: np.ndarray
    seed: int | None = None
    params: KikuchiParams = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", kikuchi_params(self.n, self.p, self.ell))
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        x = np.asarray(self.x, dtype=float)
        if x.shape != (self.n,) or not np.all(np.abs(x) == 1):
            raise ValidationError("x must be a sign vector of length n")
        z = np.asarray(self.noise, dtype=float)
        if z.shape != (comb(self.n, self.p),):
            raise ValidationError("noise must have one entry per p-subset")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "noise", z)

    @classmethod
    def random(cls, n, p, ell, lam, seed, noise=True):
        """Random signs; standard Gaussian noise, or the given noise array."""
        x = make_rng(seed, 0).choice([-1.0, 1.0], size=n)
        if noise is True:
            z = make_rng(seed, 1).standard_normal(comb(n, p))
        elif noise is False or noise is None:
            z = np.zeros(comb(n, p))
        else:
            z = noise
        return cls(n, p, ell, float(lam), x, z, seed)

    def to_dict(self):
        return {
            "n": self.n, "p": self.p, "ell": self.ell, "lambda": self.lam,
            "x": self.x.tolist(), "noise": self.noise.tolist(), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(int(doc["n"]), int(doc["p"]), int(doc["ell"]), float(doc["lambda"]),
                   np.asarray(doc["x"], float), np.asarray(doc["noise"], float), doc.get("seed"))


def kikuchi_pairs(n, p, ell, cap=DEFAULT_DIM_CAP):
    """Row rank, column rank and symmetric-difference rank of every nonzero.

    Each row ``S`` pairs with the ``T`` obtained by swapping ``p/2`` elements
    of ``S`` for ``p/2`` elements outside it.
    """
    params = kikuchi_params(n, p, ell)
    dim = comb(n, ell)
    if dim > cap:
        raise ValidationError(f"Kikuchi dimension {dim} exceeds the cap {cap}")
    h = p // 2
    table = binomial_table(n, max(ell, p))
    subsets = all_subsets(n, ell)
    member = np.zeros((dim, n), dtype=bool)
    member[np.arange(dim)[:, None], subsets] = True
    outside = np.nonzero(~member)[1].reshape(dim, n - ell)
    keep_pos = list(itertools.combinations(range(ell), ell - h))
    out_pos = [tuple(sorted(set(range(ell)) - set(k))) for k in keep_pos]
    in_pos = list(itertools.combinations(range(n - ell), h))
    keep_pos = np.array(keep_pos, dtype=np.int64).reshape(len(keep_pos), ell - h)
    out_pos = np.array(out_pos, dtype=np.int64)
    in_pos = np.array(in_pos, dtype=np.int64)
    kept = subsets[:, keep_pos]              # (dim, a, ell-h)
    removed = subsets[:, out_pos]            # (dim, a, h)
    added = outside[:, in_pos]               # (dim, b, h)
    a, b = len(out_pos), len(in_pos)
    kept = np.broadcast_to(kept[:, :, None, :], (dim, a, b, ell - h))
    removed = np.broadcast_to(removed[:, :, None, :], (dim, a, b, h))
    added = np.broadcast_to(added[:, None, :, :], (dim, a, b, h))
    t = np.sort(np.concatenate([kept, added], axis=-1), axis=-1)
    u = np.sort(np.concatenate([removed, added], axis=-1), axis=-1)
    rows = np.repeat(np.arange(dim, dtype=np.int64), a * b)
    cols = colex_rank(t, table).reshape(-1)
    sym = colex_rank(u, table).reshape(-1)
    assert a * b == params.k_star
    return rows, cols, sym


def kikuchi_matrix(inst: TensorPcaInstance, cap=DEFAULT_DIM_CAP) -> sp.csr_matrix:
    """Sparse ``M_{S,T} = Y_{S symdiff T}`` when ``|S symdiff T| = p``."""
    rows, cols, sym = kikuchi_pairs(inst.n, inst.p, inst.ell, cap)
    subsets = all_subsets(inst.n, inst.p)
    y = inst.lam * np.prod(inst.x[subsets], axis=1) + inst.noise
    dim = comb(inst.n, inst.ell)
    return sp.csr_matrix((y[sym], (rows, cols)), shape=(dim, dim))


@dataclass(frozen=True)
class KikuchiTest:
    statistic: float
    threshold: float
    decision: bool


def kikuchi_test(m, n, p, ell, seed=0) -> KikuchiTest:
    """Compare ``lambda_max(M / sqrt(k_star))`` with ``2 + n^(-1/5)``."""
    k_star = kikuchi_params(n, p, ell).k_star
    m = sp.csr_matrix(m)
    scale = 1.0 / np.sqrt(k_star)
    top, _ = lanczos_top(lambda v: scale * (m @ v), m.shape[0], tol=1e-8, starts=3, seed=seed)
    threshold = 2.0 + n ** -0.2
    return KikuchiTest(float(top), threshold, bool(top > threshold))


def export_coordinates(m, inst: TensorPcaInstance, path):
    """Write ``row col value`` lines after a header naming ``(n, p, ell, seed)``."""
    coo = sp.coo_matrix(m)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={inst.n} p={inst.p} ell={inst.ell} seed={inst.seed}\n")
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}\n")


def read_coordinates(path):
    """Inverse of :func:`export_coordinates`: ``(header dict, csr matrix)``."""
    with open(path, encoding="utf-8") as fh:
        header = dict(item.split("=") for item in fh.readline()[1:].split())
        data = np.loadtxt(fh, ndmin=2)
    n, ell = int(header["n"]), int(header["ell"])
    dim = comb(n, ell)
    if data.size == 0:
        return header, sp.csr_matrix((dim, dim))
    m = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(dim, dim))
    return header, m
