"""Gaussian series models, their parameters, sampling and spectral sets.

A model is ``X = A0 + sum_i A_i g_i`` with self-adjoint ``d x d`` matrices
and i.i.d. standard Gaussian ``g_i``.  Two storage layouts are supported:

* dense: an explicit ``(n, d, d)`` coefficient array;
* variance profile: a real symmetric matrix with independent centred
  Gaussian entries, given by the entry variances.  The coefficients (one per
  independent entry with nonzero variance, in row-major upper-triangular
  order) are only materialized on request.

Both layouts expose the same operations and sample identically for a given
seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import eigsh

from .errors import ValidationError
from .rng import make_rng

HERMITIAN_TOL = 1e-12
# Above this dimension the dense covariance superoperator is never built.
_SUPEROP_MAX_D = 40


def _as_hermitian(a, name, tol=HERMITIAN_TOL):
    a = np.array(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {a.shape}")
    dev = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    if dev > tol:
        raise ValidationError(f"{name} is not self-adjoint (deviation {dev:.3g})")
    return 0.5 * (a + a.conj().T)


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """Entry variances of a real symmetric matrix with independent entries.

    Attributes
    ----------
    offdiag : (d, d) ndarray
        Symmetric, nonnegative, zero diagonal; ``Var(X_ij)`` for ``i != j``.
    diag : (d,) ndarray
        ``Var(X_ii)``.
    """

    offdiag: np.ndarray
    diag: np.ndarray

    def __post_init__(self):
        w = np.array(self.offdiag, dtype=float)
        dg = np.array(self.diag, dtype=float).reshape(-1)
        if w.ndim != 2 or w.shape != (dg.size, dg.size):
            raise ValidationError("variance profile shapes do not match")
        if np.any(w < 0) or np.any(dg < 0):
            raise ValidationError("variances must be nonnegative")
        if np.max(np.abs(w - w.T), initial=0.0) > 1e-12 * max(1.0, np.max(w, initial=0.0)):
            raise ValidationError("off-diagonal variance matrix must be symmetric")
        w = 0.5 * (w + w.T)
        np.fill_diagonal(w, 0.0)
        w.setflags(write=False)
        dg.setflags(write=False)
        object.__setattr__(self, "offdiag", w)
        object.__setattr__(self, "diag", dg)

    @property
    def d(self):
        return self.diag.size

    @cached_property
    def entries(self):
        """Row-major upper-triangular entries with nonzero variance.

        Returns ``(rows, cols, std)`` arrays; ``rows <= cols``.
        """
        iu, ju = np.triu_indices(self.d)
        var = np.where(iu == ju, self.diag[iu], self.offdiag[iu, ju])
        keep = var > 0
        return iu[keep], ju[keep], np.sqrt(var[keep])

    def apply(self, m):
        """Covariance map ``M -> W o M^T + diag((W + diag D) diag M)``."""
        dm = np.diagonal(m)
        out = self.offdiag * m.T
        out[np.diag_indices(self.d)] += self.offdiag @ dm + self.diag * dm
        return out


@dataclass(frozen=True, eq=False)
class GaussianSeriesModel:
    """Self-adjoint Gaussian series ``X = A0 + sum_i A_i g_i``.

    Construct with ``GaussianSeriesModel(a0, coeffs)`` or
    :meth:`from_variance_profile`.  Instances are immutable.
    """

    a0: np.ndarray
    coeffs_dense: np.ndarray | None = None
    profile: VarianceProfile | None = field(default=None)

    def __post_init__(self):
        a0 = _as_hermitian(self.a0, "a0")
        d = a0.shape[0]
        if d < 1:
            raise ValidationError("dimension must be positive")
        if self.profile is not None:
            if self.coeffs_dense is not None:
                raise ValidationError("give either coefficients or a variance profile")
            if self.profile.d != d:
                raise ValidationError("variance profile dimension mismatch")
            coeffs = None
        else:
            c = self.coeffs_dense
            c = np.zeros((0, d, d), complex) if c is None else np.array(c, dtype=complex)
            if c.ndim == 2 and c.size == 0:
                c = c.reshape(0, d, d)
            if c.ndim != 3 or c.shape[1:] != (d, d):
                raise ValidationError(f"coefficients must have shape (n, {d}, {d}), got {c.shape}")
            if c.shape[0]:
                dev = np.max(np.abs(c - np.conj(np.swapaxes(c, 1, 2))))
                if dev > HERMITIAN_TOL:
                    raise ValidationError(f"coefficient not self-adjoint (deviation {dev:.3g})")
            coeffs = 0.5 * (c + np.conj(np.swapaxes(c, 1, 2)))
            coeffs.setflags(write=False)
        a0.setflags(write=False)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "coeffs_dense", coeffs)

    @classmethod
    def from_variance_profile(cls, a0, offdiag, diag):
        return cls(a0, None, VarianceProfile(offdiag, diag))

    @property
    def d(self) -> int:
        return self.a0.shape[0]

    @property
    def n(self) -> int:
        if self.profile is not None:
            return self.profile.entries[0].size
        return self.coeffs_dense.shape[0]

    @cached_property
    def is_real(self) -> bool:
        """True when the mean and every coefficient are real symmetric."""
        if np.any(self.a0.imag):
            return False
        return self.profile is not None or not np.any(self.coeffs_dense.imag)

    @property
    def is_profile(self) -> bool:
        return self.profile is not None

    @cached_property
    def coeffs(self) -> np.ndarray:
        """Coefficient matrices as an ``(n, d, d)`` complex array."""
        if self.profile is None:
            return self.coeffs_dense
        rows, cols, std = self.profile.entries
        out = np.zeros((rows.size, self.d, self.d), complex)
        k = np.arange(rows.size)
        out[k, rows, cols] = std
        out[k, cols, rows] = std
        out.setflags(write=False)
        return out

    @cached_property
    def _superop(self):
        # Row-major vec: vec(A M A) = (A kron A^T) vec(M).
        d, c = self.d, self.coeffs_dense
        u = c.reshape(c.shape[0], d * d)
        k = (u.T @ u).reshape(d, d, d, d)  # [(i,k),(l,j)]
        return np.ascontiguousarray(k.transpose(0, 3, 1, 2).reshape(d * d, d * d))

    def _use_superop(self):
        return self.d <= _SUPEROP_MAX_D and self.n > self.d

    def covariance(self, m):
        """Apply the covariance map without input validation."""
        if self.profile is not None:
            return self.profile.apply(m)
        if self.n == 0:
            return np.zeros_like(m, dtype=complex)
        d = self.d
        if self._use_superop():
            return (self._superop @ m.reshape(d * d)).reshape(d, d)
        c = self.coeffs_dense
        t = c @ m  # (n, d, d)
        return t.transpose(1, 0, 2).reshape(d, -1) @ c.reshape(-1, d)

    def negated(self) -> "GaussianSeriesModel":
        """The model of ``-X``; the noise law is symmetric so only A0 flips."""
        return GaussianSeriesModel(-self.a0, self.coeffs_dense, self.profile)

    def with_mean(self, a0) -> "GaussianSeriesModel":
        return GaussianSeriesModel(a0, self.coeffs_dense, self.profile)

    def materialized(self) -> "GaussianSeriesModel":
        """Dense-coefficient copy (identical law and sampling)."""
        return GaussianSeriesModel(self.a0, self.coeffs)


def covariance_map(model: GaussianSeriesModel, m) -> np.ndarray:
    """``S(M) = sum_i A_i M A_i = E[(X - EX) M (X - EX)]``."""
    m = np.asarray(m)
    if m.shape != (model.d, model.d):
        raise ValidationError(f"expected a {model.d}x{model.d} matrix, got {m.shape}")
    out = model.covariance(m.astype(complex, copy=False))
    return out


@dataclass(frozen=True)
class ModelParameters:
    sigma: float
    v: float
    sigma_star: float
    v_tilde: float


def _top_eigvec(h, v0=None):
    d = h.shape[0]
    if d <= 200:
        w, u = sla.eigh(h, subset_by_index=[d - 1, d - 1])
        return w[0], u[:, 0]
    w, u = eigsh(h, k=1, which="LA", v0=v0, tol=1e-13)
    return w[0], u[:, 0]


def sigma_star(model: GaussianSeriesModel, restarts=50, tol=1e-10, max_iter=500, seed=0):
    """Weak variance ``sup_{|u|=|w|=1} sum_i |<u, A_i w>|^2`` (square root).

    Alternating maximization: ``u`` is the top eigenvector of ``S(w w*)``
    and vice versa.  Each sweep cannot decrease the objective, so every
    restart returns a valid lower bound; the best over restarts is reported.
    """
    if model.n == 0:
        return 0.0
    d = model.d
    rng = make_rng(seed, 0xC0FFEE)
    best = 0.0
    for _ in range(restarts):
        w = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        w /= np.linalg.norm(w)
        u = None
        val_old = -np.inf
        for _ in range(max_iter):
            _, u = _top_eigvec(model.covariance(np.outer(w, w.conj())), u)
            val, w = _top_eigvec(model.covariance(np.outer(u, u.conj())), w)
            if val - val_old <= tol * max(1.0, abs(val)):
                break
            val_old = val
        best = max(best, float(val))
    return float(np.sqrt(max(best, 0.0)))


def compute_parameters(model: GaussianSeriesModel, restarts=50, seed=0) -> ModelParameters:
    """Return sigma, v, sigma_star and v_tilde = sqrt(v sigma)."""
    d = model.d
    if model.n == 0:
        return ModelParameters(0.0, 0.0, 0.0, 0.0)
    s_id = model.covariance(np.eye(d, dtype=complex))
    sigma = float(np.sqrt(max(sla.eigvalsh(0.5 * (s_id + s_id.conj().T))[-1], 0.0)))
    if model.profile is not None:
        p = model.profile
        v2 = max(2.0 * np.max(p.offdiag, initial=0.0), np.max(p.diag, initial=0.0))
    else:
        u = model.coeffs_dense.reshape(model.n, d * d)
        gram = u.conj() @ u.T if model.n <= d * d else u.T @ u.conj()
        v2 = sla.eigvalsh(0.5 * (gram + gram.conj().T))[-1]
    v = float(np.sqrt(max(v2, 0.0)))
    s_star = sigma_star(model, restarts=restarts, seed=seed)
    return ModelParameters(sigma, v, s_star, float(np.sqrt(v * sigma)))


def sample(model: GaussianSeriesModel, seed) -> np.ndarray:
    """Draw ``A0 + sum_i A_i g_i`` from the stream keyed by ``seed``."""
    if model.n == 0:
        return model.a0.copy()
    g = make_rng(seed).standard_normal(model.n)
    a0 = model.a0.real if model.is_real else model.a0
    if model.profile is not None:
        rows, cols, std = model.profile.entries
        x = np.zeros((model.d, model.d))
        x[rows, cols] = std * g
        x[cols, rows] = std * g
        return a0 + x
    c = model.coeffs_dense.real if model.is_real else model.coeffs_dense
    x = np.tensordot(g, c, axes=1)
    return 0.5 * (x + x.conj().T) + a0


# ---------------------------------------------------------------------------
# Bounded non-Gaussian summands
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RademacherEntries:
    """Independent summands ``eps_k s_k (E_rc + E_cr)`` (``s_k E_rr`` if r == c).

    Each summand has norm ``s_k``, so the family has uniform bound
    ``max_k s_k``.
    """

    rows: np.ndarray
    cols: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        r, c, s = (np.asarray(a) for a in (self.rows, self.cols, self.scales))
        if not (r.shape == c.shape == s.shape):
            raise ValidationError("rows, cols and scales must have equal length")
        object.__setattr__(self, "rows", r.astype(int))
        object.__setattr__(self, "cols", c.astype(int))
        object.__setattr__(self, "scales", s.astype(float))

    def __len__(self):
        return self.rows.size

    @property
    def bound(self):
        return float(np.max(np.abs(self.scales), initial=0.0))

    def add_sample(self, out, rng):
        vals = self.scales * rng.choice(np.array([-1.0, 1.0]), size=len(self))
        out[self.rows, self.cols] += vals
        off = self.rows != self.cols
        out[self.cols[off], self.rows[off]] += vals[off]

    def gaussian_coefficients(self, d):
        out = np.zeros((len(self), d, d), complex)
        k = np.arange(len(self))
        out[k, self.rows, self.cols] = self.scales
        out[k, self.cols, self.rows] = self.scales
        return out


@dataclass(frozen=True, eq=False)
class MatrixSummand:
    """A single summand ``Z = eps * A`` with a Rademacher sign ``eps``."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _as_hermitian(self.matrix, "summand"))

    def __len__(self):
        return 1

    @property
    def bound(self):
        return float(np.linalg.norm(self.matrix, 2))

    def add_sample(self, out, rng):
        out += rng.choice(np.array([-1.0, 1.0])) * self.matrix

    def gaussian_coefficients(self, d):
        return self.matrix[None]


@dataclass(frozen=True, eq=False)
class UniversalModel:
    """``X = Z0 + sum_i Z_i`` with independent centred bounded summands."""

    z0: np.ndarray
    summands: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "z0", _as_hermitian(self.z0, "z0"))
        object.__setattr__(self, "summands", tuple(self.summands))

    @property
    def d(self):
        return self.z0.shape[0]

    @property
    def bound(self):
        """Uniform almost-sure bound ``R`` on the summand norms."""
        return max((s.bound for s in self.summands), default=0.0)

    def gaussian_equivalent(self) -> GaussianSeriesModel:
        """The Gaussian series with the same mean and covariance."""
        if not self.summands:
            return GaussianSeriesModel(self.z0)
        coeffs = np.concatenate([s.gaussian_coefficients(self.d) for s in self.summands])
        return GaussianSeriesModel(self.z0, coeffs)


def sample_universal(model: UniversalModel, seed) -> np.ndarray:
    rng = make_rng(seed)
    out = np.array(model.z0, dtype=complex)
    for s in model.summands:
        s.add_sample(out, rng)
    return out.real.copy() if not np.any(out.imag) else out


# ---------------------------------------------------------------------------
# Spectral sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectrumSet:
    """Sorted eigenvalues (with multiplicity)."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.sort(np.asarray(self.eigenvalues, dtype=float).reshape(-1))
        if ev.size == 0:
            raise ValidationError("empty spectrum")
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    def as_intervals(self):
        return np.column_stack([self.eigenvalues, self.eigenvalues])


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Finite union of disjoint closed intervals, sorted."""

    intervals: np.ndarray

    def __post_init__(self):
        iv = np.asarray(self.intervals, dtype=float).reshape(-1, 2)
        if iv.shape[0] == 0:
            raise ValidationError("empty support")
        if np.any(iv[:, 0] > iv[:, 1]):
            raise ValidationError("interval with a > b")
        if np.any(iv[1:, 0] <= iv[:-1, 1]):
            raise ValidationError("intervals must be sorted and disjoint")
        iv.setflags(write=False)
        object.__setattr__(self, "intervals", iv)

    def __iter__(self):
        return iter(map(tuple, self.intervals))

    def __len__(self):
        return self.intervals.shape[0]

    @property
    def lower(self):
        return float(self.intervals[0, 0])

    @property
    def upper(self):
        return float(self.intervals[-1, 1])

    def as_intervals(self):
        return np.array(self.intervals)


def eigen_spectrum(matrix, tol=1e-10) -> SpectrumSet:
    """All eigenvalues of a self-adjoint matrix, residual-checked."""
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - a.conj().T), initial=0.0) > tol * scale:
        raise ValidationError("matrix is not self-adjoint")
    a = 0.5 * (a + a.conj().T)
    w, u = sla.eigh(a)
    norm = max(abs(w[0]), abs(w[-1]))
    res = np.linalg.norm(a @ u - u * w, axis=0)
    if norm > 0 and np.max(res) > 1e-8 * norm:
        raise ValidationError("eigensolver residual check failed")
    return SpectrumSet(w)


def _normalize_set(s):
    if isinstance(s, (SpectrumSet, SupportSet)):
        iv = s.as_intervals()
    else:
        iv = np.asarray(s, dtype=float)
        iv = np.column_stack([iv, iv]) if iv.ndim == 1 else iv.reshape(-1, 2)
    if iv.shape[0] == 0:
        raise ValidationError("empty set")
    iv = iv[np.argsort(iv[:, 0], kind="stable")]
    # Merge overlapping pieces so gaps are well defined.
    merged = [list(iv[0])]
    for a, b in iv[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return np.array(merged)


def _dist_to(points, iv):
    """Distance from each point to a merged sorted interval union."""
    a, b = iv[:, 0], iv[:, 1]
    k = np.searchsorted(a, points, side="right") - 1  # last interval starting <= x
    dist = np.full(points.shape, np.inf)
    has_left = k >= 0
    kl = np.clip(k, 0, None)
    dist = np.where(has_left, np.maximum(points - b[kl], 0.0), dist)
    kr = np.clip(k + 1, 0, len(a) - 1)
    has_right = k + 1 < len(a)
    dist = np.where(has_right, np.minimum(dist, a[kr] - points), dist)
    return dist


def _directed(src, dst):
    # dist(., dst) is piecewise linear; on each source interval its maximum is
    # attained at an endpoint or at the midpoint of a gap of dst.
    cands = [src[:, 0], src[:, 1]]
    mids = 0.5 * (dst[:-1, 1] + dst[1:, 0])
    if mids.size:
        j = np.searchsorted(src[:, 0], mids, side="right") - 1
        ok = (j >= 0) & (mids <= src[np.clip(j, 0, None), 1])
        cands.append(mids[ok])
    pts = np.concatenate(cands)
    return float(np.max(_dist_to(pts, dst)))


def hausdorff_distance(a, b) -> float:
    """Exact Hausdorff distance between finite unions of points/intervals."""
    ia, ib = _normalize_set(a), _normalize_set(b)
    return max(_directed(ia, ib), _directed(ib, ia))


# ---------------------------------------------------------------------------
# Rectangular models and dilation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RectangularModel:
    """``Y = B0 + sum_i B_i g_i`` with ``p x n`` coefficient matrices."""

    b0: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        b0 = np.atleast_2d(np.array(self.b0, dtype=complex))
        c = np.array(self.coeffs, dtype=complex)
        if c.size == 0:
            c = c.reshape(0, *b0.shape)
        if c.ndim != 3 or c.shape[1:] != b0.shape:
            raise ValidationError("rectangular coefficients must match the mean's shape")
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "coeffs", c)


def dilate_matrix(y) -> np.ndarray:
    """``[[0, Y], [Y*, 0]]``."""
    y = np.atleast_2d(np.asarray(y))
    p, n = y.shape
    out = np.zeros((p + n, p + n), dtype=np.result_type(y, float))
    out[:p, p:] = y
    out[p:, :p] = y.conj().T
    return out


def dilate(model: RectangularModel) -> GaussianSeriesModel:
    """Self-adjoint dilation of a rectangular Gaussian model."""
    a0 = dilate_matrix(model.b0)
    coeffs = np.array([dilate_matrix(c) for c in model.coeffs]).reshape(-1, *a0.shape)
    return GaussianSeriesModel(a0, coeffs)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _parse_complex_matrix(obj, d, name):
    arr = np.array(obj, dtype=object)
    try:
        vals = np.vectorize(lambda s: float(s), otypes=[float])(arr)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: non-numeric entry") from exc
    if vals.shape == (d * d, 2):
        vals = vals.reshape(d, d, 2)
    elif vals.shape == (d, d):
        vals = np.stack([vals, np.zeros_like(vals)], axis=-1)
    if vals.shape != (d, d, 2):
        raise ValidationError(f"{name}: expected {d}x{d} [re, im] entries, got shape {vals.shape}")
    return vals[..., 0] + 1j * vals[..., 1]


def _encode_complex_matrix(a):
    a = np.asarray(a, dtype=complex).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in a]


def model_from_dict(doc) -> GaussianSeriesModel:
    try:
        d = int(doc["d"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError("model document needs an integer 'd'") from exc
    if d < 1:
        raise ValidationError("d must be positive")
    a0 = _parse_complex_matrix(doc.get("a0", [[0, 0]] * (d * d)), d, "a0")
    if "variance_profile" in doc:
        vp = doc["variance_profile"]
        return GaussianSeriesModel.from_variance_profile(
            a0, np.array(vp["offdiag"], dtype=float), np.array(vp["diag"], dtype=float)
        )
    coeffs = [_parse_complex_matrix(c, d, f"coeffs[{i}]") for i, c in enumerate(doc.get("coeffs", []))]
    return GaussianSeriesModel(a0, np.array(coeffs).reshape(-1, d, d))


def model_to_dict(model: GaussianSeriesModel) -> dict:
    doc = {"d": model.d, "a0": _encode_complex_matrix(model.a0)}
    if model.profile is not None:
        doc["variance_profile"] = {
            "offdiag": model.profile.offdiag.tolist(),
            "diag": model.profile.diag.tolist(),
        }
    else:
        doc["coeffs"] = [_encode_complex_matrix(c) for c in model.coeffs_dense]
    return doc


def load_model(path) -> GaussianSeriesModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(doc)


def save_model(model: GaussianSeriesModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


__all__: Sequence[str] = [
    "GaussianSeriesModel",
    "VarianceProfile",
    "ModelParameters",
    "SpectrumSet",
    "SupportSet",
    "UniversalModel",
    "RademacherEntries",
    "MatrixSummand",
    "RectangularModel",
    "covariance_map",
    "compute_parameters",
    "sigma_star",
    "sample",
    "sample_universal",
    "eigen_spectrum",
    "hausdorff_distance",
    "dilate",
    "dilate_matrix",
    "model_from_dict",
    "model_to_dict",
    "load_model",
    "save_model",
]
