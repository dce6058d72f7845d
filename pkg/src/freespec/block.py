"""Anisotropic block model and its reduced variational principles.

The model is ``X = (1/d) diag(z) BB diag(z) - diag((1/d) BB 1) + G`` where
``BB`` is the block-constant expansion of a ``q x q`` matrix ``B`` and
``G`` has independent entries with variance ``(1 + 1{i=j}) BB_ij / d``.
Everything that matters for the free model lives in the algebra of
matrices ``A(M, v) = sum M_kl f_k f_l^T + sum v_k P_k``, which lets the
``d``-dimensional variational problems collapse to ``q``-dimensional ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .errors import ConvergenceError, ValidationError
from .free import LehnerOptions, LehnerProblem, LehnerSolution, solve_lehner
from .model import GaussianSeriesModel
from .rng import make_rng


def _is_irreducible(b):
    q = b.shape[0]
    if q == 1:
        return True
    adj = (b > 0) | (b.T > 0)
    seen = {0}
    stack = [0]
    while stack:
        k = stack.pop()
        for l in np.nonzero(adj[k])[0]:
            if l not in seen:
                seen.add(int(l))
                stack.append(int(l))
    return len(seen) == q


@dataclass(frozen=True, eq=False)
class BlockModelSpec:
    """Partition sizes, the ``q x q`` profile ``B`` and the signal ``z``.

    Blocks are contiguous: block ``k`` holds the coordinates
    ``sum(sizes[:k]) .. sum(sizes[:k+1]) - 1``.
    """

    block_sizes: tuple
    B: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or any(s <= 1 for s in sizes):
            raise ValidationError("every block needs at least two coordinates")
        b = np.array(self.B, dtype=float)
        q = len(sizes)
        if b.shape != (q, q):
            raise ValidationError(f"B must be {q}x{q}")
        if np.any(b < 0):
            raise ValidationError("B must be entrywise nonnegative")
        if np.max(np.abs(b - b.T)) > 1e-12 * max(1.0, np.max(b)):
            raise ValidationError("B must be symmetric")
        b = 0.5 * (b + b.T)
        if not _is_irreducible(b):
            raise ValidationError("B is reducible; split the model into irreducible blocks")
        d = sum(sizes)
        z = np.ones(d) if self.z is None else np.array(self.z, dtype=float).reshape(-1)
        if z.size != d:
            raise ValidationError(f"z must have length {d}")
        start = 0
        for s in sizes:
            if abs(np.sum(z[start:start + s] ** 2) - s) > 1e-9 * s:
                raise ValidationError("z must satisfy sum_{i in C_k} z_i^2 = |C_k| on every block")
            start += s
        b.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "z", z)

    @property
    def q(self):
        return len(self.block_sizes)

    @property
    def d(self):
        return int(sum(self.block_sizes))

    @cached_property
    def c(self):
        return np.array(self.block_sizes, dtype=float) / self.d

    @cached_property
    def labels(self):
        return np.repeat(np.arange(self.q), self.block_sizes)

    @cached_property
    def expanded_B(self):
        lab = self.labels
        return self.B[np.ix_(lab, lab)]

    @cached_property
    def features(self):
        """``d x q`` matrix with orthonormal columns ``f_k``."""
        f = np.zeros((self.d, self.q))
        f[np.arange(self.d), self.labels] = self.z
        return f / np.sqrt(np.array(self.block_sizes, dtype=float))

    @property
    def snr(self):
        ch = np.sqrt(self.c)
        return float(sla.eigvalsh(ch[:, None] * self.B * ch[None, :])[-1])

    def scaled(self, factor) -> "BlockModelSpec":
        return BlockModelSpec(self.block_sizes, factor * self.B, self.z)

    @classmethod
    def from_dict(cls, doc):
        try:
            sizes = [int(s) for s in doc["block_sizes"]]
            b = np.array(doc["B"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError("block spec needs 'block_sizes' and 'B'") from exc
        d = sum(sizes)
        zdoc = doc.get("z", "ones")
        if isinstance(zdoc, str):
            if zdoc == "ones":
                z = np.ones(d)
            elif zdoc.startswith("signs:"):
                try:
                    seed = int(zdoc.split(":", 1)[1])
                except ValueError as exc:
                    raise ValidationError(f"bad signal seed in {zdoc!r}") from exc
                z = make_rng(seed).choice(np.array([-1.0, 1.0]), size=d)
            else:
                raise ValidationError(f"unknown signal specifier {zdoc!r}")
        else:
            z = np.array(zdoc, dtype=float)
        return cls(tuple(sizes), b, z)

    def to_dict(self):
        return {"block_sizes": list(self.block_sizes), "B": self.B.tolist(), "z": self.z.tolist()}


def load_block_spec(path) -> BlockModelSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return BlockModelSpec.from_dict(doc)


def build_block_model(spec: BlockModelSpec, include_signal=True) -> GaussianSeriesModel:
    """The block model as a variance-profile Gaussian series."""
    d = spec.d
    bb = spec.expanded_B
    a0 = -np.diag(bb.sum(axis=1) / d)
    if include_signal:
        a0 = a0 + spec.z[:, None] * bb * spec.z[None, :] / d
    w = bb / d
    diag = 2.0 * np.diagonal(bb) / d
    w = w.copy()
    np.fill_diagonal(w, 0.0)
    return GaussianSeriesModel.from_variance_profile(a0, w, diag)


@dataclass(frozen=True, eq=False)
class AlgebraElement:
    """``A(M, v) = sum_kl M_kl f_k f_l^T + sum_k v_k P_k``."""

    M: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.array(self.M, dtype=complex))
        v = np.array(self.v, dtype=complex).reshape(-1)
        if m.shape != (v.size, v.size):
            raise ValidationError("M must be q x q and v of length q")
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "v", v)


def algebra_embed(spec: BlockModelSpec, elem: AlgebraElement) -> np.ndarray:
    if elem.v.size != spec.q:
        raise ValidationError("element dimension does not match the spec")
    f = spec.features
    out = f @ elem.M @ f.T
    out = out + np.diag(elem.v[spec.labels]) - (f * elem.v[None, :]) @ f.T
    return out


def mean_in_algebra(spec: BlockModelSpec, include_signal=True) -> AlgebraElement:
    """Algebra coordinates of ``EX``."""
    c = spec.c
    bc = spec.B @ c
    m = -np.diag(bc)
    if include_signal:
        ch = np.sqrt(c)
        m = m + ch[:, None] * spec.B * ch[None, :]
    return AlgebraElement(m, -bc)


def variance_map_reduced(spec: BlockModelSpec, elem: AlgebraElement) -> AlgebraElement:
    """Covariance map ``E[(X - EX) A(M, v) (X - EX)]`` in algebra coordinates."""
    if elem.v.size != spec.q:
        raise ValidationError("element dimension does not match the spec")
    b, c, d = spec.B, spec.c, spec.d
    m, v = elem.M, elem.v
    common = b @ (c * v + (np.diagonal(m) - v) / d)
    m_out = np.diag(common) + b * m.T / d
    v_out = common + v * np.diagonal(b) / d
    return AlgebraElement(m_out, v_out)


# ---------------------------------------------------------------------------
# Exact reduced Lehner problem (block-diagonal representation)
# ---------------------------------------------------------------------------


def _to_rep(elem):
    q = elem.v.size
    rep = np.zeros((2 * q, 2 * q), complex)
    rep[:q, :q] = elem.M
    rep[q:, q:] = np.diag(elem.v)
    return rep


def _from_rep(rep, q):
    return AlgebraElement(rep[:q, :q], np.diagonal(rep)[q:])


def reduced_lehner(spec: BlockModelSpec, include_signal=True, opts: LehnerOptions | None = None) -> LehnerSolution:
    """The Lehner formula restricted to the invariant algebra.

    Equals ``lehner_max(build_block_model(spec, include_signal))`` because the
    optimizer may be taken in the algebra; cost is independent of ``d``.
    """
    q = spec.q
    wts = np.zeros((2 * q, 2 * q))
    wts[:q, :q] = 1.0
    wts[np.arange(q, 2 * q), np.arange(q, 2 * q)] = np.array(spec.block_sizes) - 1.0
    support = wts > 0

    def project(x):
        x = 0.5 * (x + x.conj().T)
        return np.where(support, x, 0.0)

    def smap(rep):
        return _to_rep(variance_map_reduced(spec, _from_rep(rep, q)))

    def adjoint(x):
        safe = np.where(support, wts, 1.0)
        return np.where(support, wts * smap(np.where(support, x / safe, 0.0)), 0.0)

    a0 = _to_rep(mean_in_algebra(spec, include_signal))
    s_id = smap(np.eye(2 * q))
    scale = float(np.sqrt(max(np.max(np.abs(np.diagonal(s_id))), 1e-300)))
    prob = LehnerProblem(a0, smap, scale, weights=wts, project=project, adjoint=adjoint)
    return solve_lehner(prob, opts)


# ---------------------------------------------------------------------------
# Reduced variational principles for lambda and lambda_null
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReducedSolution:
    value: float
    v_star: np.ndarray
    kkt1_residual: float
    kkt2_value: float
    converged: bool


class _Reduced:
    """Objectives ``h1(v) = lambda_max(Q + diag(Bc(v-1)))`` and
    ``h2(v) = 1/v + B diag(c)(v - 1)`` for a fixed first-term matrix ``Q``."""

    def __init__(self, spec, shift=0.0):
        self.b = spec.B
        self.c = spec.c
        self.bc = spec.B * spec.c[None, :]
        ch = np.sqrt(spec.c)
        self.core = ch[:, None] * spec.B * ch[None, :]
        self.q_mat = ch[:, None] * (spec.B + shift) * ch[None, :]
        self.q = spec.q

    def h2(self, v):
        return 1.0 / v + self.bc @ (v - 1.0)

    def h1(self, v):
        w, u = sla.eigh(self.q_mat + np.diag(self.bc @ (v - 1.0)))
        return float(w[-1]), u[:, -1]

    def value(self, v, edge):
        h2 = float(np.max(self.h2(v)))
        return max(h2, self.h1(v)[0]) if edge else h2

    def subgradient_u(self, u, edge):
        """Subgradient with respect to ``u = log v`` of the max objective."""
        v = np.exp(u)
        h2 = self.h2(v)
        i = int(np.argmax(h2))
        g2 = self.bc[i] * v
        g2[i] -= 1.0 / v[i]
        if edge:
            h1, w = self.h1(v)
            if h1 >= h2[i]:
                return h1, (w * w) @ self.bc * v
        return float(h2[i]), g2


def _subgradient(red, edge, u0, iters=4000, step0=0.5):
    u = u0.copy()
    best_val, best_u = red.value(np.exp(u), edge), u.copy()
    for k in range(iters):
        val, g = red.subgradient_u(u, edge)
        if val < best_val:
            best_val, best_u = val, u.copy()
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        u = u - step0 / np.sqrt(k + 1.0) * g / gn
    return best_u, best_val


def _newton(fun, x0, iters=100, tol=1e-14):
    """Damped Newton on ``fun(x) -> (F, J)`` keeping the first q entries positive."""
    x = x0.copy()
    f, jac = fun(x)
    nrm = np.linalg.norm(f)
    for _ in range(iters):
        if nrm <= tol:
            break
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        alpha = 1.0
        while alpha > 1e-8:
            x_new = x + alpha * step
            if np.all(x_new[:-1] > 0):
                f_new, jac_new = fun(x_new)
                if np.linalg.norm(f_new) < nrm:
                    break
            alpha *= 0.5
        else:
            break
        x, f, jac, nrm = x_new, f_new, jac_new, np.linalg.norm(f_new)
    return x, nrm


def _bulk_kkt(red):
    def fun(x):
        v, lam = x[:-1], x[-1]
        f1 = red.h2(v) - lam
        w, u = sla.eigh(red.core - np.diag(v ** -2.0))
        f2 = w[-1]
        wv = u[:, -1]
        jac = np.zeros((red.q + 1, red.q + 1))
        jac[:-1, :-1] = red.bc - np.diag(1.0 / v**2)
        jac[:-1, -1] = -1.0
        jac[-1, :-1] = 2.0 * wv**2 / v**3
        return np.append(f1, f2), jac

    return fun


def _edge_kkt(red):
    def fun(x):
        v, lam = x[:-1], x[-1]
        f1 = red.h2(v) - lam
        h1, w = red.h1(v)
        jac = np.zeros((red.q + 1, red.q + 1))
        jac[:-1, :-1] = red.bc - np.diag(1.0 / v**2)
        jac[:-1, -1] = -1.0
        jac[-1, :-1] = (w * w) @ red.bc
        jac[-1, -1] = -1.0
        return np.append(f1, h1 - lam), jac

    return fun


def _slsqp(red, edge, v0):
    """Epigraph reformulation solved by SLSQP; used when Newton stalls."""
    q = red.q

    def cons(x):
        v, s = np.exp(x[:-1]), x[-1]
        out = s - red.h2(v)
        if edge:
            out = np.append(out, s - red.h1(v)[0])
        return out

    x0 = np.append(np.log(v0), red.value(v0, edge))
    res = minimize(lambda x: x[-1], x0, jac=lambda x: np.eye(q + 1)[-1], method="SLSQP",
                   constraints=[{"type": "ineq", "fun": cons}], options={"ftol": 1e-15, "maxiter": 500})
    return np.exp(res.x[:-1])


def _solve_bulk(red, v0=None):
    q = red.q
    u0 = np.zeros(q) if v0 is None else np.log(v0)
    u, val = _subgradient(red, False, u0)
    v = np.exp(u)
    for attempt in range(2):
        x, nrm = _newton(_bulk_kkt(red), np.append(v, np.max(red.h2(v))))
        v_n = x[:-1]
        if nrm < 1e-9 and np.all(v_n > 0) and red.value(v_n, False) <= val + 1e-6:
            return v_n
        v = _slsqp(red, False, v)
    return v


def _package(red, v, value, edge):
    h2 = red.h2(v)
    kkt1 = float(np.max(np.abs(h2 - value)))
    power = 1.0 if edge else 2.0
    kkt2 = float(sla.eigvalsh(red.q_mat - np.diag(v ** -power))[-1])
    ok = kkt1 <= 1e-7 and (kkt2 <= 1e-6 if edge else abs(kkt2) <= 1e-6)
    return ReducedSolution(float(value), v, kkt1, kkt2, bool(ok))


def reduced_lambda0(spec: BlockModelSpec, v0=None) -> ReducedSolution:
    """``lambda_null = inf_{v>0} max_i (1/v + B diag(c)(v-1))_i``."""
    red = _Reduced(spec)
    v = _solve_bulk(red, v0)
    sol = _package(red, v, float(np.max(red.h2(v))), edge=False)
    if not sol.converged:
        raise ConvergenceError("reduced bulk problem failed its first-order checks", best=sol)
    return sol


def _solve_edge(spec, shift=0.0):
    red = _Reduced(spec, shift)
    bulk = _Reduced(spec)
    v_null = _solve_bulk(bulk)
    lam_null = float(np.max(bulk.h2(v_null)))
    h1_null = red.h1(v_null)[0]
    if h1_null < lam_null - 1e-12:
        # Only the second term is active: the edge problem reduces to the bulk one.
        return red, v_null, lam_null
    u, val = _subgradient(red, True, np.log(v_null))
    v = np.exp(u)
    candidates = []
    for start in (v, v_null):
        x, nrm = _newton(_edge_kkt(red), np.append(start, red.value(start, True)))
        if nrm < 1e-9 and np.all(x[:-1] > 0):
            candidates.append((red.value(x[:-1], True), x[:-1]))
    if not candidates:
        v_s = _slsqp(red, True, v)
        x, nrm = _newton(_edge_kkt(red), np.append(v_s, red.value(v_s, True)))
        candidates.append((red.value(x[:-1], True), x[:-1]) if nrm < 1e-9 else (red.value(v_s, True), v_s))
    value, v_best = min(candidates, key=lambda t: t[0])
    if value > val + 1e-6:
        value, v_best = val, v
    return red, v_best, value


def reduced_lambda(spec: BlockModelSpec) -> ReducedSolution:
    """``lambda = inf_{v>0} max{h1(v), max_i h2_i(v)}`` (upper spectral edge)."""
    red, v, value = _solve_edge(spec)
    sol = _package(red, v, value, edge=True)
    if not sol.converged:
        raise ConvergenceError("reduced edge problem failed its first-order checks", best=sol)
    return sol


def lambda_t(spec: BlockModelSpec, t: float) -> float:
    """Edge value with ``B + t 1 1^T`` in the first term only."""
    _, _, value = _solve_edge(spec, float(t))
    return float(value)


def overlap_slope(spec: BlockModelSpec, t: float):
    """``((lambda_0 - lambda_{-t}) / t, (lambda_t - lambda_0) / t)``."""
    if not t > 0:
        raise ValidationError("t must be positive")
    l0 = lambda_t(spec, 0.0)
    return (l0 - lambda_t(spec, -t)) / t, (lambda_t(spec, t) - l0) / t


# ---------------------------------------------------------------------------
# Phase classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseReport:
    snr: float
    lambda_: float
    lambda0: float
    phase: str
    lambda0_bound: float
    error_radius: float
    perron_b: np.ndarray
    consistent: bool

    def to_dict(self):
        return {
            "snr": self.snr,
            "lambda": self.lambda_,
            "lambda0": self.lambda0,
            "phase": self.phase,
            "lambda0_bound": self.lambda0_bound,
            "error_radius": self.error_radius,
            "perron_b": [float(x) for x in self.perron_b],
            "consistent": self.consistent,
        }


def perron_vector(a, tol=1e-14, max_iter=100000):
    """Perron vector of a nonnegative irreducible matrix (sum-normalized).

    Power iteration on ``a + I``; the shift removes periodicity.
    """
    a = np.asarray(a, dtype=float)
    shifted = a + np.eye(a.shape[0])
    x = np.full(a.shape[0], 1.0 / a.shape[0])
    for _ in range(max_iter):
        y = shifted @ x
        y /= y.sum()
        if np.max(np.abs(y - x)) <= tol:
            return y
        x = y
    return x


def phase_classify(spec: BlockModelSpec) -> PhaseReport:
    snr = spec.snr
    lam = reduced_lambda(spec).value
    lam0 = reduced_lambda0(spec).value
    if abs(snr - 1.0) <= 1e-9:
        phase = "b"
        consistent = abs(lam - 1) <= 1e-6 and abs(lam0 - 1) <= 1e-6
    elif snr < 1:
        phase = "a"
        consistent = abs(lam - lam0) <= 1e-6 and lam < 1
    else:
        phase = "c"
        consistent = abs(lam - 1) <= 1e-6 and lam0 < lam
    b = perron_vector(spec.B * spec.c[None, :])
    kappa = float(np.min(b) / np.max(b))
    bound = 1.0 - kappa * (1.0 - np.sqrt(snr)) ** 2
    radius = float(np.sqrt(8.0 * np.max(spec.B.sum(axis=1)) / spec.d))
    return PhaseReport(snr, lam, lam0, phase, float(bound), radius, b, bool(consistent))


__all__ = [
    "BlockModelSpec",
    "AlgebraElement",
    "ReducedSolution",
    "PhaseReport",
    "load_block_spec",
    "build_block_model",
    "algebra_embed",
    "mean_in_algebra",
    "variance_map_reduced",
    "reduced_lehner",
    "reduced_lambda0",
    "reduced_lambda",
    "lambda_t",
    "overlap_slope",
    "phase_classify",
    "perron_vector",
]
