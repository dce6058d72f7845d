"""Deterministic free model: spectral edges, density, support and moments.

``X_free = A0 (x) 1 + sum_i A_i (x) s_i`` with a free semicircular family.

* :func:`lehner_max` evaluates ``inf_{M > 0} lambda_max(A0 + M^-1 + S(M))``.
* :func:`mde_resolvent` solves ``G = (z - A0 - S(G))^-1`` for ``Im z > 0``.
* :func:`free_density`, :func:`free_support` and :func:`free_moment` are
  built on top of the resolvent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.integrate import quad
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import ConvergenceError, ValidationError
from .model import GaussianSeriesModel, SupportSet, compute_parameters

# ---------------------------------------------------------------------------
# Lehner variational formula
# ---------------------------------------------------------------------------


@dataclass
class LehnerOptions:
    """Solver settings.

    ``tol`` is the width of the final certified bracket around the optimum.
    The smoothing stage runs ``smoothing_steps`` gradient steps at each
    temperature in ``temperatures`` (relative to the model scale).
    """

    tol: float = 1e-8
    max_iter: int = 200
    temperatures: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    smoothing_steps: int = 30
    newton_max_iter: int = 200
    cg_max_iter: int = 2000


@dataclass(frozen=True, eq=False)
class LehnerSolution:
    value: float
    minimizer: np.ndarray
    iterations: int
    objective_residual: float
    kkt_residual: float
    lower_bound: float = float("nan")
    history: tuple = ()

    def to_dict(self):
        m = np.asarray(self.minimizer, dtype=complex)
        return {
            "value": self.value,
            "lower_bound": self.lower_bound,
            "iterations": self.iterations,
            "objective_residual": self.objective_residual,
            "kkt_residual": self.kkt_residual,
            "minimizer": [[[float(z.real), float(z.imag)] for z in row] for row in m],
        }


def _herm(a):
    return 0.5 * (a + a.conj().T)


@dataclass
class LehnerProblem:
    """``inf lambda_max(a0 + M^-1 + smap(M))`` over PD ``M`` in a subspace.

    The subspace, its inner product and the projection onto it are pluggable
    so the same code handles full models and reduced block representations.
    ``weights`` defines ``<X, Y> = Re sum w_ij conj(X_ij) Y_ij`` (``None``
    means the Hilbert-Schmidt product).  ``smap`` must be self-adjoint and
    positivity preserving for that product; ``adjoint`` is its adjoint in the
    plain Hilbert-Schmidt product (defaults to ``smap``).
    """

    a0: np.ndarray
    smap: Callable
    scale: float
    weights: np.ndarray | None = None
    project: Callable | None = None
    adjoint: Callable | None = None

    def __post_init__(self):
        self.a0 = _herm(np.asarray(self.a0, dtype=complex))
        self.k = self.a0.shape[0]
        self.eye = np.eye(self.k)
        if self.project is None:
            self.project = _herm
        if self.adjoint is None:
            self.adjoint = self.smap

    def inner(self, x, y):
        if self.weights is None:
            return float(np.vdot(x, y).real)
        return float(np.sum(self.weights * (x.conj() * y)).real)

    def norm(self, x):
        return np.sqrt(max(self.inner(x, x), 0.0))

    def S(self, m):
        return self.project(self.smap(m))

    def objective_matrix(self, m):
        return _herm(self.a0 + np.linalg.inv(m) + self.S(m))

    def objective(self, m):
        return float(sla.eigvalsh(self.objective_matrix(m))[-1])


def _expm_h(h):
    w, v = sla.eigh(h)
    return (v * np.exp(w)) @ v.conj().T, w, v


def _dexp(w, v, e):
    """Derivative of the matrix exponential at ``V diag(w) V*`` along ``e``."""
    diff = w[:, None] - w[None, :]
    ew = np.exp(w)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(np.abs(diff) > 1e-12, ew[None, :] * np.expm1(diff) / diff, ew[:, None])
    return v @ (gamma * (v.conj().T @ e @ v)) @ v.conj().T


def _smoothed(prob, h, beta):
    m, w, v = _expm_h(h)
    minv = (v * np.exp(-w)) @ v.conj().T
    y = _herm(prob.a0 + minv + prob.S(m))
    lam, u = sla.eigh(y)
    top = lam[-1]
    p = np.exp((lam - top) / beta)
    f = top + beta * np.log(p.sum())
    return f, top, (m, w, v, u, p / p.sum())


def _smoothed_grad(prob, state):
    m, w, v, u, wts = state
    p = (u * wts) @ u.conj().T
    g = -_dexp(-w, v, p) + _dexp(w, v, prob.adjoint(p))
    return prob.project(_herm(g))


def _smoothing_stage(prob, h, opts, history):
    """Gradient descent on log-sum-exp smoothings of the objective."""
    best_val, best_m = np.inf, None
    steps = 0
    for tau in opts.temperatures:
        beta = tau * prob.scale
        f, top, state = _smoothed(prob, h, beta)
        t = 1.0 / max(prob.scale, 1e-300)
        for _ in range(opts.smoothing_steps):
            g = _smoothed_grad(prob, state)
            gn2 = float(np.vdot(g, g).real)
            if gn2 <= 1e-28:
                break
            t *= 2.0
            while True:
                h_new = h - t * g
                f_new, top_new, state_new = _smoothed(prob, h_new, beta)
                if f_new <= f - 1e-4 * t * gn2 or t < 1e-16:
                    break
                t *= 0.5
            if not f_new < f:
                break
            h, f, top, state = h_new, f_new, top_new, state_new
            steps += 1
            if top < best_val:
                best_val, best_m = top, state[0]
            history.append(best_val)
        if top < best_val:
            best_val, best_m = top, state[0]
    return best_m, best_val, steps


_FEASIBLE, _INFEASIBLE, _UNDECIDED = "feasible", "infeasible", "undecided"


def _pcg(prob, apply_l, b, precond, rtol, maxit):
    """Preconditioned CG; flags nonpositive curvature."""
    x = np.zeros_like(b)
    r = b.copy()
    zr = precond(r)
    p = zr.copy()
    rz = prob.inner(r, zr)
    bnorm = prob.norm(b)
    if bnorm == 0:
        return x, True
    for _ in range(maxit):
        lp = apply_l(p)
        plp = prob.inner(p, lp)
        if not plp > 0:
            return x, False
        alpha = rz / plp
        x = x + alpha * p
        r = r - alpha * lp
        if prob.norm(r) <= rtol * bnorm:
            return x, True
        zr = precond(r)
        rz_new = prob.inner(r, zr)
        p = zr + (rz_new / rz) * p
        rz = rz_new
    return x, True


def _newton_feasibility(prob, z, m0, opts, target):
    """Monotone Newton for ``M^-1 + S(M) + a0 = z``, started below the root.

    Returns ``(status, M, value)``.  ``value = objective(M)`` is an exact upper
    bound for the infimum whenever ``M`` is positive definite.
    """
    m = m0
    best = (np.inf, None)
    for _ in range(opts.newton_max_iter):
        try:
            c = sla.cholesky(_herm(m), lower=True)
        except sla.LinAlgError:
            return _INFEASIBLE, None, best
        minv = sla.cho_solve((c, True), prob.eye)
        y = _herm(prob.a0 + minv + prob.S(m))
        lam = sla.eigvalsh(y)
        val = float(lam[-1])
        if val < best[0]:
            best = (val, m)
        if val - z <= target:
            return _FEASIBLE, m, best

        def apply_l(d, minv=minv):
            return prob.project(_herm(minv @ d @ minv)) - prob.S(d)

        def precond(r, m=m):
            return prob.project(_herm(m @ r @ m))

        rhs = y - z * prob.eye
        delta, ok = _pcg(prob, apply_l, rhs, precond, 1e-10, opts.cg_max_iter)
        if not ok:
            return _INFEASIBLE, None, best
        dl = sla.eigvalsh(_herm(delta))
        if dl[0] < -1e-6 * max(abs(dl[-1]), 1e-300):
            # A non-monotone step means the linearization lost definiteness.
            return _INFEASIBLE, None, best
        m = m + delta
        if not np.all(np.isfinite(m)) or np.linalg.norm(m) > 1e14 / max(prob.scale, 1e-300):
            return _INFEASIBLE, None, best
    return _UNDECIDED, m, best


def solve_lehner(prob: LehnerProblem, opts: LehnerOptions | None = None, smoothing=True) -> LehnerSolution:
    """Minimize the Lehner objective; certified by bisection on the level."""
    opts = opts or LehnerOptions()
    history: list = []
    a_top = float(sla.eigvalsh(prob.a0)[-1])
    s_top = float(sla.eigvalsh(_herm(prob.S(prob.eye)))[-1])
    if s_top <= 0:
        raise ValidationError("covariance map vanishes; the model is deterministic")
    m_init = prob.eye / np.sqrt(s_top)
    best_val, best_m = prob.objective(m_init), m_init
    history.append(best_val)
    steps = 0
    if smoothing:
        h0 = prob.project(_herm(-0.5 * np.log(s_top) * prob.eye))
        m_s, v_s, steps = _smoothing_stage(prob, h0, opts, history)
        if m_s is not None and v_s < best_val:
            best_val, best_m = v_s, m_s

    lo, hi = a_top, best_val
    target = 0.05 * opts.tol
    # Seed the warm start with the minimal solution at the current upper level.
    m_hi = None
    z = hi
    for _ in range(60):
        status, m, (bv, bm) = _newton_feasibility(prob, z, np.linalg.inv(z * prob.eye - prob.a0), opts, target)
        if bv < best_val:
            best_val, best_m = bv, bm
        if status == _FEASIBLE:
            m_hi = m
            break
        z = z + max(opts.tol, 1e-3 * (z - a_top))
    if m_hi is None:
        raise ConvergenceError("could not certify an upper level for the Lehner problem",
                               best=_solution(prob, best_m, best_val, lo, steps, history))
    hi = best_val
    history.append(best_val)
    it = 0
    while hi - lo > opts.tol:
        if it >= opts.max_iter:
            raise ConvergenceError("Lehner bisection did not close the bracket",
                                   best=_solution(prob, best_m, best_val, lo, steps + it, history))
        it += 1
        mid = 0.5 * (lo + hi)
        status, m, (bv, bm) = _newton_feasibility(prob, mid, m_hi, opts, target)
        if bv < best_val:
            best_val, best_m = bv, bm
        if status == _FEASIBLE:
            m_hi = m
            hi = best_val
        else:
            lo = mid
        history.append(best_val)
    return _solution(prob, best_m, best_val, lo, steps + it, history)


def _solution(prob, m, value, lo, iterations, history):
    y = prob.objective_matrix(m)
    kkt = prob.norm(y - value * prob.eye)
    return LehnerSolution(
        value=float(value),
        minimizer=_herm(m),
        iterations=int(iterations),
        objective_residual=float(max(value - lo, 0.0)),
        kkt_residual=float(kkt),
        lower_bound=float(lo),
        history=tuple(float(h) for h in history),
    )


def _model_scale(model):
    s = np.sqrt(max(float(sla.eigvalsh(_herm(model.covariance(np.eye(model.d, dtype=complex))))[-1]), 0.0))
    return s


def lehner_objective(model: GaussianSeriesModel, m) -> float:
    """``lambda_max(A0 + M^-1 + S(M))``."""
    m = np.asarray(m, dtype=complex)
    return float(sla.eigvalsh(_herm(model.a0 + np.linalg.inv(m) + model.covariance(m)))[-1])


def lehner_max(model: GaussianSeriesModel, opts: LehnerOptions | None = None) -> LehnerSolution:
    """Upper spectral edge of the free model."""
    if model.n == 0:
        raise ValidationError("lehner_max needs at least one coefficient")
    scale = _model_scale(model)
    prob = LehnerProblem(model.a0, model.covariance, scale)
    return solve_lehner(prob, opts)


def lehner_min(model: GaussianSeriesModel, opts: LehnerOptions | None = None) -> LehnerSolution:
    """Lower spectral edge, via the negated model."""
    sol = lehner_max(model.negated(), opts)
    return LehnerSolution(
        value=-sol.value,
        minimizer=sol.minimizer,
        iterations=sol.iterations,
        objective_residual=sol.objective_residual,
        kkt_residual=sol.kkt_residual,
        lower_bound=-sol.lower_bound,
        history=tuple(-h for h in sol.history),
    )


# ---------------------------------------------------------------------------
# Matrix Dyson equation
# ---------------------------------------------------------------------------


@dataclass
class MdeOptions:
    tol: float = 1e-10
    omega: float = 0.5
    fixed_point_iter: int = 400
    newton_max_iter: int = 60
    gmres_tol: float = 1e-12


class _Mde:
    """Resolvent solver with a warm-startable Newton step."""

    def __init__(self, model: GaussianSeriesModel, opts: MdeOptions):
        self.model = model
        self.opts = opts
        self.d = model.d
        a0 = model.a0
        self.vector = model.is_profile and not np.any(a0 - np.diag(np.diagonal(a0)))
        if self.vector:
            p = model.profile
            self.vmat = p.offdiag + np.diag(p.diag)
            self.a = np.diagonal(a0).real.copy()
        self.scale = _model_scale(model) if model.n else 1.0
        if self.scale == 0:
            self.scale = 1.0

    # -- maps in either representation -------------------------------------
    def _k(self, g, z):
        if self.vector:
            return 1.0 / (z - self.a - self.vmat @ g)
        return np.linalg.inv(z * np.eye(self.d) - self.model.a0 - self.model.covariance(g))

    def residual(self, g, z):
        k = self._k(g, z)
        return float(np.linalg.norm(g - k)), k

    def _newton_step(self, g, k):
        rhs = k - g
        if self.vector:
            jac = np.eye(self.d) - (k * k)[:, None] * self.vmat
            return np.linalg.solve(jac, rhs)
        d = self.d
        if d <= 16:
            if not hasattr(self, "_sop"):
                eye = np.eye(d * d, dtype=complex)
                self._sop = np.stack([self.model.covariance(e.reshape(d, d)).reshape(-1) for e in eye], axis=1)
            jac = np.eye(d * d) - np.kron(k, k.T) @ self._sop
            return np.linalg.solve(jac, rhs.reshape(-1)).reshape(d, d)
        cov = self.model.covariance

        def mv(x):
            x = x.reshape(d, d)
            return (x - k @ cov(x) @ k).reshape(-1)

        op = LinearOperator((d * d, d * d), matvec=mv, dtype=complex)
        b = rhs.reshape(-1)
        x, info = gmres(op, b, rtol=self.opts.gmres_tol, atol=0.0, restart=min(d * d, 200), maxiter=20)
        return x.reshape(d, d)

    def _im_ok(self, g):
        if self.vector:
            return bool(np.all(g.imag <= 1e-10 * np.max(np.abs(g))))
        im = (g - g.conj().T) / 2j
        return float(sla.eigvalsh(im)[-1]) <= 1e-10 * max(1.0, np.linalg.norm(g, 2))

    def newton(self, g, z):
        tol = self.opts.tol
        res, k = self.residual(g, z)
        for _ in range(self.opts.newton_max_iter):
            if res <= tol:
                return g, res, self._im_ok(g)
            try:
                delta = self._newton_step(g, k)
            except np.linalg.LinAlgError:
                return g, res, False
            alpha = 1.0
            while alpha > 1e-4:
                g_new = g + alpha * delta
                try:
                    res_new, k_new = self.residual(g_new, z)
                except np.linalg.LinAlgError:
                    res_new = np.inf
                if res_new < res:
                    break
                alpha *= 0.5
            else:
                return g, res, False
            g, res, k = g_new, res_new, k_new
        return g, res, res <= tol and self._im_ok(g)

    def fixed_point(self, g, z, iters):
        omega = self.opts.omega
        res, k = self.residual(g, z)
        for _ in range(iters):
            if res <= 1e-6 / self.scale:
                break
            g_new = (1 - omega) * g + omega * k
            res_new, k_new = self.residual(g_new, z)
            if res_new > res:
                omega *= 0.5
                if omega < 1e-6:
                    break
                continue
            g, res, k = g_new, res_new, k_new
        return g, res

    def initial(self, z):
        if self.vector:
            return np.full(self.d, 1.0 / z, dtype=complex)
        return np.eye(self.d, dtype=complex) / z

    def solve(self, z, g0=None):
        if g0 is not None:
            g, res, ok = self.newton(g0, z)
            if ok:
                return g, res
        x, eta = z.real, z.imag
        eta0 = max(eta, 2.0 * self.scale)
        g = self.initial(complex(x, eta0))
        g, _ = self.fixed_point(g, complex(x, eta0), self.opts.fixed_point_iter)
        cur = eta0
        ratio = 0.25
        while True:
            nxt = max(eta, cur * ratio) if cur > eta else eta
            zz = complex(x, nxt)
            g_try, res, ok = self.newton(g, zz)
            if not ok:
                g_fp, _ = self.fixed_point(g, zz, self.opts.fixed_point_iter)
                g_try, res, ok = self.newton(g_fp, zz)
            if ok:
                g, cur = g_try, nxt
                if cur <= eta:
                    return g, res
                ratio = min(0.25, ratio * 2)
            else:
                ratio = ratio ** 0.5
                if ratio > 0.999:
                    raise ConvergenceError(f"MDE did not converge at z={z} (residual {res:.3g})", best=g_try)

    def as_matrix(self, g):
        return np.diag(g) if self.vector else g

    def trace(self, g):
        return complex(np.mean(g)) if self.vector else complex(np.trace(g)) / self.d


def mde_resolvent(model: GaussianSeriesModel, z, opts: MdeOptions | None = None) -> np.ndarray:
    """Solution of ``G = (z - A0 - S(G))^-1`` with ``Im G <= 0``."""
    z = complex(z)
    if not z.imag > 0:
        raise ValidationError("Im z must be positive")
    if model.n == 0:
        return np.linalg.inv(z * np.eye(model.d) - model.a0)
    solver = _Mde(model, opts or MdeOptions())
    g, _ = solver.solve(z)
    return solver.as_matrix(g)


@dataclass(frozen=True, eq=False)
class MdeSolution:
    grid: np.ndarray
    eta: float
    density: np.ndarray
    resolvent_residuals: np.ndarray

    def integral(self):
        return float(np.trapezoid(self.density, self.grid))

    def to_csv(self):
        lines = ["x,density,residual"]
        for x, r, e in zip(self.grid, self.density, self.resolvent_residuals):
            lines.append(f"{x:.17g},{r:.17g},{e:.17g}")
        return "\n".join(lines) + "\n"


def _density_scan(solver, xs, eta):
    dens = np.empty(len(xs))
    res = np.empty(len(xs))
    states = []
    g = None
    for j, x in enumerate(xs):
        g, r = solver.solve(complex(x, eta), g)
        states.append(g)
        dens[j] = max(-solver.trace(g).imag / np.pi, 0.0)
        res[j] = r
    return dens, res, states


def free_density(model: GaussianSeriesModel, x_lo, x_hi, steps=2000, eta=None,
                 opts: MdeOptions | None = None) -> MdeSolution:
    """Density of ``X_free`` smoothed at height ``eta`` on a uniform grid."""
    if not x_hi > x_lo or steps < 2:
        raise ValidationError("need x_lo < x_hi and steps >= 2")
    solver = _Mde(model, opts or MdeOptions())
    if eta is None:
        eta = 1e-4 * solver.scale
    if not eta > 0:
        raise ValidationError("eta must be positive")
    xs = np.linspace(x_lo, x_hi, int(steps))
    if model.n == 0:
        ev = sla.eigvalsh(model.a0)
        dens = np.mean(eta / np.pi / ((xs[:, None] - ev[None, :]) ** 2 + eta**2), axis=1)
        return MdeSolution(xs, float(eta), dens, np.zeros_like(xs))
    dens, res, _ = _density_scan(solver, xs, eta)
    return MdeSolution(xs, float(eta), dens, res)


class _Classifier:
    """Decides support membership from the scaling of the smoothed density.

    Outside the support the smoothed density is proportional to ``eta``;
    inside it converges to a positive limit.  A point counts as inside when
    shrinking ``eta`` tenfold shrinks the density by less than ``sqrt(10)``
    and the finer density exceeds ``threshold``.
    """

    def __init__(self, model, eta, threshold, opts):
        self.model = model
        self.eta = eta
        self.threshold = threshold
        self.solver = _Mde(model, opts) if model.n else None
        self.ev = sla.eigvalsh(model.a0)

    def densities(self, x, g_coarse=None, g_fine=None):
        if self.solver is None:
            r = [np.mean(e / np.pi / ((x - self.ev) ** 2 + e**2)) for e in (self.eta, self.eta / 10)]
            return r[0], r[1], None, None
        gc, _ = self.solver.solve(complex(x, self.eta), g_coarse)
        gf, _ = self.solver.solve(complex(x, self.eta / 10), g_fine)
        rc = max(-self.solver.trace(gc).imag / np.pi, 0.0)
        rf = max(-self.solver.trace(gf).imag / np.pi, 0.0)
        return rc, rf, gc, gf

    def inside(self, rc, rf):
        return rf > self.threshold and rc < np.sqrt(10.0) * rf


def free_support(model: GaussianSeriesModel, eta=None, density_threshold=None, *, steps=400,
                 edge_tol=1e-6, opts: MdeOptions | None = None, check_edges=True) -> SupportSet:
    """Spectral support of ``X_free`` as a union of closed intervals."""
    opts = opts or MdeOptions()
    d = model.d
    sigma = _model_scale(model) if model.n else 0.0
    ev = sla.eigvalsh(model.a0)
    unit = sigma if sigma > 0 else max(float(np.max(np.abs(ev))), 1.0)
    eta = 1e-4 * unit if eta is None else float(eta)
    thr = 1e-6 / unit if density_threshold is None else float(density_threshold)
    if not (eta > 0 and thr > 0):
        raise ValidationError("eta and density_threshold must be positive")
    pad = 2 * sigma + 20 * eta + 0.05 * unit
    xs = np.union1d(np.linspace(ev[0] - pad, ev[-1] + pad, int(steps)), ev)
    cls = _Classifier(model, eta, thr, opts)

    flags = np.zeros(xs.size, bool)
    states = [None] * xs.size
    gc = gf = None
    for j, x in enumerate(xs):
        rc, rf, gc, gf = cls.densities(x, gc, gf)
        flags[j] = cls.inside(rc, rf)
        states[j] = (gc, gf)
    if not flags.any():
        raise ValidationError("empty support: density below threshold everywhere")

    def refine(x_in, x_out, st):
        # Bisection on membership between an inside and an outside abscissa.
        gc, gf = st
        while abs(x_in - x_out) > edge_tol:
            mid = 0.5 * (x_in + x_out)
            rc, rf, gc2, gf2 = cls.densities(mid, gc, gf)
            if cls.inside(rc, rf):
                x_in, gc, gf = mid, gc2, gf2
            else:
                x_out = mid
        return x_in

    intervals = []
    j = 0
    while j < xs.size:
        if not flags[j]:
            j += 1
            continue
        k = j
        while k + 1 < xs.size and flags[k + 1]:
            k += 1
        a = refine(xs[j], xs[j - 1], states[j]) if j > 0 else xs[j]
        b = refine(xs[k], xs[k + 1], states[k]) if k + 1 < xs.size else xs[k]
        intervals.append([a, b])
        j = k + 1
    merged = [intervals[0]]
    for a, b in intervals[1:]:
        if a - merged[-1][1] < 4 * eta:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    if check_edges and model.n:
        lo_edge = lehner_min(model).value
        hi_edge = lehner_max(model).value
        for idx, ref in ((0, lo_edge), (-1, hi_edge)):
            pos = 0 if idx == 0 else 1
            if abs(merged[idx][pos] - ref) <= 10 * eta:
                merged[idx][pos] = ref
            else:
                warnings.warn(
                    f"support edge {merged[idx][pos]:.8g} differs from the variational edge {ref:.8g}",
                    RuntimeWarning,
                    stacklevel=2,
                )
    return SupportSet(np.array(merged))


def free_moment_exact(model: GaussianSeriesModel, k: int) -> float:
    """``(tr x tau)[X_free^k]`` from the operator-valued moment recursion.

    Expanding ``G(z) = sum_k m_k z^{-k-1}`` in the resolvent equation gives
    ``m_0 = I`` and ``m_k = A0 m_{k-1} + sum_{j+l=k-2} S(m_j) m_l``.
    """
    if k < 0:
        raise ValidationError("k must be nonnegative")
    d = model.d
    ms = [np.eye(d, dtype=complex)]
    s_cache = []
    for kk in range(1, k + 1):
        s_cache.append(model.covariance(ms[-1]) if model.n else np.zeros((d, d), complex))
        nxt = model.a0 @ ms[kk - 1]
        for j in range(kk - 1):
            nxt = nxt + s_cache[j] @ ms[kk - 2 - j]
        ms.append(nxt)
    return float(np.trace(ms[k]).real / d)


def free_moment(model: GaussianSeriesModel, k: int, eta=None, opts: MdeOptions | None = None) -> float:
    """``int x^k rho(x) dx`` by adaptive quadrature over the support."""
    if k < 0 or k % 2:
        raise ValidationError("k must be a nonnegative even integer")
    if model.n == 0:
        ev = sla.eigvalsh(model.a0)
        return float(np.mean(ev**k))
    support = free_support(model, opts=opts)
    solver = _Mde(model, opts or MdeOptions())
    eta = 1e-7 * solver.scale if eta is None else eta
    last = {}

    def integrand(x):
        g, _ = solver.solve(complex(x, eta), last.get("g"))
        last["g"] = g
        return x**k * max(-solver.trace(g).imag / np.pi, 0.0)

    total = 0.0
    for a, b in support:
        val, _ = quad(integrand, a, b, limit=200, epsabs=1e-10, epsrel=1e-9)
        total += val
    return float(total)


__all__ = [
    "LehnerOptions",
    "LehnerSolution",
    "LehnerProblem",
    "solve_lehner",
    "lehner_objective",
    "lehner_max",
    "lehner_min",
    "MdeOptions",
    "MdeSolution",
    "mde_resolvent",
    "free_density",
    "free_support",
    "free_moment",
    "free_moment_exact",
]
