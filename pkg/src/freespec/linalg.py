"""Top eigenpairs of large symmetric operators."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .rng import make_rng


def _lanczos_run(matvec, q0, steps):
    n = q0.size
    basis = np.zeros((steps + 1, n), dtype=q0.dtype)
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    basis[0] = q0 / np.linalg.norm(q0)
    m = steps
    for j in range(steps):
        w = matvec(basis[j])
        alpha[j] = np.real(np.vdot(basis[j], w))
        # Full reorthogonalization, applied twice for stability.
        for _ in range(2):
            w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] <= 1e-14 * max(1.0, abs(alpha[j])):
            m = j + 1
            break
        basis[j + 1] = w / beta[j]
    return basis[:m], alpha[:m], beta[:m]


def lanczos_top(matvec, dim, *, tol=1e-8, starts=3, max_steps=200, max_restarts=30, seed=0):
    """Largest eigenvalue and unit eigenvector of a symmetric operator.

    Lanczos with full reorthogonalization, restarted from the current Ritz
    vector until ``|A x - theta x| <= tol * max(1, |theta|)``.  Several random
    starts guard against a start nearly orthogonal to the top eigenvector;
    the largest converged Ritz value wins.
    """
    if dim == 0:
        return 0.0, np.zeros(0)
    rng = make_rng(seed, 0x1A2C)
    best = (-np.inf, None, np.inf)
    steps = min(dim, max_steps)
    for _ in range(starts):
        x = rng.standard_normal(dim)
        theta = -np.inf
        res = np.inf
        for _ in range(max_restarts):
            basis, a, b = _lanczos_run(matvec, x, steps)
            m = a.size
            if m == 1:
                ritz, vecs = np.array([a[0]]), np.ones((1, 1))
            else:
                ritz, vecs = sla.eigh_tridiagonal(a, b[: m - 1])
            theta = ritz[-1]
            x = basis.T @ vecs[:, -1]
            x /= np.linalg.norm(x)
            res = np.linalg.norm(matvec(x) - theta * x)
            if res <= tol * max(1.0, abs(theta)):
                break
        if theta > best[0]:
            best = (float(theta), x, res)
    return best[0], best[1]
