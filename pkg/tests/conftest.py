import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from freespec.model import GaussianSeriesModel

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def random_hermitian(rng, d, real=False, scale=1.0):
    a = rng.standard_normal((d, d))
    if not real:
        a = a + 1j * rng.standard_normal((d, d))
    return scale * (a + a.conj().T) / 2


def random_model(rng, d, n, real=False, mean_scale=1.0, coeff_scale=None):
    coeff_scale = coeff_scale if coeff_scale is not None else 1.0 / np.sqrt(max(n, 1) * d)
    a0 = random_hermitian(rng, d, real, mean_scale)
    coeffs = np.array([random_hermitian(rng, d, real, coeff_scale) for _ in range(n)]).reshape(n, d, d)
    return GaussianSeriesModel(a0, coeffs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def grid_directed(src, dst, step=1 / 1024):
    """Directed Hausdorff distance between unions of intervals, on a dense grid.

    Every gap midpoint of a 1/64 lattice lies on the 1/1024 grid, so for
    lattice endpoints the grid maximum is exact.
    """
    best = 0.0
    for a, b in src:
        xs = np.arange(a, b + step / 2, step) if b > a else np.array([a])
        dist = np.min([np.maximum.reduce([lo - xs, xs - hi, np.zeros_like(xs)]) for lo, hi in dst], axis=0)
        best = max(best, float(dist.max()))
    return best


def grid_hausdorff(a, b):
    return max(grid_directed(a, b), grid_directed(b, a))


def random_lattice_set(rng):
    """Up to four points or intervals with endpoints on a 1/64 lattice."""
    k = rng.integers(1, 5)
    a = rng.integers(-256, 257, size=k)
    length = np.where(rng.random(k) < 0.4, 0, rng.integers(1, 129, size=k))
    return np.column_stack([a, a + length]) / 64


# Acceptance verdicts, printed once at the end of the session.
_VERDICTS = []


def record_verdict(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    _VERDICTS.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
