import numpy as np
import pytest

from sphrelax.kernel import WendlandC2
from sphrelax.neighbors import build_reference_neighborhoods
from sphrelax.state import ParticleSystem


def lattice(n_per_axis, dp=1.0, jitter=0.0, seed=0):
    """Square/cubic lattice with optional random perturbation."""
    axes = [np.arange(k) * dp for k in n_per_axis]
    grids = np.meshgrid(*axes, indexing="ij")
    r0 = np.stack([g.reshape(-1) for g in grids], axis=1)
    if jitter:
        r0 = r0 + jitter * dp * np.random.default_rng(seed).uniform(-1, 1, r0.shape)
    return r0


def make_body(n_per_axis, dp=1.0, jitter=0.0, seed=0, rho0=1000.0):
    r0 = lattice(n_per_axis, dp, jitter, seed)
    dim = r0.shape[1]
    system = ParticleSystem(r0=r0, V0=dp**dim, rho0=rho0)
    kernel = WendlandC2(1.3 * dp, dim)
    nbh = build_reference_neighborhoods(r0, system.V0, kernel)
    return system, nbh, kernel


def wendland_brute(r, h, dim):
    """Kernel value and radial derivative written out from scratch."""
    sigma = {1: 3 / (4 * h), 2: 7 / (4 * np.pi * h**2), 3: 21 / (16 * np.pi * h**3)}[dim]
    q = r / h
    if q >= 2.0:
        return 0.0, 0.0
    w = sigma * (1 - q / 2) ** 4 * (1 + 2 * q)
    dw = sigma / h * (-2 * (1 - q / 2) ** 3 * (1 + 2 * q) + 2 * (1 - q / 2) ** 4)
    return w, dw


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion and return the flag."""

    def record(label, passed, detail, status=None):
        status = status or ("PASS" if passed else "FAIL")
        line = f"{label:<4} {status:<4} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
