"""Artificial-viscosity damping for dynamic relaxation.

Three integrators are provided for the viscous operator
``dv/dt = eta lap0(v)``:

* ``explicit``: forward Euler on the discrete Laplacian,
* ``particle_split``: one implicit local solve per particle (a single
  exact-line-search gradient step on the local linear system, followed by a
  momentum-restoring correction of the neighbors),
* ``pairwise_split``: the local operator further split into pair
  interactions, each solved exactly.

The implicit operators are composed over all particles forward for half a
step and then in mirrored order for the second half. Sweeps follow the
block schedule of :mod:`sphrelax.neighbors`, so the parallel result is
bit-identical to the serial one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

EXPLICIT = "explicit"
PARTICLE_SPLIT = "particle_split"
PAIRWISE_SPLIT = "pairwise_split"
NONE = "none"
SCHEMES = (NONE, EXPLICIT, PARTICLE_SPLIT, PAIRWISE_SPLIT)


def artificial_viscosity(beta, rho0, E, L):
    """``eta = (beta / 4) sqrt(rho0 E) L``."""
    if beta < 0 or rho0 <= 0 or E <= 0 or L <= 0:
        raise ValueError("beta must be >= 0 and rho0, E, L positive")
    return 0.25 * beta * math.sqrt(rho0 * E) * L


def viscous_dt_bounds(h, nu_kin, dim):
    """Explicit (``0.5 h^2/(nu D)``) and implicit (``50 h^2/(nu D)``) step limits."""
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if nu_kin <= 0.0:
        return math.inf, math.inf
    base = h * h / (nu_kin * dim)
    return 0.5 * base, 50.0 * base


def random_choice_eta(eta, alpha, rng):
    """Return ``eta / alpha`` with probability ``alpha``, else 0.

    One uniform draw is consumed per call, also when ``alpha == 1``, so a
    given seed yields the same stream regardless of ``alpha``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    phi = rng.random()
    return eta / alpha if phi < alpha else 0.0


@dataclass
class DampingConfig:
    scheme: str = PARTICLE_SPLIT
    eta: float = 0.0
    alpha: float = 1.0
    seed: int = 0
    beta: float | None = None
    L: float | None = None
    rho0: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown damping scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.eta < 0.0:
            raise ValueError("eta must be non-negative")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @classmethod
    def from_shape(cls, beta, rho0, E, L, **kw):
        return cls(eta=artificial_viscosity(beta, rho0, E, L), beta=beta, L=L, rho0=rho0, **kw)

    @property
    def enabled(self) -> bool:
        return self.scheme != NONE and self.eta > 0.0

    def nu_kin(self, rho0=None) -> float:
        rho0 = self.rho0 if rho0 is None else rho0
        return self.eta / rho0


# ---------------------------------------------------------------------------
# local operators
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _particle_split_local(i, ptr, idx, G, m, v, free, coef):
    """Local implicit operator of particle ``i``; ``coef = eta * dt_sub``."""
    start, stop = ptr[i], ptr[i + 1]
    if stop == start or not free[i]:
        return
    d3 = v.shape[1] == 3
    vi0 = v[i, 0]
    vi1 = v[i, 1]
    vi2 = v[i, 2] if d3 else 0.0
    sum_b = 0.0
    sum_b2 = 0.0
    e0 = e1 = e2 = 0.0
    for q in range(start, stop):
        j = idx[q]
        b = coef * G[q]
        sum_b += b
        sum_b2 += b * b
        e0 -= b * (vi0 - v[j, 0])
        e1 -= b * (vi1 - v[j, 1])
        if d3:
            e2 -= b * (vi2 - v[j, 2])
    diag = sum_b - m[i]
    denom = diag * diag + sum_b2
    if denom == 0.0:
        return
    k0 = e0 / denom
    k1 = e1 / denom
    k2 = e2 / denom
    # step 1: gradient step for particle i
    ni0 = vi0 + diag * k0
    ni1 = vi1 + diag * k1
    ni2 = vi2 + diag * k2
    v[i, 0] = ni0
    v[i, 1] = ni1
    if d3:
        v[i, 2] = ni2
    # step 2: neighbors corrected against their predicted velocities
    for q in range(start, stop):
        j = idx[q]
        if not free[j]:
            continue
        b = coef * G[q]
        f = b / m[j]
        vj0 = v[j, 0]
        vj1 = v[j, 1]
        v[j, 0] = vj0 - f * (ni0 - (vj0 - b * k0))
        v[j, 1] = vj1 - f * (ni1 - (vj1 - b * k1))
        if d3:
            vj2 = v[j, 2]
            v[j, 2] = vj2 - f * (ni2 - (vj2 - b * k2))


@nb.njit(cache=True, inline="always")
def _pair_update(i, j, b, m, v, free):
    mi = m[i]
    mj = m[j]
    den = mi * mj - (mi + mj) * b
    fi = mj * b / den if free[i] else 0.0
    fj = -mi * b / den if free[j] else 0.0
    w0 = v[i, 0] - v[j, 0]
    w1 = v[i, 1] - v[j, 1]
    v[i, 0] += fi * w0
    v[i, 1] += fi * w1
    v[j, 0] += fj * w0
    v[j, 1] += fj * w1
    if v.shape[1] == 3:
        w2 = v[i, 2] - v[j, 2]
        v[i, 2] += fi * w2
        v[j, 2] += fj * w2


@nb.njit(cache=True)
def _pairwise_split_local(i, ptr, idx, G, m, v, free, coef):
    """Pair sub-operators of particle ``i`` ascending then descending.

    Each pair is applied for half of the particle operator's sub-step.
    """
    start, stop = ptr[i], ptr[i + 1]
    if stop == start or not free[i]:
        return
    d3 = v.shape[1] == 3
    half = 0.5 * coef
    mi = m[i]
    vi0 = v[i, 0]
    vi1 = v[i, 1]
    vi2 = v[i, 2] if d3 else 0.0
    n = stop - start
    for s in range(2 * n):
        q = start + s if s < n else stop - 1 - (s - n)
        j = idx[q]
        b = half * G[q]
        mj = m[j]
        den = mi * mj - (mi + mj) * b
        fi = mj * b / den
        fj = -mi * b / den if free[j] else 0.0
        w0 = vi0 - v[j, 0]
        w1 = vi1 - v[j, 1]
        vi0 += fi * w0
        vi1 += fi * w1
        v[j, 0] += fj * w0
        v[j, 1] += fj * w1
        if d3:
            w2 = vi2 - v[j, 2]
            vi2 += fi * w2
            v[j, 2] += fj * w2
    v[i, 0] = vi0
    v[i, 1] = vi1
    if d3:
        v[i, 2] = vi2


@nb.njit(cache=True, inline="always")
def _apply_local(scheme, i, ptr, idx, G, m, v, free, coef):
    if scheme == 0:
        _particle_split_local(i, ptr, idx, G, m, v, free, coef)
    else:
        _pairwise_split_local(i, ptr, idx, G, m, v, free, coef)


@nb.njit(cache=True)
def _sweep_serial(scheme, block_ptr, block_cells, cell_ptr, cell_particles, ptr, idx, G, m, v, free, coef, reverse):
    nblk = block_ptr.shape[0] - 1
    for bb in range(nblk):
        b = nblk - 1 - bb if reverse else bb
        c0 = block_ptr[b]
        nc = block_ptr[b + 1] - c0
        for cc in range(nc):
            c = block_cells[c0 + nc - 1 - cc] if reverse else block_cells[c0 + cc]
            p0 = cell_ptr[c]
            npart = cell_ptr[c + 1] - p0
            for pp in range(npart):
                i = cell_particles[p0 + npart - 1 - pp] if reverse else cell_particles[p0 + pp]
                _apply_local(scheme, i, ptr, idx, G, m, v, free, coef)


@nb.njit(cache=True, parallel=True)
def _sweep_parallel(scheme, block_ptr, block_cells, cell_ptr, cell_particles, ptr, idx, G, m, v, free, coef, reverse):
    # same visiting order as _sweep_serial; cells of one block are independent
    nblk = block_ptr.shape[0] - 1
    for bb in range(nblk):
        b = nblk - 1 - bb if reverse else bb
        c0 = block_ptr[b]
        nc = block_ptr[b + 1] - c0
        for cc in nb.prange(nc):
            c = block_cells[c0 + nc - 1 - cc] if reverse else block_cells[c0 + cc]
            p0 = cell_ptr[c]
            npart = cell_ptr[c + 1] - p0
            for pp in range(npart):
                i = cell_particles[p0 + npart - 1 - pp] if reverse else cell_particles[p0 + pp]
                _apply_local(scheme, i, ptr, idx, G, m, v, free, coef)


def _free_mask(system):
    return np.ascontiguousarray(~system.is_constrained)


def particle_split_update(i, system, nbh, eta, dt_sub):
    """Apply the particle-split local operator of particle ``i`` in place."""
    _particle_split_local(int(i), nbh.ptr, nbh.idx, nbh.pair_factor, system.m, system.v,
                          _free_mask(system), eta * dt_sub)


def pairwise_increments(m_i, m_j, b, v_ij):
    """Exact solution of the implicit pair system for coefficient ``b <= 0``."""
    den = m_i * m_j - (m_i + m_j) * b
    assert den > 0.0, "pair system denominator must be positive for b <= 0"
    v_ij = np.asarray(v_ij, dtype=float)
    return m_j * b * v_ij / den, -m_i * b * v_ij / den


def pairwise_split_update(i, j, system, nbh, eta, dt_sub):
    """Implicit damping of the single pair ``(i, j)`` over ``dt_sub``."""
    row = nbh.neighbors_of(i)
    pos = np.searchsorted(row, j)
    if pos >= len(row) or row[pos] != j:
        raise ValueError(f"particles {i} and {j} are not neighbors")
    b = eta * nbh.pair_factor[nbh.ptr[i] + pos] * dt_sub
    _pair_update(int(i), int(j), b, system.m, system.v, _free_mask(system))


@nb.njit(cache=True, parallel=True)
def _laplacian_accel(ptr, idx, G, m, v, eta, out):
    n, d = v.shape
    for i in nb.prange(n):
        for a in range(d):
            out[i, a] = 0.0
        for q in range(ptr[i], ptr[i + 1]):
            j = idx[q]
            for a in range(d):
                out[i, a] += G[q] * (v[i, a] - v[j, a])
        f = eta / m[i]
        for a in range(d):
            out[i, a] *= f


def explicit_damping_accel(system, nbh, eta):
    """Viscous acceleration ``(eta / m_i) sum_j G_ij v_ij``."""
    out = np.empty_like(system.v)
    _laplacian_accel(nbh.ptr, nbh.idx, nbh.pair_factor, system.m, system.v, float(eta), out)
    return out


def strang_damping_sweep(system, nbh, eta, dt, scheme=PARTICLE_SPLIT, parallel=True, blocks=None):
    """Apply the damping operator over ``dt``.

    Implicit schemes sweep all particles forward with ``dt/2`` then in the
    mirrored order with another ``dt/2``. The explicit scheme takes a single
    forward-Euler step. ``eta == 0`` is a no-op.
    """
    if eta == 0.0 or scheme == NONE:
        return
    if scheme == EXPLICIT:
        acc = explicit_damping_accel(system, nbh, eta)
        acc[system.is_constrained] = 0.0
        system.v += dt * acc
        return
    if scheme not in (PARTICLE_SPLIT, PAIRWISE_SPLIT):
        raise ValueError(f"unknown damping scheme {scheme!r}")
    blocks = nbh.blocks if blocks is None else blocks
    grid = nbh.grid
    fn = _sweep_parallel if parallel else _sweep_serial
    code = 0 if scheme == PARTICLE_SPLIT else 1
    free = _free_mask(system)
    coef = float(eta) * 0.5 * dt
    for reverse in (False, True):
        fn(code, blocks.block_ptr, blocks.block_cells, grid.cell_ptr, grid.cell_particles,
           nbh.ptr, nbh.idx, nbh.pair_factor, system.m, system.v, free, coef, reverse)


@dataclass
class DampingOperator:
    """Random-choice damping with its own reproducible random stream."""

    config: DampingConfig
    parallel: bool = True
    rng: np.random.Generator = field(init=False)
    applied_steps: int = field(default=0, init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.config.seed)

    def draw(self) -> float:
        return random_choice_eta(self.config.eta, self.config.alpha, self.rng)

    def dt_limit(self, h, rho0, dim) -> float:
        """Step limit imposed by the scheme at the largest applied viscosity."""
        cfg = self.config
        if not cfg.enabled or cfg.scheme == PAIRWISE_SPLIT:
            return math.inf
        nu = cfg.eta / cfg.alpha / rho0
        explicit, implicit = viscous_dt_bounds(h, nu, dim)
        return explicit if cfg.scheme == EXPLICIT else implicit

    def apply(self, system, nbh, dt) -> bool:
        if not self.config.enabled:
            return False
        eta = self.draw()
        if eta == 0.0:
            return False
        strang_damping_sweep(system, nbh, eta, dt, self.config.scheme, self.parallel)
        self.applied_steps += 1
        return True
