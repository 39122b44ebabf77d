"""Total-Lagrangian SPH operators and position-based Verlet integration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .state import InvertedElementError, Material, ParticleSystem, det_small, pk2_into


class DegenerateNeighborhoodError(ValueError):
    def __init__(self, message, particle=None):
        super().__init__(message)
        self.particle = particle


@dataclass(frozen=True)
class StepSizes:
    dt_acoustic: float
    dt_body_force: float
    dt_viscous_explicit: float
    dt_viscous_implicit: float
    dt: float


@nb.njit(cache=True, parallel=True)
def _moment_matrices(ptr, idx, unit, dwdr, dist, V0, out):
    n, d = out.shape[0], out.shape[1]
    for i in nb.prange(n):
        for a in range(d):
            for b in range(d):
                out[i, a, b] = 0.0
        for q in range(ptr[i], ptr[i + 1]):
            j = idx[q]
            w = -V0[j] * dist[q] * dwdr[q]
            for a in range(d):
                for b in range(d):
                    out[i, a, b] += w * unit[q, a] * unit[q, b]


def compute_correction_matrices(system: ParticleSystem, nbh, max_cond=1e8):
    """Kernel correction matrices ``B0_i = (-sum_j V0_j r0_ij (x) gradW_ij)^-1``."""
    n, d = system.n, system.dim
    M = np.empty((n, d, d))
    _moment_matrices(nbh.ptr, nbh.idx, nbh.unit, nbh.dwdr, nbh.dist, system.V0, M)
    counts = nbh.counts()
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise DegenerateNeighborhoodError(f"particle {empty[0]} has no neighbors", int(empty[0]))
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(M)
    bad = np.flatnonzero(~np.isfinite(cond) | (cond > max_cond))
    if len(bad):
        i = int(bad[0])
        raise DegenerateNeighborhoodError(
            f"correction matrix of particle {i} is singular or ill-conditioned (cond={cond[i]:.3g})", i
        )
    system.B0[:] = np.linalg.inv(M)
    corrected_gradients(system, nbh)
    return system.B0


@nb.njit(cache=True, parallel=True)
def _corrected_gradients(ptr, wgrad, B0, out):
    n, d = B0.shape[0], B0.shape[1]
    for i in nb.prange(n):
        for q in range(ptr[i], ptr[i + 1]):
            for b in range(d):
                s = 0.0
                for k in range(d):
                    s += wgrad[q, k] * B0[i, k, b]
                out[q, b] = s


def corrected_gradients(system: ParticleSystem, nbh):
    """Per-pair ``V0_j B0_i^T gradW_ij``; cached on the neighborhood."""
    out = np.empty_like(nbh.wgrad)
    _corrected_gradients(nbh.ptr, nbh.wgrad, system.B0, out)
    nbh.cgrad = out
    return out


@nb.njit(cache=True, parallel=True)
def _deformation_rate_3d(ptr, idx, cgrad, v, out):
    for i in nb.prange(v.shape[0]):
        a00 = a01 = a02 = a10 = a11 = a12 = a20 = a21 = a22 = 0.0
        vi0, vi1, vi2 = v[i, 0], v[i, 1], v[i, 2]
        for q in range(ptr[i], ptr[i + 1]):
            j = idx[q]
            w0, w1, w2 = v[j, 0] - vi0, v[j, 1] - vi1, v[j, 2] - vi2
            g0, g1, g2 = cgrad[q, 0], cgrad[q, 1], cgrad[q, 2]
            a00 += w0 * g0
            a01 += w0 * g1
            a02 += w0 * g2
            a10 += w1 * g0
            a11 += w1 * g1
            a12 += w1 * g2
            a20 += w2 * g0
            a21 += w2 * g1
            a22 += w2 * g2
        out[i, 0, 0], out[i, 0, 1], out[i, 0, 2] = a00, a01, a02
        out[i, 1, 0], out[i, 1, 1], out[i, 1, 2] = a10, a11, a12
        out[i, 2, 0], out[i, 2, 1], out[i, 2, 2] = a20, a21, a22


@nb.njit(cache=True, parallel=True)
def _deformation_rate_2d(ptr, idx, cgrad, v, out):
    for i in nb.prange(v.shape[0]):
        a00 = a01 = a10 = a11 = 0.0
        vi0, vi1 = v[i, 0], v[i, 1]
        for q in range(ptr[i], ptr[i + 1]):
            j = idx[q]
            w0, w1 = v[j, 0] - vi0, v[j, 1] - vi1
            g0, g1 = cgrad[q, 0], cgrad[q, 1]
            a00 += w0 * g0
            a01 += w0 * g1
            a10 += w1 * g0
            a11 += w1 * g1
        out[i, 0, 0], out[i, 0, 1] = a00, a01
        out[i, 1, 0], out[i, 1, 1] = a10, a11


def deformation_rate(system: ParticleSystem, nbh):
    """Set ``dFdt_i = -(sum_j V0_j v_ij (x) gradW_ij) B0_i`` from current velocities."""
    cgrad = nbh.cgrad if nbh.cgrad is not None else corrected_gradients(system, nbh)
    kern = _deformation_rate_3d if system.dim == 3 else _deformation_rate_2d
    kern(nbh.ptr, nbh.idx, cgrad, system.v, system.dFdt)
    return system.dFdt


@nb.njit(cache=True, parallel=True)
def _jacobians(F, out):
    for i in nb.prange(F.shape[0]):
        out[i] = det_small(F[i])


def jacobians(F):
    out = np.empty(F.shape[0])
    _jacobians(F, out)
    return out


def update_density(system: ParticleSystem, F=None):
    """``rho = rho0 / det(F)``; pass ``F`` to evaluate at another stage."""
    F = system.F if F is None else F
    J = jacobians(F)
    if not np.all(J > 0.0):
        bad = np.flatnonzero(~(J > 0.0))
        raise InvertedElementError(f"det(F) <= 0 at particle {bad[0]}", particle=int(bad[0]))
    np.divide(system.rho0, J, out=system.rho)
    return system.rho


@nb.njit(cache=True, parallel=True)
def _stress_times_b0(F, B0, model, lam, mu, PB, scratch, bad):
    n, d = F.shape[0], F.shape[1]
    for i in nb.prange(n):
        S = scratch[i, 0]
        J = pk2_into(F[i], model, lam, mu, S, scratch[i, 1], scratch[i, 2])
        if not J > 0.0:
            bad[i] = True
            continue
        P = scratch[i, 1]
        for a in range(d):
            for b in range(d):
                s = 0.0
                for k in range(d):
                    s += F[i, a, k] * S[k, b]
                P[a, b] = s
        for a in range(d):
            for b in range(d):
                s = 0.0
                for k in range(d):
                    s += P[a, k] * B0[i, k, b]
                PB[i, a, b] = s


@nb.njit(cache=True, parallel=True)
def _internal_accel_3d(ptr, idx, wgrad, V0, m, PB, out):
    for i in nb.prange(out.shape[0]):
        p00, p01, p02 = PB[i, 0, 0], PB[i, 0, 1], PB[i, 0, 2]
        p10, p11, p12 = PB[i, 1, 0], PB[i, 1, 1], PB[i, 1, 2]
        p20, p21, p22 = PB[i, 2, 0], PB[i, 2, 1], PB[i, 2, 2]
        s0 = s1 = s2 = 0.0
        for q in range(ptr[i], ptr[i + 1]):
            j = idx[q]
            g0, g1, g2 = wgrad[q, 0], wgrad[q, 1], wgrad[q, 2]
            s0 += (p00 + PB[j, 0, 0]) * g0 + (p01 + PB[j, 0, 1]) * g1 + (p02 + PB[j, 0, 2]) * g2
            s1 += (p10 + PB[j, 1, 0]) * g0 + (p11 + PB[j, 1, 1]) * g1 + (p12 + PB[j, 1, 2]) * g2
            s2 += (p20 + PB[j, 2, 0]) * g0 + (p21 + PB[j, 2, 1]) * g1 + (p22 + PB[j, 2, 2]) * g2
        f = V0[i] / m[i]
        out[i, 0], out[i, 1], out[i, 2] = f * s0, f * s1, f * s2


@nb.njit(cache=True, parallel=True)
def _internal_accel_2d(ptr, idx, wgrad, V0, m, PB, out):
    for i in nb.prange(out.shape[0]):
        p00, p01 = PB[i, 0, 0], PB[i, 0, 1]
        p10, p11 = PB[i, 1, 0], PB[i, 1, 1]
        s0 = s1 = 0.0
        for q in range(ptr[i], ptr[i + 1]):
            j = idx[q]
            g0, g1 = wgrad[q, 0], wgrad[q, 1]
            s0 += (p00 + PB[j, 0, 0]) * g0 + (p01 + PB[j, 0, 1]) * g1
            s1 += (p10 + PB[j, 1, 0]) * g0 + (p11 + PB[j, 1, 1]) * g1
        f = V0[i] / m[i]
        out[i, 0], out[i, 1] = f * s0, f * s1


def stress_times_correction(system: ParticleSystem, material: Material):
    """Per-particle ``P_i B0_i`` with ``P = F S(F)``."""
    n, d = system.n, system.dim
    PB = np.empty((n, d, d))
    scratch = system.extra.get("_scratch")
    if scratch is None or scratch.shape != (n, 3, d, d):
        scratch = system.extra["_scratch"] = np.empty((n, 3, d, d))
    bad = np.zeros(n, dtype=np.bool_)
    _stress_times_b0(system.F, system.B0, material.model_code, material.lam, material.mu, PB, scratch, bad)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InvertedElementError(f"det(F) <= 0 at particle {i}", particle=i)
    return PB


def internal_acceleration(system: ParticleSystem, nbh, material: Material):
    """Elastic acceleration ``(2/m_i) sum_j V0_i V0_j Pbar_ij gradW_ij``."""
    PB = stress_times_correction(system, material)
    out = np.empty((system.n, system.dim))
    kern = _internal_accel_3d if system.dim == 3 else _internal_accel_2d
    kern(nbh.ptr, nbh.idx, nbh.wgrad, system.V0, system.m, PB, out)
    return out


def momentum_rhs(system: ParticleSystem, nbh, material: Material, body_force=None):
    """Set ``system.a`` to internal plus external acceleration.

    ``body_force`` is ``None``, a constant vector, an ``(N, dim)`` array, or
    a callable ``f(system) -> (N, dim)``.
    """
    a = internal_acceleration(system, nbh, material)
    if body_force is not None:
        a += body_force(system) if callable(body_force) else np.asarray(body_force, dtype=float)
    system.a[:] = a
    return system.a


def stable_dt(system: ParticleSystem, material: Material, h, cfl=0.6) -> StepSizes:
    """Acoustic and body-force step limit ``0.6 min(h/(c+|v|), sqrt(h/|a|))``."""
    vmax = float(np.sqrt(np.max(np.sum(system.v**2, axis=1))))
    amax = float(np.sqrt(np.max(np.sum(system.a**2, axis=1))))
    dt_ac = cfl * h / (material.c + vmax)
    dt_bf = cfl * math.sqrt(h / amax) if amax > 0.0 else math.inf
    return StepSizes(
        dt_acoustic=dt_ac,
        dt_body_force=dt_bf,
        dt_viscous_explicit=math.inf,
        dt_viscous_implicit=math.inf,
        dt=min(dt_ac, dt_bf),
    )


def verlet_step(system: ParticleSystem, nbh, material: Material, dt, body_force=None):
    """Advance one position-based Verlet step of the elastic operator.

    Half-kick of ``F`` and ``r`` with the rates at ``t^n``, velocity update
    with accelerations evaluated at the midpoint configuration, then the
    second half-kick with rates from the new velocities.
    """
    half = 0.5 * dt
    deformation_rate(system, nbh)
    update_density(system)
    system.F += half * system.dFdt
    system.r += half * system.v
    system.apply_constraints()

    momentum_rhs(system, nbh, material, body_force)
    system.v += dt * system.a
    system.apply_constraints()

    deformation_rate(system, nbh)
    update_density(system)
    system.F += half * system.dFdt
    system.r += half * system.v
    system.apply_constraints()
    return system


def strain_energy(system: ParticleSystem, material: Material) -> float:
    from .state import strain_energy_density

    return float(np.sum(system.V0 * strain_energy_density(system.F, material)))
