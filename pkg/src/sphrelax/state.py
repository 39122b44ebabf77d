"""Particle state storage and constitutive laws.

Stress routines are written as numba functions on single ``dim x dim``
matrices so the same code serves the public batched API and the inner
loops of the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

LINEAR_KIRCHHOFF = "linear_kirchhoff"
NEO_HOOKEAN = "neo_hookean"
MODEL_CODES = {LINEAR_KIRCHHOFF: 0, NEO_HOOKEAN: 1}


class InvertedElementError(ArithmeticError):
    """Raised when a deformation gradient has non-positive determinant."""

    def __init__(self, message, particle=None, step=None):
        super().__init__(message)
        self.particle = particle
        self.step = step


@dataclass(frozen=True)
class Material:
    """Isotropic elastic material.

    Use :func:`material_from_young_poisson` rather than constructing this
    directly so the derived moduli stay consistent.
    """

    model: str
    lam: float
    mu: float
    rho0: float
    E: float
    nu: float

    @property
    def K(self) -> float:
        return self.lam + 2.0 * self.mu / 3.0

    @property
    def G(self) -> float:
        return self.mu

    @property
    def c(self) -> float:
        return math.sqrt(self.K / self.rho0)

    @property
    def model_code(self) -> int:
        return MODEL_CODES[self.model]


def material_from_young_poisson(E, nu, rho0, model=LINEAR_KIRCHHOFF) -> Material:
    """Build a :class:`Material` from Young's modulus and Poisson's ratio.

    Uses the standard isotropic relations ``mu = E / (2 (1 + nu))`` and
    ``lambda = E nu / ((1 + nu)(1 - 2 nu))``.
    """
    if model not in MODEL_CODES:
        raise ValueError(f"unknown material model {model!r}")
    if not E > 0.0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    if not rho0 > 0.0:
        raise ValueError(f"density must be positive, got {rho0}")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return Material(model=model, lam=lam, mu=mu, rho0=float(rho0), E=float(E), nu=float(nu))


# ---------------------------------------------------------------------------
# small-matrix helpers (dim 2 or 3)
# ---------------------------------------------------------------------------


@nb.njit(cache=True, inline="always")
def det_small(A):
    if A.shape[0] == 2:
        return A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    return (
        A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
        - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
        + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0])
    )


@nb.njit(cache=True)
def inv_small(A, out):
    """Write inverse of a 2x2/3x3 matrix into ``out`` and return det(A)."""
    d = det_small(A)
    if d == 0.0:
        return d
    s = 1.0 / d
    if A.shape[0] == 2:
        out[0, 0] = A[1, 1] * s
        out[0, 1] = -A[0, 1] * s
        out[1, 0] = -A[1, 0] * s
        out[1, 1] = A[0, 0] * s
        return d
    out[0, 0] = (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]) * s
    out[0, 1] = (A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]) * s
    out[0, 2] = (A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]) * s
    out[1, 0] = (A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]) * s
    out[1, 1] = (A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]) * s
    out[1, 2] = (A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]) * s
    out[2, 0] = (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]) * s
    out[2, 1] = (A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]) * s
    out[2, 2] = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]) * s
    return d


@nb.njit(cache=True)
def pk2_into(F, model, lam, mu, S, C, Ci):
    """Second Piola-Kirchhoff stress of ``F`` written into ``S``; returns J.

    ``C`` and ``Ci`` are ``dim x dim`` scratch matrices. A non-positive
    return value means the element is inverted and ``S`` is unspecified.
    """
    d = F.shape[0]
    for a in range(d):
        for b in range(d):
            acc = 0.0
            for k in range(d):
                acc += F[k, a] * F[k, b]
            C[a, b] = acc
    J = det_small(F)
    if J <= 0.0:
        return J
    if model == 0:
        tr = 0.0
        for a in range(d):
            tr += 0.5 * (C[a, a] - 1.0)
        for a in range(d):
            for b in range(d):
                Eab = 0.5 * C[a, b]
                if a == b:
                    Eab -= 0.5
                S[a, b] = 2.0 * mu * Eab
            S[a, a] += lam * tr
    else:
        inv_small(C, Ci)
        lnJ = math.log(J)
        for a in range(d):
            for b in range(d):
                S[a, b] = (lam * lnJ - mu) * Ci[a, b]
            S[a, a] += mu
    return J


@nb.njit(cache=True)
def _pk2_batch(F, model, lam, mu):
    n, d = F.shape[0], F.shape[1]
    S = np.empty_like(F)
    C = np.empty((d, d))
    Ci = np.empty((d, d))
    for i in range(n):
        J = pk2_into(F[i], model, lam, mu, S[i], C, Ci)
        if J <= 0.0:
            return S, i
    return S, -1


def _as_batch(A):
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    return np.ascontiguousarray(A[None] if single else A), single


def second_pk(F, mat: Material):
    """Second Piola-Kirchhoff stress for one matrix or a stack of matrices."""
    Fb, single = _as_batch(F)
    if Fb.shape[-1] not in (2, 3) or Fb.shape[-1] != Fb.shape[-2]:
        raise ValueError(f"deformation gradient must be 2x2 or 3x3, got {Fb.shape[1:]}")
    S, bad = _pk2_batch(Fb, mat.model_code, mat.lam, mat.mu)
    if bad >= 0:
        raise InvertedElementError(f"det(F) <= 0 at index {bad}", particle=int(bad))
    return S[0] if single else S


def first_pk(F, S):
    """First Piola-Kirchhoff stress ``P = F S``."""
    F = np.asarray(F, dtype=float)
    S = np.asarray(S, dtype=float)
    if F.shape != S.shape:
        raise ValueError(f"shape mismatch {F.shape} vs {S.shape}")
    return F @ S


def strain_energy_density(F, mat: Material):
    """Stored energy per reference volume, matching :func:`second_pk`."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    eye = np.eye(d)
    C = np.swapaxes(F, -1, -2) @ F
    E = 0.5 * (C - eye)
    trE = np.trace(E, axis1=-2, axis2=-1)
    if mat.model == LINEAR_KIRCHHOFF:
        return 0.5 * mat.lam * trE**2 + mat.mu * np.sum(E * E, axis=(-2, -1))
    J = np.linalg.det(F)
    if np.any(J <= 0.0):
        raise InvertedElementError("det(F) <= 0")
    lnJ = np.log(J)
    return mat.mu * trE - mat.mu * lnJ + 0.5 * mat.lam * lnJ**2


def von_mises(F, P, J=None):
    """Von Mises equivalent of the Cauchy stress ``J^-1 P F^T``.

    Works on single matrices or stacks. In 2D the out-of-plane stress is
    taken as zero.
    """
    F = np.asarray(F, dtype=float)
    P = np.asarray(P, dtype=float)
    if J is None:
        J = np.linalg.det(F)
    J = np.asarray(J, dtype=float)
    if np.any(J <= 0.0):
        raise InvertedElementError("J <= 0 in von Mises evaluation")
    sigma = (P @ np.swapaxes(F, -1, -2)) / J[..., None, None]
    d = sigma.shape[-1]
    if d == 2:
        s3 = np.zeros(sigma.shape[:-2] + (3, 3))
        s3[..., :2, :2] = sigma
        sigma = s3
    mean = np.trace(sigma, axis1=-2, axis2=-1) / 3.0
    dev = sigma - mean[..., None, None] * np.eye(3)
    return np.sqrt(1.5 * np.sum(dev * dev, axis=(-2, -1)))


@dataclass
class ParticleSystem:
    """Columnar per-particle state for one elastic body."""

    r0: np.ndarray
    V0: np.ndarray
    rho0: np.ndarray
    r: np.ndarray = None
    v: np.ndarray = None
    m: np.ndarray = None
    rho: np.ndarray = None
    F: np.ndarray = None
    dFdt: np.ndarray = None
    B0: np.ndarray = None
    a: np.ndarray = None
    is_constrained: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r0 = np.ascontiguousarray(self.r0, dtype=float)
        if self.r0.ndim != 2 or self.r0.shape[1] not in (2, 3):
            raise ValueError(f"positions must have shape (N, 2|3), got {self.r0.shape}")
        n, d = self.r0.shape
        if n == 0:
            raise ValueError("empty particle system")
        self.V0 = np.broadcast_to(np.asarray(self.V0, dtype=float), (n,)).copy()
        self.rho0 = np.broadcast_to(np.asarray(self.rho0, dtype=float), (n,)).copy()
        eye = np.broadcast_to(np.eye(d), (n, d, d))
        defaults = {
            "r": lambda: self.r0.copy(),
            "v": lambda: np.zeros((n, d)),
            "m": lambda: self.rho0 * self.V0,
            "rho": lambda: self.rho0.copy(),
            "F": lambda: eye.copy(),
            "dFdt": lambda: np.zeros((n, d, d)),
            "B0": lambda: eye.copy(),
            "a": lambda: np.zeros((n, d)),
            "is_constrained": lambda: np.zeros(n, dtype=bool),
        }
        for name, make in defaults.items():
            val = getattr(self, name)
            if val is None:
                val = make()
            dtype = bool if name == "is_constrained" else float
            setattr(self, name, np.ascontiguousarray(val, dtype=dtype))

    @property
    def n(self) -> int:
        return self.r0.shape[0]

    @property
    def dim(self) -> int:
        return self.r0.shape[1]

    @property
    def u(self) -> np.ndarray:
        return self.r - self.r0

    def momentum(self) -> np.ndarray:
        return (self.m[:, None] * self.v).sum(axis=0)

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.m * np.sum(self.v * self.v, axis=1)))

    def apply_constraints(self):
        if self.is_constrained.any():
            c = self.is_constrained
            self.v[c] = 0.0
            self.r[c] = self.r0[c]

    def copy(self) -> "ParticleSystem":
        out = ParticleSystem(
            r0=self.r0.copy(),
            V0=self.V0.copy(),
            rho0=self.rho0.copy(),
            **{
                k: getattr(self, k).copy()
                for k in ("r", "v", "m", "rho", "F", "dFdt", "B0", "a", "is_constrained")
            },
        )
        out.extra = dict(self.extra)
        return out
