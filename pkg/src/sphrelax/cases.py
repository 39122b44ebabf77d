"""Benchmark scenarios: bodies, constraints, body forces and probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .damping import PARTICLE_SPLIT, DampingConfig, artificial_viscosity
from .state import LINEAR_KIRCHHOFF, NEO_HOOKEAN, Material, material_from_young_poisson

GRAVITY = 9.8


@dataclass
class Body:
    r0: np.ndarray
    V0: np.ndarray
    m: np.ndarray

    @property
    def n(self):
        return len(self.r0)


def generate_box_lattice(lengths, dp, rho0, origin=None) -> Body:
    """Cell-centred lattice filling an axis-aligned box.

    ``origin`` is the lower corner (default: the origin). The per-axis
    particle count is ``round(length / dp)``.
    """
    lengths = np.asarray(lengths, dtype=float)
    if not dp > 0.0:
        raise ValueError("particle spacing must be positive")
    if np.any(lengths < dp * (1.0 - 1e-9)):
        raise ValueError(f"every box length must be >= dp, got {lengths.tolist()} with dp={dp}")
    dim = len(lengths)
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)
    counts = [int(round(L / dp)) for L in lengths]
    axes = [origin[k] + (np.arange(c) + 0.5) * dp for k, c in enumerate(counts)]
    grids = np.meshgrid(*axes, indexing="ij")
    # x varies fastest in the particle ordering
    r0 = np.stack([g.transpose().reshape(-1) for g in grids], axis=1)
    V0 = np.full(len(r0), dp**dim)
    return Body(r0=r0, V0=V0, m=rho0 * V0)


def generate_disk(center, diameter, dp, rho0) -> Body:
    """Square-lattice particles strictly inside a disk; one particle sits at the centre.

    Lattice points lying exactly on the circle are dropped so that the
    extreme rows are flat instead of ending in a single protruding particle.
    """
    if not dp > 0.0 or diameter < 2.0 * dp:
        raise ValueError("disk diameter must be at least 2 dp")
    center = np.asarray(center, dtype=float)
    R = 0.5 * diameter
    k = int(math.floor(R / dp))
    ax = np.arange(-k, k + 1) * dp
    X, Y = np.meshgrid(ax, ax, indexing="xy")
    pts = np.stack([X.reshape(-1), Y.reshape(-1)], axis=1)
    keep = np.sum(pts * pts, axis=1) < R * R * (1.0 - 1e-9)
    r0 = pts[keep] + center
    V0 = np.full(len(r0), dp * dp)
    return Body(r0=r0, V0=V0, m=rho0 * V0)


def rotational_body_force(r0, L, g=GRAVITY, h_len=0.04):
    """Per-unit-mass force ``(0, y gamma, z gamma)`` with
    ``gamma = (20 g / h_len) sin(pi x / (2 L))``.
    """
    r0 = np.asarray(r0, dtype=float)
    gamma = (20.0 * g / h_len) * np.sin(math.pi * r0[:, 0] / (2.0 * L))
    out = np.zeros_like(r0)
    out[:, 1:] = r0[:, 1:] * gamma[:, None]
    return out


@dataclass(frozen=True)
class ContactPlane:
    """Penalty half-space ``{x : (x - point) . normal >= 0}``."""

    point: tuple
    normal: tuple
    stiffness: float

    def accel(self, r, m):
        n = np.asarray(self.normal, dtype=float)
        depth = (np.asarray(self.point, dtype=float) - r) @ n
        pen = np.maximum(depth, 0.0)
        return (self.stiffness * pen / m)[:, None] * n[None, :]


def contact_plane_force(position, mass, plane: ContactPlane):
    """Penalty acceleration on one particle: ``k delta n / m`` when penetrating."""
    r = np.asarray(position, dtype=float)[None, :]
    return plane.accel(r, np.asarray([mass], dtype=float))[0]


def default_contact_stiffness(K, dp, dim):
    return K * dp ** (dim - 2)


@dataclass
class Constraint:
    kind: str
    lower: tuple = None
    upper: tuple = None
    plane: ContactPlane = None

    def select(self, r0):
        if self.kind != "clamp_region":
            return np.zeros(len(r0), dtype=bool)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        return np.all((r0 >= lo) & (r0 <= hi), axis=1)


@dataclass
class CaseSpec:
    name: str
    dim: int
    dp: float
    material: Material
    body: Body
    damping: DampingConfig
    end_time: float
    probes: dict
    output_interval: float
    gravity: tuple = None
    constraints: list = field(default_factory=list)
    body_force: np.ndarray = None
    resolution: int = None
    geometry: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dp > 0.0:
            raise ValueError("dp must be positive")
        if not self.end_time >= 0.0:
            raise ValueError("end_time must be non-negative")

    @property
    def h(self) -> float:
        return 1.3 * self.dp

    def constrained_mask(self):
        mask = np.zeros(self.body.n, dtype=bool)
        for c in self.constraints:
            if c.kind == "clamp_region":
                sel = c.select(self.body.r0)
                if not sel.any():
                    raise ValueError(f"clamp region {c.lower}..{c.upper} selects no particle")
                mask |= sel
        return mask

    def contact_planes(self):
        return [c.plane for c in self.constraints if c.kind == "contact_plane"]

    def probe_indices(self):
        out = {}
        for name, target in self.probes.items():
            d2 = np.sum((self.body.r0 - np.asarray(target)) ** 2, axis=1)
            out[name] = int(np.argmin(d2))
        return out

    def with_damping(self, **changes) -> "CaseSpec":
        return replace(self, damping=replace(self.damping, **changes))


# -- built-in cases ---------------------------------------------------------

CANTILEVER_LENGTH = 0.1
CANTILEVER_THICKNESS = 0.04
CLAMP_LAYERS = 3
SOFT_RHO, SOFT_E, SOFT_NU = 1265.0, 5.0e4, 0.45
BALL_DIAMETER = 1.0
BALL_RHO, BALL_E, BALL_NU = 1000.0, 5.0e5, 0.45
BALL_DROP_GAP = 0.1


def _cantilever_body(resolution):
    d = CANTILEVER_THICKNESS
    dp = d / resolution
    holder = CLAMP_LAYERS * dp
    body = generate_box_lattice(
        (CANTILEVER_LENGTH + holder, d, d), dp, SOFT_RHO, origin=(-holder, -0.5 * d, -0.5 * d)
    )
    clamp = Constraint("clamp_region", lower=(-holder - dp, -d, -d), upper=(0.0, d, d))
    return dp, body, clamp


def bending_cantilever(resolution=6, **damping) -> CaseSpec:
    """Neo-Hookean cantilever clamped at ``x = 0`` bending under gravity."""
    dp, body, clamp = _cantilever_body(resolution)
    mat = material_from_young_poisson(SOFT_E, SOFT_NU, SOFT_RHO, NEO_HOOKEAN)
    beta = CANTILEVER_THICKNESS / CANTILEVER_LENGTH
    cfg = dict(scheme=PARTICLE_SPLIT, alpha=0.2, seed=0, beta=beta, L=CANTILEVER_THICKNESS, rho0=SOFT_RHO,
               eta=artificial_viscosity(beta, SOFT_RHO, SOFT_E, CANTILEVER_THICKNESS))
    cfg.update(damping)
    return CaseSpec(
        name="bending_cantilever",
        dim=3,
        dp=dp,
        material=mat,
        body=body,
        damping=DampingConfig(**cfg),
        end_time=1.5,
        probes={"S": (CANTILEVER_LENGTH, 0.0, 0.0)},
        output_interval=0.005,
        gravity=(0.0, -GRAVITY, 0.0),
        constraints=[clamp],
        resolution=resolution,
        geometry={"length": CANTILEVER_LENGTH, "thickness": CANTILEVER_THICKNESS, "clamp_layers": CLAMP_LAYERS},
    )


def twisting_cantilever(resolution=12, **damping) -> CaseSpec:
    """Cantilever clamped at ``x = 0`` loaded by the sinusoidal rotational body force."""
    spec = bending_cantilever(resolution, **damping)
    d = CANTILEVER_THICKNESS
    force = rotational_body_force(spec.body.r0, CANTILEVER_LENGTH, GRAVITY, h_len=d)
    return replace(
        spec,
        name="twisting_cantilever",
        gravity=None,
        body_force=force,
        probes={"S": (CANTILEVER_LENGTH, 0.5 * d, 0.5 * d)},
    )


def falling_ball(resolution=50, **damping) -> CaseSpec:
    """2D linear-elastic ball dropped onto a rigid penalty floor at ``y = 0``."""
    d = BALL_DIAMETER
    dp = d / resolution
    center = (0.0, 0.5 * d + BALL_DROP_GAP)
    body = generate_disk(center, d, dp, BALL_RHO)
    mat = material_from_young_poisson(BALL_E, BALL_NU, BALL_RHO, LINEAR_KIRCHHOFF)
    plane = ContactPlane(point=(0.0, 0.0), normal=(0.0, 1.0), stiffness=default_contact_stiffness(mat.K, dp, 2))
    cfg = dict(scheme=PARTICLE_SPLIT, alpha=1.0, seed=0, beta=1.0, L=d, rho0=BALL_RHO,
               eta=artificial_viscosity(1.0, BALL_RHO, BALL_E, d))
    cfg.update(damping)
    return CaseSpec(
        name="falling_ball",
        dim=2,
        dp=dp,
        material=mat,
        body=body,
        damping=DampingConfig(**cfg),
        end_time=4.0,
        probes={"center": center},
        output_interval=0.01,
        gravity=(0.0, -GRAVITY),
        constraints=[Constraint("contact_plane", plane=plane)],
        resolution=resolution,
        geometry={"diameter": d, "drop_gap": BALL_DROP_GAP},
    )


BUILTIN_CASES = {
    "bending_cantilever": bending_cantilever,
    "twisting_cantilever": twisting_cantilever,
    "falling_ball": falling_ball,
}


def builtin_cases():
    return dict(BUILTIN_CASES)


def make_case(name, resolution=None, **damping) -> CaseSpec:
    try:
        factory = BUILTIN_CASES[name]
    except KeyError:
        raise ValueError(f"unknown case {name!r}; available: {sorted(BUILTIN_CASES)}") from None
    return factory(**damping) if resolution is None else factory(resolution, **damping)
