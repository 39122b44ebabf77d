"""Time loop: elastic Verlet step, random-choice damping, probes and output."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .cases import CaseSpec
from .damping import EXPLICIT, DampingOperator
from .kernel import WendlandC2
from .neighbors import build_reference_neighborhoods
from .state import InvertedElementError, ParticleSystem, first_pk, second_pk, von_mises
from .tlsph import compute_correction_matrices, momentum_rhs, stable_dt, strain_energy, verlet_step

log = logging.getLogger(__name__)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class SolverFailure(RuntimeError):
    def __init__(self, message, step=None, particle=None):
        super().__init__(message)
        self.step = step
        self.particle = particle


@dataclass
class ProbeSeries:
    dim: int
    t: list = field(default_factory=list)
    u: list = field(default_factory=list)

    def append(self, t, u):
        self.t.append(float(t))
        self.u.append(np.array(u, dtype=float))

    def as_arrays(self):
        return np.array(self.t), np.array(self.u).reshape(len(self.t), self.dim)


@dataclass
class RunReport:
    steps: int = 0
    damping_steps: int = 0
    time_elastic: float = 0.0
    time_damping: float = 0.0
    time_neighbors: float = 0.0
    time_total: float = 0.0
    threads: int = 1
    end_time: float = 0.0
    final_probes: dict = field(default_factory=dict)
    steady: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "steps": self.steps,
            "damping_steps": self.damping_steps,
            "time_elastic": self.time_elastic,
            "time_damping": self.time_damping,
            "time_neighbors": self.time_neighbors,
            "time_total": self.time_total,
            "threads": self.threads,
            "end_time": self.end_time,
            "final_probes": {k: list(map(float, v)) for k, v in self.final_probes.items()},
            "steady": self.steady,
        }


def is_steady(t, u, window=0.1, tol=0.01):
    """Range over the trailing ``window`` fraction is below ``tol * |mean|``."""
    t = np.asarray(t)
    u = np.asarray(u)
    if len(t) < 2:
        return False
    tail = u[t >= t[-1] - window * (t[-1] - t[0])]
    mean = abs(float(np.mean(tail)))
    return bool(np.ptp(tail) < tol * mean) if mean > 0 else bool(np.ptp(tail) == 0.0)


def settling_time(t, u, reference, tol=0.02):
    """Earliest time after which ``|u - reference| <= tol |reference|`` holds for good.

    Returns ``inf`` when the last sample is still outside the band.
    """
    t = np.asarray(t)
    u = np.asarray(u)
    outside = np.abs(u - reference) > tol * abs(reference)
    if outside[-1]:
        return math.inf
    bad = np.flatnonzero(outside)
    return float(t[0] if len(bad) == 0 else t[bad[-1] + 1])


def window_settle_time(t, u, window, tol=0.01):
    """Start of the first trailing window after which every window is steady.

    A window ``(t_k - window, t_k]`` is steady when its range is below
    ``tol`` times the absolute mean. Returns ``inf`` if the final window is not.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    ok = np.zeros(len(t), dtype=bool)
    for k in range(len(t)):
        if t[k] - t[0] < window:
            continue
        seg = u[(t > t[k] - window) & (t <= t[k])]
        mean = abs(float(seg.mean()))
        ok[k] = np.ptp(seg) <= tol * mean if mean > 0 else np.ptp(seg) == 0.0
    if len(t) == 0 or not ok[-1]:
        return math.inf
    bad = np.flatnonzero(~ok)
    k = bad[-1] + 1 if len(bad) else 0
    return float(max(t[k] - window, t[0]))


def oscillation_mean(t, u):
    """Mean of an oscillating signal over whole periods.

    Averages between the first and last upward crossings of the running
    mean (iterated twice), trapezoid-weighted in time.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    mean = float(_trapezoid(u, t) / (t[-1] - t[0]))
    for _ in range(2):
        s = u - mean
        up = np.flatnonzero((s[:-1] < 0) & (s[1:] >= 0))
        if len(up) < 2:
            return mean
        a, b = up[0], up[-1] + 1
        mean = float(_trapezoid(u[a:b + 1], t[a:b + 1]) / (t[b] - t[a]))
    return mean


class Simulation:
    """One elastic body advanced with optional random-choice damping."""

    def __init__(self, spec: CaseSpec, parallel=True, fixed_dt=None):
        self.spec = spec
        self.parallel = parallel
        self.fixed_dt = fixed_dt
        self.report = RunReport(threads=numba.get_num_threads() if parallel else 1)
        body = spec.body
        self.system = ParticleSystem(r0=body.r0, V0=body.V0, rho0=spec.material.rho0)
        self.system.m[:] = body.m
        self.system.is_constrained[:] = spec.constrained_mask()
        self.kernel = WendlandC2(spec.h, spec.dim)
        t0 = time.perf_counter()
        self.nbh = build_reference_neighborhoods(self.system.r0, self.system.V0, self.kernel)
        compute_correction_matrices(self.system, self.nbh)
        self.report.time_neighbors = time.perf_counter() - t0
        self.damper = DampingOperator(spec.damping, parallel=parallel)
        self._gravity = None if spec.gravity is None else np.asarray(spec.gravity, dtype=float)
        self._planes = spec.contact_planes()
        self.t = 0.0
        self.step_count = 0
        self.probe_ids = spec.probe_indices()
        self.series = {k: ProbeSeries(spec.dim) for k in self.probe_ids}
        momentum_rhs(self.system, self.nbh, spec.material, self.external_accel)

    def external_accel(self, system):
        a = np.zeros_like(system.r)
        if self._gravity is not None:
            a += self._gravity
        if self.spec.body_force is not None:
            a += self.spec.body_force
        for plane in self._planes:
            a += plane.accel(system.r, system.m)
        return a

    def time_step(self) -> float:
        if self.fixed_dt is not None:
            return self.fixed_dt
        sizes = stable_dt(self.system, self.spec.material, self.spec.h)
        limit = self.damper.dt_limit(self.spec.h, self.spec.material.rho0, self.spec.dim)
        return min(sizes.dt, limit)

    def step(self, dt=None):
        dt = self.time_step() if dt is None else dt
        t0 = time.perf_counter()
        try:
            verlet_step(self.system, self.nbh, self.spec.material, dt, self.external_accel)
        except InvertedElementError as exc:
            raise SolverFailure(f"inverted element at step {self.step_count + 1}: {exc}",
                                step=self.step_count + 1, particle=exc.particle) from exc
        t1 = time.perf_counter()
        applied = self.damper.apply(self.system, self.nbh, dt)
        t2 = time.perf_counter()
        if applied:
            self.system.apply_constraints()
        self.report.time_elastic += t1 - t0
        self.report.time_damping += t2 - t1
        self.report.damping_steps += int(applied)
        self.t += dt
        self.step_count += 1
        if not np.all(np.isfinite(self.system.v)):
            bad = int(np.flatnonzero(~np.isfinite(self.system.v).all(axis=1))[0])
            raise SolverFailure(f"non-finite velocity at step {self.step_count}, particle {bad}",
                                step=self.step_count, particle=bad)
        return dt

    def record(self):
        u = self.system.u
        for name, i in self.probe_ids.items():
            self.series[name].append(self.t, u[i])

    def run(self, end_time=None, on_output=None, interval=None):
        end_time = self.spec.end_time if end_time is None else end_time
        interval = self.spec.output_interval if interval is None else interval
        start = time.perf_counter()
        self.record()
        if on_output:
            on_output(self, 0)
        next_out = 1
        eps = 1e-9 * interval
        while self.t < end_time - eps:
            # Only the final step is shortened. Trimming steps at every output
            # time modulates dt periodically, which pumps the highest-frequency
            # mode of the undamped leapfrog near its stability limit.
            dt = self.time_step()
            last = self.t + dt >= end_time - eps
            self.step(end_time - self.t if last else dt)
            if last:
                self.t = end_time
            if last or self.t >= next_out * interval - eps:
                self.record()
                if on_output:
                    on_output(self, next_out)
                next_out = int(math.floor((self.t + eps) / interval)) + 1
        rep = self.report
        rep.steps = self.step_count
        rep.end_time = self.t
        rep.time_total += time.perf_counter() - start
        rep.final_probes = {k: s.u[-1] for k, s in self.series.items()}
        for name, s in self.series.items():
            t, u = s.as_arrays()
            rep.steady[name] = is_steady(t, u[:, 1] if self.spec.dim > 1 else u[:, 0])
        return rep

    def energy(self) -> dict:
        """Kinetic, strain and gravitational potential energy of the body."""
        sysm = self.system
        pot = 0.0
        if self._gravity is not None:
            pot = -float(np.sum(sysm.m * (sysm.u @ self._gravity)))
        return {
            "kinetic": sysm.kinetic_energy(),
            "strain": strain_energy(sysm, self.spec.material),
            "potential": pot,
        }

    def von_mises(self) -> np.ndarray:
        F = self.system.F
        P = first_pk(F, second_pk(F, self.spec.material))
        return von_mises(F, P)


def write_probe_csv(series: ProbeSeries, path):
    """``t,ux,uy[,uz]`` with 17 significant digits and LF line endings."""
    if not series.t:
        raise ValueError("empty probe series")
    cols = ["t", "ux", "uy", "uz"][: series.dim + 1]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for t, u in zip(series.t, series.u):
            fh.write(",".join(f"{x:.17g}" for x in (t, *u)) + "\n")


def write_snapshot(sim_or_system, path, vm=None):
    """``id,x,y[,z],vx,vy[,vz],von_mises`` for every particle."""
    if isinstance(sim_or_system, Simulation):
        system = sim_or_system.system
        vm = sim_or_system.von_mises() if vm is None else vm
    else:
        system = sim_or_system
        if vm is None:
            raise ValueError("von Mises values are required when writing a bare ParticleSystem")
    d = system.dim
    axes = "xyz"[:d]
    header = ["id", *axes, *(f"v{a}" for a in axes), "von_mises"]
    data = np.column_stack([system.r, system.v, vm])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(data):
            fh.write(f"{i}," + ",".join(f"{x:.17g}" for x in row) + "\n")


def run(spec: CaseSpec, output_dir=None, parallel=True, snapshot_interval=None, end_time=None):
    """Run a case; optionally write probe CSVs, snapshots and a report."""
    sim = Simulation(spec, parallel=parallel)
    snap_every = None
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        if snapshot_interval:
            snap_every = max(1, int(round(snapshot_interval / spec.output_interval)))

    def on_output(s, k):
        if snap_every and k % snap_every == 0:
            write_snapshot(s, os.path.join(output_dir, f"snapshot_{k:06d}.csv"))

    report = sim.run(end_time=end_time, on_output=on_output if snap_every else None)
    if output_dir is not None:
        for name, series in sim.series.items():
            write_probe_csv(series, os.path.join(output_dir, f"probe_{name}.csv"))
    return sim, report
