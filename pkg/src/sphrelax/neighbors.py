"""Reference-configuration neighbor search and the splitting cell-linked list.

Cells have edge length equal to the kernel cut-off, so all neighbors of a
particle live in the ``3^dim`` stencil around its cell. Cells are colored by
their per-axis index modulo 3, giving 9 (2D) or 27 (3D) blocks; two cells of
the same block are at least three cells apart along some axis, so their
stencils never overlap and can be swept concurrently.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

FORWARD = "forward"
FORWARD_THEN_REVERSE = "forward_then_reverse"


class DegenerateGeometryError(ValueError):
    pass


class StencilViolation(RuntimeError):
    pass


@dataclass
class CellGrid:
    origin: np.ndarray
    cell_size: float
    dims: tuple
    cell_of: np.ndarray
    cell_ptr: np.ndarray
    cell_particles: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def dim(self) -> int:
        return len(self.dims)

    def cell_index(self, multi) -> int:
        """Linear index, x fastest: ``ix + nx * (iy + ny * iz)``."""
        idx = 0
        stride = 1
        for k, n in zip(multi, self.dims):
            idx += int(k) * stride
            stride *= n
        return idx

    def cell_multi(self, idx) -> tuple:
        out = []
        for n in self.dims:
            out.append(int(idx) % n)
            idx = int(idx) // n
        return tuple(out)

    def particles_in(self, cell: int) -> np.ndarray:
        return self.cell_particles[self.cell_ptr[cell] : self.cell_ptr[cell + 1]]

    def stencil(self, cell: int) -> list:
        """Cells within Chebyshev distance 1 of ``cell`` (including itself)."""
        base = self.cell_multi(cell)
        out = []
        for off in itertools.product((-1, 0, 1), repeat=self.dim):
            m = [b + o for b, o in zip(base, off)]
            if all(0 <= k < n for k, n in zip(m, self.dims)):
                out.append(self.cell_index(m))
        return sorted(out)


def build_cell_grid(positions, cutoff) -> CellGrid:
    """Bin particles into a uniform grid of cells with edge ``cutoff``.

    Particles in each cell are stored in ascending index order.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[0] == 0:
        raise ValueError("need a non-empty (N, dim) array of positions")
    if not cutoff > 0.0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    dims = tuple(int(k) for k in np.floor((hi - lo) / cutoff).astype(int) + 1)
    multi = np.floor((pos - lo) / cutoff).astype(np.int64)
    multi = np.minimum(multi, np.array(dims) - 1)
    strides = np.cumprod((1,) + dims[:-1])
    cell_of = (multi * strides).sum(axis=1)
    n_cells = int(np.prod(dims))
    order = np.argsort(cell_of, kind="stable")
    counts = np.bincount(cell_of, minlength=n_cells)
    cell_ptr = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_ptr[1:])
    return CellGrid(
        origin=lo,
        cell_size=float(cutoff),
        dims=dims,
        cell_of=cell_of.astype(np.int64),
        cell_ptr=cell_ptr,
        cell_particles=order.astype(np.int64),
    )


@dataclass
class BlockDecomposition:
    """Cells grouped by per-axis residue mod 3 (block id ``rx + 3 ry + 9 rz``)."""

    block_ptr: np.ndarray
    block_cells: np.ndarray

    @property
    def n_blocks(self) -> int:
        return len(self.block_ptr) - 1

    def cells(self, block: int) -> np.ndarray:
        return self.block_cells[self.block_ptr[block] : self.block_ptr[block + 1]]

    @property
    def blocks(self) -> list:
        return [self.cells(b) for b in range(self.n_blocks)]


def block_id_of(multi) -> int:
    bid = 0
    w = 1
    for k in multi:
        bid += (int(k) % 3) * w
        w *= 3
    return bid


def block_decompose(grid: CellGrid) -> BlockDecomposition:
    dims = np.array(grid.dims)
    idx = np.arange(grid.n_cells)
    bid = np.zeros(grid.n_cells, dtype=np.int64)
    rem = idx.copy()
    w = 1
    for n in dims:
        bid += (rem % n) % 3 * w
        rem //= n
        w *= 3
    n_blocks = 3 ** grid.dim
    order = np.argsort(bid, kind="stable")
    counts = np.bincount(bid, minlength=n_blocks)
    ptr = np.zeros(n_blocks + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return BlockDecomposition(block_ptr=ptr, block_cells=idx[order].astype(np.int64))


@dataclass
class ReferenceNeighborhood:
    """Fixed neighbor lists in CSR layout with cached reference quantities.

    ``pair_factor`` is ``2 V0_i V0_j (dW/dr)_0 / |r0_ij|``; the damping
    coefficient of a pair over a sub-step ``dt`` is ``eta * pair_factor * dt``.
    """

    ptr: np.ndarray
    idx: np.ndarray
    dist: np.ndarray
    unit: np.ndarray
    dwdr: np.ndarray
    pair_factor: np.ndarray
    grid: CellGrid
    blocks: BlockDecomposition
    wgrad: np.ndarray = None
    cgrad: np.ndarray = None

    @property
    def n(self) -> int:
        return len(self.ptr) - 1

    def neighbors_of(self, i: int) -> np.ndarray:
        return self.idx[self.ptr[i] : self.ptr[i + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.ptr)

    def grad_w(self) -> np.ndarray:
        """Reference kernel gradients ``(dW/dr)_0 e0_ij`` per stored pair."""
        return self.dwdr[:, None] * self.unit


@nb.njit(cache=True)
def _search(pos, cutoff, dims, cell_ptr, cell_particles, cell_of, count_only, ptr, out):
    n, d = pos.shape
    c2 = cutoff * cutoff
    nx = dims[0]
    ny = dims[1] if d > 1 else 1
    nz = dims[2] if d > 2 else 1
    total = 0
    for i in range(n):
        c = cell_of[i]
        ix = c % nx
        iy = (c // nx) % ny
        iz = c // (nx * ny)
        cnt = 0
        start = ptr[i]
        for dz in range(-1 if d > 2 else 0, 2 if d > 2 else 1):
            z = iz + dz
            if z < 0 or z >= nz:
                continue
            for dy in range(-1, 2):
                y = iy + dy
                if y < 0 or y >= ny:
                    continue
                for dx in range(-1, 2):
                    x = ix + dx
                    if x < 0 or x >= nx:
                        continue
                    cc = x + nx * (y + ny * z)
                    for q in range(cell_ptr[cc], cell_ptr[cc + 1]):
                        j = cell_particles[q]
                        if j == i:
                            continue
                        r2 = 0.0
                        for k in range(d):
                            dd = pos[i, k] - pos[j, k]
                            r2 += dd * dd
                        if r2 < c2:
                            if not count_only:
                                out[start + cnt] = j
                            cnt += 1
        if count_only:
            ptr[i + 1] = cnt
        else:
            out[start : start + cnt].sort()
        total += cnt
    return total


def candidate_pairs(grid: CellGrid, positions, cutoff) -> tuple:
    """Return CSR ``(ptr, idx)`` of all pairs closer than ``cutoff``."""
    pos = np.ascontiguousarray(positions, dtype=float)
    n, d = pos.shape
    dims = np.array(list(grid.dims) + [1] * (3 - d), dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    empty = np.empty(0, dtype=np.int64)
    _search(pos, cutoff, dims, grid.cell_ptr, grid.cell_particles, grid.cell_of, True, ptr, empty)
    np.cumsum(ptr, out=ptr)
    idx = np.empty(ptr[-1], dtype=np.int64)
    _search(pos, cutoff, dims, grid.cell_ptr, grid.cell_particles, grid.cell_of, False, ptr, idx)
    return ptr, idx


def build_reference_neighborhoods(r0, V0, kernel) -> ReferenceNeighborhood:
    """Neighbor lists on the reference configuration with cached kernel data."""
    r0 = np.ascontiguousarray(r0, dtype=float)
    n = r0.shape[0]
    V0 = np.broadcast_to(np.asarray(V0, dtype=float), (n,))
    cutoff = kernel.support_radius
    grid = build_cell_grid(r0, cutoff)
    ptr, idx = candidate_pairs(grid, r0, cutoff)
    owner = np.repeat(np.arange(n), np.diff(ptr))
    rij = r0[owner] - r0[idx]
    dist = np.sqrt(np.sum(rij * rij, axis=1))
    if np.any(dist == 0.0):
        k = int(np.argmax(dist == 0.0))
        raise DegenerateGeometryError(
            f"particles {owner[k]} and {idx[k]} coincide in the reference configuration"
        )
    unit = rij / dist[:, None] if len(dist) else np.zeros((0, r0.shape[1]))
    dwdr = np.asarray(kernel.grad_mag(dist), dtype=float).reshape(-1)
    pair_factor = 2.0 * V0[owner] * V0[idx] * dwdr / dist if len(dist) else np.zeros(0)
    return ReferenceNeighborhood(
        ptr=ptr,
        idx=idx,
        dist=dist,
        unit=np.ascontiguousarray(unit),
        dwdr=dwdr,
        pair_factor=pair_factor,
        grid=grid,
        blocks=block_decompose(grid),
        wgrad=np.ascontiguousarray(V0[idx][:, None] * dwdr[:, None] * unit),
    )


def sweep_order(blocks: BlockDecomposition, reverse=False):
    """Yield blocks as lists of cells in the order a sweep visits them."""
    order = range(blocks.n_blocks - 1, -1, -1) if reverse else range(blocks.n_blocks)
    for b in order:
        cells = blocks.cells(b)
        yield cells[::-1] if reverse else cells


def block_sweep(blocks, cell_task, schedule=FORWARD, threads=1, grid=None, debug=False):
    """Run ``cell_task(cell, reverse)`` over every cell, block by block.

    Blocks run strictly in sequence; cells inside one block may run
    concurrently on up to ``threads`` workers. A reverse pass reverses both
    the block order and the cell order within each block.

    With ``debug=True`` the task must return the particle indices it
    touched; any index outside the cell's stencil raises
    :class:`StencilViolation` (``grid`` is then required).
    """
    if schedule not in (FORWARD, FORWARD_THEN_REVERSE):
        raise ValueError(f"unknown schedule {schedule!r}")
    if debug and grid is None:
        raise ValueError("debug checking needs the cell grid")
    passes = [False] if schedule == FORWARD else [False, True]

    def run_one(cell, reverse):
        touched = cell_task(int(cell), reverse)
        if debug:
            allowed = np.concatenate([grid.particles_in(c) for c in grid.stencil(int(cell))])
            bad = np.setdiff1d(np.asarray(touched if touched is not None else [], dtype=np.int64), allowed)
            if len(bad):
                raise StencilViolation(f"cell {cell} task touched particles {bad[:5].tolist()} outside its stencil")

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for reverse in passes:
            for cells in sweep_order(blocks, reverse):
                if pool is None:
                    for c in cells:
                        run_one(c, reverse)
                else:
                    list(pool.map(lambda c: run_one(c, reverse), cells))
    finally:
        if pool is not None:
            pool.shutdown()
