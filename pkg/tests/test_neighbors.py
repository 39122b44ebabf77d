import itertools
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphrelax.kernel import WendlandC2
from sphrelax.neighbors import (
    FORWARD,
    FORWARD_THEN_REVERSE,
    DegenerateGeometryError,
    StencilViolation,
    block_decompose,
    block_id_of,
    block_sweep,
    build_cell_grid,
    build_reference_neighborhoods,
    candidate_pairs,
    sweep_order,
)

from conftest import lattice


def brute_pairs(pos, cutoff):
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return {(i, j) for i, j in zip(*np.nonzero(d < cutoff))}


def grid_from_dims(dims, cutoff=1.0):
    # one particle at each cell centre yields exactly this grid
    centres = lattice(dims, cutoff) + 0.5 * cutoff
    return build_cell_grid(centres, cutoff)


class TestCellGrid:
    def test_single_particle(self):
        g = build_cell_grid(np.array([[0.3, 0.4]]), 1.0)
        assert g.n_cells == 1
        np.testing.assert_array_equal(g.particles_in(0), [0])

    def test_far_pair_not_candidates(self):
        pos = np.array([[0.0, 0.0], [2.5, 0.0]])
        g = build_cell_grid(pos, 1.0)
        ptr, idx = candidate_pairs(g, pos, 1.0)
        assert len(idx) == 0

    @pytest.mark.parametrize("dim", [2, 3])
    def test_matches_brute_force(self, dim):
        rng = np.random.default_rng(dim)
        pos = rng.uniform(0, 4, (200, dim))
        g = build_cell_grid(pos, 0.7)
        ptr, idx = candidate_pairs(g, pos, 0.7)
        got = {(i, int(j)) for i in range(len(pos)) for j in idx[ptr[i] : ptr[i + 1]]}
        assert got == brute_pairs(pos, 0.7)
        for i in range(len(pos)):
            row = idx[ptr[i] : ptr[i + 1]]
            assert np.all(np.diff(row) > 0)

    def test_x_fastest_indexing(self):
        g = grid_from_dims((4, 3, 2))
        assert g.cell_index((1, 2, 1)) == 1 + 4 * (2 + 3 * 1)
        assert g.cell_multi(g.cell_index((3, 1, 1))) == (3, 1, 1)

    def test_particles_sorted_within_cell(self):
        rng = np.random.default_rng(0)
        pos = rng.uniform(0, 3, (300, 2))
        g = build_cell_grid(pos, 1.0)
        for c in range(g.n_cells):
            p = g.particles_in(c)
            assert np.all(np.diff(p) > 0)
            assert np.all(g.cell_of[p] == c)

    @pytest.mark.parametrize("cutoff", [0.0, -1.0])
    def test_bad_cutoff(self, cutoff):
        with pytest.raises(ValueError):
            build_cell_grid(np.zeros((2, 2)), cutoff)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            build_cell_grid(np.array([[0.0, np.nan]]), 1.0)


class TestBlocks:
    def test_numbering_on_9x6_grid(self):
        # 9 x 6 cells numbered 1..54 along x first
        g = grid_from_dims((9, 6))
        blocks = block_decompose(g)
        assert blocks.n_blocks == 9
        assert sorted(int(c) + 1 for c in blocks.cells(0)) == [1, 4, 7, 28, 31, 34]
        assert sorted(int(c) + 1 for c in blocks.cells(8)) == [21, 24, 27, 48, 51, 54]

    @pytest.mark.parametrize("dims", [(1,), (5, 1), (7, 4), (3, 5, 4), (8, 2, 7)])
    def test_partition(self, dims):
        g = grid_from_dims(dims)
        blocks = block_decompose(g)
        assert blocks.n_blocks == 3 ** len(dims)
        assert sorted(blocks.block_cells.tolist()) == list(range(g.n_cells))
        for b in range(blocks.n_blocks):
            for c in blocks.cells(b):
                assert block_id_of(g.cell_multi(c)) == b

    @settings(max_examples=40, deadline=None)
    @given(dims=st.one_of(
        st.tuples(st.integers(1, 10), st.integers(1, 10)),
        st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
    ))
    def test_same_block_cells_never_adjacent_and_stencils_disjoint(self, dims):
        g = grid_from_dims(dims)
        blocks = block_decompose(g)
        for b in range(blocks.n_blocks):
            cells = blocks.cells(b)
            stencils = [set(g.stencil(int(c))) for c in cells]
            for (c1, s1), (c2, s2) in itertools.combinations(zip(cells, stencils), 2):
                m1, m2 = g.cell_multi(c1), g.cell_multi(c2)
                assert max(abs(a - b_) for a, b_ in zip(m1, m2)) >= 3
                assert not (s1 & s2)

    def test_sweep_order_reverse(self):
        g = grid_from_dims((4, 4))
        blocks = block_decompose(g)
        fwd = [list(c) for c in sweep_order(blocks)]
        rev = [list(c) for c in sweep_order(blocks, reverse=True)]
        assert [c[::-1] for c in fwd[::-1]] == rev


class TestReferenceNeighborhood:
    def test_isolated_particle(self):
        pos = np.array([[0.0, 0.0], [10.0, 0.0]])
        nbh = build_reference_neighborhoods(pos, 1.0, WendlandC2(1.0, 2))
        assert nbh.counts().tolist() == [0, 0]

    def test_pair_at_h(self):
        h = 0.5
        pos = np.array([[0.0, 0.0, 0.0], [h, 0.0, 0.0]])
        nbh = build_reference_neighborhoods(pos, 1.0, WendlandC2(h, 3))
        assert nbh.neighbors_of(0).tolist() == [1]
        assert nbh.neighbors_of(1).tolist() == [0]
        assert np.all(nbh.dwdr < 0)
        np.testing.assert_allclose(nbh.unit, [[-1, 0, 0], [1, 0, 0]])

    def test_lattice_interior_count(self):
        dp = 0.1
        pos = lattice((11, 11), dp)
        nbh = build_reference_neighborhoods(pos, dp * dp, WendlandC2(1.3 * dp, 2))
        centre = 5 * 11 + 5
        d = np.linalg.norm(pos - pos[centre], axis=1)
        assert nbh.counts()[centre] == int(np.sum((d > 0) & (d < 2.6 * dp)))

    def test_symmetry_and_sign(self):
        rng = np.random.default_rng(4)
        pos = lattice((6, 5, 4), 1.0, jitter=0.2)
        V0 = rng.uniform(0.5, 1.5, len(pos))
        nbh = build_reference_neighborhoods(pos, V0, WendlandC2(1.3, 3))
        lookup = {}
        for i in range(nbh.n):
            for q in range(nbh.ptr[i], nbh.ptr[i + 1]):
                lookup[(i, int(nbh.idx[q]))] = q
        for (i, j), q in lookup.items():
            p = lookup[(j, i)]
            assert nbh.pair_factor[q] == pytest.approx(nbh.pair_factor[p], rel=1e-14)
            np.testing.assert_allclose(nbh.unit[q], -nbh.unit[p], rtol=1e-14)
            ref = 2 * V0[i] * V0[j] * nbh.dwdr[q] / nbh.dist[q]
            assert nbh.pair_factor[q] == pytest.approx(ref, rel=1e-14)
        assert np.all(nbh.pair_factor <= 0)
        np.testing.assert_allclose(nbh.wgrad, V0[nbh.idx][:, None] * nbh.grad_w(), rtol=1e-14)

    def test_coincident_particles(self):
        pos = np.array([[0.0, 0.0], [0.0, 0.0], [0.5, 0.0]])
        with pytest.raises(DegenerateGeometryError):
            build_reference_neighborhoods(pos, 1.0, WendlandC2(1.0, 2))


class TestBlockSweep:
    def _setup(self, dims=(10, 8)):
        rng = np.random.default_rng(1)
        pos = rng.uniform(0, 1, (600, len(dims))) * np.array(dims, dtype=float)
        g = build_cell_grid(pos, 1.0)
        return g, block_decompose(g), rng

    def _gs_task(self, g, values):
        # Gauss-Seidel style update touching the whole stencil of the cell
        def task(cell, reverse):
            own = g.particles_in(cell)
            nbr = np.concatenate([g.particles_in(c) for c in g.stencil(cell)])
            for i in (own[::-1] if reverse else own):
                m = values[nbr].mean()
                values[i] = 0.5 * values[i] + 0.25 * m + 0.1 * np.sin(values[i])
                values[nbr] += 1e-3 * (values[i] - values[nbr])
            return nbr
        return task

    def test_threaded_equals_serial(self):
        g, blocks, rng = self._setup()
        v0 = rng.standard_normal(len(g.cell_of))
        a, b = v0.copy(), v0.copy()
        block_sweep(blocks, self._gs_task(g, a), FORWARD_THEN_REVERSE, threads=1)
        block_sweep(blocks, self._gs_task(g, b), FORWARD_THEN_REVERSE, threads=4, grid=g, debug=True)
        np.testing.assert_array_equal(a, b)

    def test_each_cell_once_per_pass(self):
        g, blocks, _ = self._setup((5, 4, 3))
        seen = []
        lock = threading.Lock()

        def task(cell, reverse):
            with lock:
                seen.append((cell, reverse))

        block_sweep(blocks, task, FORWARD_THEN_REVERSE, threads=3)
        fwd = sorted(c for c, r in seen if not r)
        rev = sorted(c for c, r in seen if r)
        assert fwd == rev == list(range(g.n_cells))

    def test_single_cell_grid_is_serial(self):
        g = build_cell_grid(np.random.default_rng(0).uniform(0, 0.5, (20, 2)), 1.0)
        blocks = block_decompose(g)
        order = []
        block_sweep(blocks, lambda c, r: order.append((c, r)), FORWARD_THEN_REVERSE, threads=4)
        assert order == [(0, False), (0, True)]

    def test_stencil_violation_detected(self):
        g, blocks, _ = self._setup()
        far = int(g.particles_in(g.n_cells - 1)[0])

        def bad_task(cell, reverse):
            return [far] if cell == 0 else list(g.particles_in(cell))

        with pytest.raises(StencilViolation):
            block_sweep(blocks, bad_task, FORWARD, grid=g, debug=True)

    def test_bad_schedule(self):
        g, blocks, _ = self._setup()
        with pytest.raises(ValueError):
            block_sweep(blocks, lambda c, r: None, "sideways")
        with pytest.raises(ValueError):
            block_sweep(blocks, lambda c, r: None, FORWARD, debug=True)
