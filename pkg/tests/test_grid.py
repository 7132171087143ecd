import numpy as np
import pytest
from hypothesis import given, strategies as st

from radcem.errors import InvalidArgument
from radcem.grid import CoarseGrid, FineGrid, build_coarse_grid, build_fine_grid, default_layers


@pytest.mark.parametrize("nx, nodes, interior", [(100, 101 * 101, 99 * 99), (2, 9, 1), (10, 121, 81)])
def test_fine_grid_counts(nx, nodes, interior):
    g = build_fine_grid(nx)
    assert g.n_nodes == nodes
    assert g.n_interior == interior
    assert g.h == pytest.approx(1.0 / nx)
    assert g.ny == nx


def test_fine_grid_rejects_small():
    with pytest.raises(InvalidArgument):
        FineGrid(1)


def test_boundary_flags():
    g = FineGrid(4)
    assert g.boundary_mask.sum() == 16
    assert np.all(g.dof_map[g.boundary_mask] == -1)
    assert np.array_equal(g.dof_map[g.interior_nodes], np.arange(9))


@pytest.mark.parametrize("nx, Nx, H, r, N, verts", [(100, 10, 0.1, 10, 100, 121),
                                                    (100, 20, 0.05, 5, 400, 441),
                                                    (20, 4, 0.25, 5, 16, 25)])
def test_coarse_grid_counts(nx, Nx, H, r, N, verts):
    c = build_coarse_grid(FineGrid(nx), Nx)
    assert c.H == pytest.approx(H)
    assert c.ratio == r
    assert c.n_blocks == N
    assert c.n_vertices == verts


def test_coarse_grid_requires_divisibility():
    with pytest.raises(InvalidArgument):
        CoarseGrid(FineGrid(10), 3)


def test_oversample_shapes():
    c = CoarseGrid(FineGrid(20), 4)
    inner = c.oversample(5, 1)  # block (1, 1)
    assert len(inner.blocks) == 9
    corner = c.oversample(0, 1)
    assert sorted(corner.blocks) == [0, 1, 4, 5]
    assert c.oversample(0, 0).blocks.tolist() == [0]


def test_oversample_saturates_to_domain():
    c = CoarseGrid(FineGrid(12), 3)
    for i in range(c.n_blocks):
        r = c.oversample(i, c.Nx)
        assert np.array_equal(np.sort(r.nodes), np.arange(c.fine.n_nodes))
        assert np.array_equal(np.sort(r.interior_nodes), c.fine.interior_nodes)


@pytest.mark.parametrize("H, m", [(0.1, 4), (0.01, 8), (0.2, 3), (0.05, 5)])
def test_default_layers(H, m):
    assert default_layers(H) == m


def test_default_layers_domain():
    with pytest.raises(InvalidArgument):
        default_layers(1.0)


@given(st.integers(1, 5), st.integers(2, 4), st.data())
def test_tiling_and_nesting(Nx, r, data):
    c = CoarseGrid(FineGrid(Nx * r), Nx)
    owners = np.concatenate([c.block_cells(i) for i in range(c.n_blocks)])
    assert np.array_equal(np.sort(owners), np.arange(c.fine.n_cells))
    i = data.draw(st.integers(0, c.n_blocks - 1))
    m = data.draw(st.integers(0, Nx))
    small, big = set(c.oversample(i, m).nodes), set(c.oversample(i, m + 1).nodes)
    assert small <= big
    assert set(c.block_nodes(i)) <= small


@given(st.integers(2, 30), st.data())
def test_index_round_trip(nx, data):
    g = FineGrid(nx)
    node = data.draw(st.integers(0, g.n_nodes - 1))
    ix, iy = g.node_ij(node)
    assert g.node_index(ix, iy) == node
