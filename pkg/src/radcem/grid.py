"""Uniform two-level structured grids on the unit square.

Nodes and cells are numbered lexicographically (x fastest). Coarse blocks are
numbered the same way on the coarse level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class FineGrid:
    nx: int

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 2:
            raise InvalidArgument(f"fine grid needs nx >= 2, got {self.nx}")

    @property
    def ny(self) -> int:
        return self.nx

    @property
    def h(self) -> float:
        return 1.0 / self.nx

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) ** 2

    @property
    def n_cells(self) -> int:
        return self.nx * self.nx

    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.nx + 1) + np.asarray(ix)

    def node_ij(self, node):
        return np.divmod(np.asarray(node), self.nx + 1)[::-1]

    @cached_property
    def node_coords(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.nx + 1)
        x, y = np.meshgrid(t, t)
        return np.column_stack([x.ravel(), y.ravel()])

    @cached_property
    def cell_centers(self) -> np.ndarray:
        t = (np.arange(self.nx) + 0.5) * self.h
        x, y = np.meshgrid(t, t)
        return np.column_stack([x.ravel(), y.ravel()])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 4) corner nodes ordered (x0,y0), (x1,y0), (x0,y1), (x1,y1)."""
        cx, cy = np.meshgrid(np.arange(self.nx), np.arange(self.nx))
        cx, cy = cx.ravel(), cy.ravel()
        ll = self.node_index(cx, cy)
        return np.column_stack([ll, ll + 1, ll + self.nx + 1, ll + self.nx + 2])

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        ix, iy = self.node_ij(np.arange(self.n_nodes))
        return (ix == 0) | (iy == 0) | (ix == self.nx) | (iy == self.nx)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Node -> interior dof index, -1 on the boundary."""
        m = np.full(self.n_nodes, -1, dtype=np.int64)
        m[self.interior_nodes] = np.arange(self.interior_nodes.size)
        return m

    @property
    def n_interior(self) -> int:
        return (self.nx - 1) ** 2


@dataclass(frozen=True)
class OversampleRegion:
    block: int
    layers: int
    # inclusive coarse block ranges of the clipped rectangle
    bx0: int
    bx1: int
    by0: int
    by1: int
    nodes: np.ndarray
    interior_mask: np.ndarray
    blocks: np.ndarray

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior_mask]


@dataclass(frozen=True)
class CoarseGrid:
    fine: FineGrid
    Nx: int

    def __post_init__(self):
        if int(self.Nx) != self.Nx or self.Nx < 1:
            raise InvalidArgument(f"coarse grid needs Nx >= 1, got {self.Nx}")
        if self.fine.nx % self.Nx:
            raise InvalidArgument(
                f"fine nx={self.fine.nx} is not a multiple of coarse Nx={self.Nx}")

    @property
    def Ny(self) -> int:
        return self.Nx

    @property
    def H(self) -> float:
        return 1.0 / self.Nx

    @property
    def ratio(self) -> int:
        return self.fine.nx // self.Nx

    @property
    def n_blocks(self) -> int:
        return self.Nx * self.Nx

    @property
    def n_vertices(self) -> int:
        return (self.Nx + 1) ** 2

    def block_ij(self, i: int) -> tuple[int, int]:
        by, bx = divmod(int(i), self.Nx)
        return bx, by

    @cached_property
    def vertex_coords(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.Nx + 1)
        x, y = np.meshgrid(t, t)
        return np.column_stack([x.ravel(), y.ravel()])

    @cached_property
    def cell_block(self) -> np.ndarray:
        """Coarse block owning each fine cell."""
        c = np.arange(self.fine.n_cells)
        cy, cx = np.divmod(c, self.fine.nx)
        return (cy // self.ratio) * self.Nx + cx // self.ratio

    def block_cells(self, i: int) -> np.ndarray:
        """Fine cells of block i, row-major within the block."""
        bx, by = self.block_ij(i)
        r = self.ratio
        cx, cy = np.meshgrid(np.arange(bx * r, bx * r + r), np.arange(by * r, by * r + r))
        return (cy * self.fine.nx + cx).ravel()

    def block_nodes(self, i: int) -> np.ndarray:
        """Fine nodes of the closed block i, row-major within the block."""
        bx, by = self.block_ij(i)
        return self._rect_nodes(bx, bx, by, by)

    def _rect_nodes(self, bx0, bx1, by0, by1):
        r = self.ratio
        ix, iy = np.meshgrid(np.arange(bx0 * r, (bx1 + 1) * r + 1),
                             np.arange(by0 * r, (by1 + 1) * r + 1))
        return self.fine.node_index(ix, iy).ravel()

    def oversample(self, i: int, m: int) -> OversampleRegion:
        if m < 0:
            raise InvalidArgument(f"layer count must be >= 0, got {m}")
        bx, by = self.block_ij(i)
        bx0, bx1 = max(bx - m, 0), min(bx + m, self.Nx - 1)
        by0, by1 = max(by - m, 0), min(by + m, self.Nx - 1)
        nodes = self._rect_nodes(bx0, bx1, by0, by1)
        r = self.ratio
        ix, iy = self.fine.node_ij(nodes)
        interior = ((ix > bx0 * r) & (ix < (bx1 + 1) * r)
                    & (iy > by0 * r) & (iy < (by1 + 1) * r))
        gx, gy = np.meshgrid(np.arange(bx0, bx1 + 1), np.arange(by0, by1 + 1))
        blocks = (gy * self.Nx + gx).ravel()
        return OversampleRegion(int(i), int(m), bx0, bx1, by0, by1, nodes, interior, blocks)


def build_fine_grid(nx: int) -> FineGrid:
    return FineGrid(nx)


def build_coarse_grid(fine: FineGrid, Nx: int) -> CoarseGrid:
    return CoarseGrid(fine, Nx)


def default_layers(H: float) -> int:
    """Oversampling layers 4*log(H)/log(1/10), rounded half-up."""
    if not 0.0 < H < 1.0:
        raise InvalidArgument(f"coarse mesh size must lie in (0, 1), got {H}")
    return int(math.floor(4.0 * math.log(H) / math.log(0.1) + 0.5))
