"""Bilinear (Q1) finite-element assembly on the fine grid.

All matrices are assembled from per-cell constant weights times a reference
element matrix. `CellAssembler` precomputes the CSR pattern once so that
reweighted matrices (the radiation term changes every stage) only cost a
bincount.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, InvariantViolation
from .fields import ScalarField
from .grid import FineGrid

# corner order (x0,y0), (x1,y0), (x0,y1), (x1,y1)
MASS_REF = np.array([[4.0, 2.0, 2.0, 1.0],
                     [2.0, 4.0, 1.0, 2.0],
                     [2.0, 1.0, 4.0, 2.0],
                     [1.0, 2.0, 2.0, 4.0]]) / 36.0
STIFF_REF = np.array([[4.0, -1.0, -1.0, -2.0],
                      [-1.0, 4.0, -2.0, -1.0],
                      [-1.0, -2.0, 4.0, -1.0],
                      [-2.0, -1.0, -1.0, 4.0]]) / 6.0


def mass_element(h: float) -> np.ndarray:
    return MASS_REF * h * h


class CellAssembler:
    """Assembles sum_c w_c * K_ref over cells into a fixed CSR pattern.

    `cell_nodes` lists the four corner nodes per cell; `dof_map` sends node
    numbers to matrix rows (-1 drops the node, which is how Dirichlet nodes
    are eliminated).
    """

    def __init__(self, cell_nodes: np.ndarray, dof_map: np.ndarray, n_dofs: int):
        self.n_dofs = int(n_dofs)
        self.n_cells = cell_nodes.shape[0]
        dofs = dof_map[cell_nodes]
        self.cell_dofs = dofs
        rows = np.repeat(dofs, 4, axis=1)
        cols = np.tile(dofs, (1, 4))
        keep = (rows >= 0) & (cols >= 0)
        self._keep = keep
        r, c = rows[keep], cols[keep]
        key = r * self.n_dofs + c
        uniq, inv = np.unique(key, return_inverse=True)
        self._slot = inv
        self.nnz = uniq.size
        ur, uc = np.divmod(uniq, self.n_dofs)
        indptr = np.zeros(self.n_dofs + 1, dtype=np.int64)
        np.add.at(indptr, ur + 1, 1)
        self.indptr = np.cumsum(indptr)
        self.indices = uc

    def assemble(self, weights, ref: np.ndarray) -> sp.csr_matrix:
        weights = np.broadcast_to(np.asarray(weights, dtype=float), (self.n_cells,))
        local = weights[:, None] * ref.ravel()[None, :]
        data = np.bincount(self._slot, weights=local[self._keep], minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                             shape=(self.n_dofs, self.n_dofs))

    @cached_property
    def gather(self) -> sp.csr_matrix:
        """(4*n_cells, n_dofs) map from dof values to cell-corner values."""
        flat = self.cell_dofs.ravel()
        ok = flat >= 0
        rows = np.flatnonzero(ok)
        return sp.csr_matrix((np.ones(rows.size), (rows, flat[ok])),
                             shape=(flat.size, self.n_dofs))

    @cached_property
    def cell_average(self) -> sp.csr_matrix:
        """(n_cells, n_dofs) averaging of the four corner values; dropped nodes count as 0."""
        rows = np.repeat(np.arange(self.n_cells), 4)
        flat = self.cell_dofs.ravel()
        ok = flat >= 0
        return sp.csr_matrix((np.full(ok.sum(), 0.25), (rows[ok], flat[ok])),
                             shape=(self.n_cells, self.n_dofs))

    @cached_property
    def corner_gathers(self) -> tuple:
        """Per-corner (n_cells, n_dofs) selection matrices and their transposes."""
        g = []
        for a in range(4):
            d = self.cell_dofs[:, a]
            ok = d >= 0
            Ga = sp.csr_matrix((np.ones(ok.sum()), (np.flatnonzero(ok), d[ok])),
                               shape=(self.n_cells, self.n_dofs))
            g.append((Ga, Ga.T.tocsr()))
        return tuple(g)

    def weighted_action(self, weights: np.ndarray, X: np.ndarray, ref: np.ndarray) -> np.ndarray:
        """Apply sum_c w_c K_ref to each column of X without forming the matrix.

        `weights` is (n_cells,) or (n_cells, k) with one weight column per column of X.
        """
        X2 = X.reshape(X.shape[0], -1)
        w = np.asarray(weights, dtype=float).reshape(self.n_cells, -1)
        gathers = self.corner_gathers
        corner = [G @ X2 for G, _ in gathers]
        out = np.zeros_like(X2, dtype=float)
        for a, (_, GT) in enumerate(gathers):
            local = sum(ref[a, b] * corner[b] for b in range(4))
            out += GT @ (w * local)
        return out.reshape(X.shape)


def full_assembler(grid: FineGrid) -> CellAssembler:
    return CellAssembler(grid.cell_nodes, np.arange(grid.n_nodes), grid.n_nodes)


def interior_assembler(grid: FineGrid) -> CellAssembler:
    return CellAssembler(grid.cell_nodes, grid.dof_map, grid.n_interior)


def _positive_cells(field: ScalarField, name: str, allow_zero: bool = False) -> np.ndarray:
    if field.kind != "coefficient":
        raise InvalidArgument(f"{name} must be a per-cell coefficient field")
    bad = field.values < 0 if allow_zero else field.values <= 0
    if np.any(bad):
        word = "nonnegative" if allow_zero else "positive"
        raise InvariantViolation(f"{name} must be {word}, min is {field.values.min()}")
    return field.values


def assemble_mass(grid: FineGrid, assembler: CellAssembler | None = None) -> sp.csr_matrix:
    asm = assembler or full_assembler(grid)
    return asm.assemble(1.0, mass_element(grid.h))


def assemble_stiffness(grid: FineGrid, kappa: ScalarField,
                       assembler: CellAssembler | None = None) -> sp.csr_matrix:
    asm = assembler or full_assembler(grid)
    return asm.assemble(_positive_cells(kappa, "kappa"), STIFF_REF)


def radiation_weights(sigma_cells: np.ndarray, cell_average: sp.csr_matrix, z: np.ndarray):
    """Per-cell sigma * (corner-average of z)**3; columns of z give columns of weights."""
    zbar = cell_average @ z
    if zbar.ndim == 2:
        return sigma_cells[:, None] * zbar ** 3
    return sigma_cells * zbar ** 3


def assemble_radiation(grid: FineGrid, sigma: ScalarField, z,
                       assembler: CellAssembler | None = None) -> sp.csr_matrix:
    """Weighted mass matrix with per-cell weight sigma * zbar**3.

    `z` is nodal: either a full-grid vector or a ScalarField of kind 'nodal'.
    """
    asm = assembler or full_assembler(grid)
    zv = z.values if isinstance(z, ScalarField) else np.asarray(z, dtype=float)
    if zv.shape != (asm.n_dofs,):
        raise InvalidArgument(f"nodal field needs {asm.n_dofs} values, got {zv.shape}")
    w = radiation_weights(sigma.values, asm.cell_average, zv)
    return asm.assemble(w, mass_element(grid.h))


def assemble_load(grid: FineGrid, f, t: float) -> np.ndarray:
    """Midpoint rule per cell: f(centre, t) * h^2/4 to each corner (full-grid vector)."""
    c = grid.cell_centers
    fc = np.broadcast_to(np.asarray(f(c[:, 0], c[:, 1], t), dtype=float), (grid.n_cells,))
    share = np.repeat(fc * (grid.h * grid.h / 4.0), 4)
    return np.bincount(grid.cell_nodes.ravel(), weights=share, minlength=grid.n_nodes)


def basis_integrals(grid: FineGrid) -> np.ndarray:
    """Integral of every nodal basis function (equals the mass row sums)."""
    return np.bincount(grid.cell_nodes.ravel(), minlength=grid.n_nodes) * (grid.h * grid.h / 4.0)


def assemble_noise_load(grid: FineGrid, wdot_value: float) -> np.ndarray:
    return wdot_value * basis_integrals(grid)


def apply_dirichlet(obj, grid: FineGrid):
    """Drop boundary rows/columns of a full-grid matrix or vector."""
    keep = grid.interior_nodes
    if sp.issparse(obj):
        return sp.csr_matrix(obj)[keep][:, keep]
    arr = np.asarray(obj)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1] == grid.n_nodes:
        return arr[np.ix_(keep, keep)]
    return arr[keep]


def expand(v: np.ndarray, grid: FineGrid) -> np.ndarray:
    """Interior dof vector(s) -> full nodal vector(s) with zeros on the boundary."""
    v = np.asarray(v)
    out = np.zeros((grid.n_nodes,) + v.shape[1:])
    out[grid.interior_nodes] = v
    return out


def l2_error(grid: FineGrid, v: np.ndarray, func) -> float:
    """Continuous L2 distance between the Q1 field v (full nodal vector) and func(x, y).

    3x3 Gauss quadrature per cell.
    """
    pts, wts = np.polynomial.legendre.leggauss(3)
    pts, wts = 0.5 * (pts + 1.0), 0.5 * wts
    corners = np.asarray(v, dtype=float)[grid.cell_nodes]  # (cells, 4)
    x0 = grid.node_coords[grid.cell_nodes[:, 0]]
    total = 0.0
    for a, wa in zip(pts, wts):
        for b, wb in zip(pts, wts):
            shape = np.array([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b])
            uh = corners @ shape
            u = func(x0[:, 0] + a * grid.h, x0[:, 1] + b * grid.h)
            total += wa * wb * np.sum((uh - u) ** 2)
    return float(np.sqrt(total) * grid.h)


def l2_norm(v: np.ndarray, M) -> float:
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def energy_norm(v: np.ndarray, A) -> float:
    return float(np.sqrt(max(v @ (A @ v), 0.0)))


@dataclass
class FemOperators:
    """Fine-grid operators on interior dofs (Dirichlet nodes eliminated)."""

    grid: FineGrid
    kappa: ScalarField
    sigma: ScalarField
    assembler: CellAssembler
    M: sp.csr_matrix
    A: sp.csr_matrix
    unit_load: np.ndarray

    @classmethod
    def build(cls, grid: FineGrid, kappa: ScalarField, sigma: ScalarField) -> "FemOperators":
        asm = interior_assembler(grid)
        _positive_cells(sigma, "sigma", allow_zero=True)  # sigma = 0 switches radiation off
        M = assemble_mass(grid, asm)
        A = assemble_stiffness(grid, kappa, asm)
        unit = basis_integrals(grid)[grid.interior_nodes]
        return cls(grid, kappa, sigma, asm, M, A, unit)

    @property
    def size(self) -> int:
        return self.grid.n_interior

    def radiation_weights(self, z: np.ndarray) -> np.ndarray:
        return radiation_weights(self.sigma.values, self.assembler.cell_average, z)

    def radiation(self, z: np.ndarray) -> sp.csr_matrix:
        return self.assembler.assemble(self.radiation_weights(z), mass_element(self.grid.h))

    def radiation_action(self, z: np.ndarray, X: np.ndarray) -> np.ndarray:
        """N(z_k) x_k for every column k (z and X share the column count)."""
        return self.assembler.weighted_action(self.radiation_weights(z), X,
                                              mass_element(self.grid.h))

    def load(self, f, t: float) -> np.ndarray:
        return assemble_load(self.grid, f, t)[self.grid.interior_nodes]

    def interpolate(self, u0) -> np.ndarray:
        """Nodal interpolant of u0(x, y) on interior dofs."""
        xy = self.grid.node_coords[self.grid.interior_nodes]
        return np.asarray(u0(xy[:, 0], xy[:, 1]), dtype=float)
