"""Constraint energy minimizing multiscale basis on the coarse grid.

Pipeline: coarse partition of unity -> weighted coefficient kappa_tilde ->
per-block spectral problems (auxiliary space) -> per-block constrained
energy minimization on oversampled regions -> projection matrix Phi.

Basis column ``i * L + j`` belongs to coarse block ``i`` and auxiliary mode ``j``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import STIFF_REF, CellAssembler, FemOperators, mass_element
from .errors import InvalidArgument
from .fields import ScalarField
from .grid import CoarseGrid, FineGrid
from .linalg import eig_sym_gen, solve_saddle


def _hat_1d(nx: int, Nx: int):
    """Coarse 1D hats: nodal values, per-cell derivative and per-cell mean of the square."""
    r = nx // Nx
    H = 1.0 / Nx
    x = np.arange(nx + 1) / nx
    v = np.arange(Nx + 1)
    values = np.clip(1.0 - np.abs(x[None, :] / H - v[:, None]), 0.0, None)
    a, b = values[:, :-1], values[:, 1:]
    deriv = (b - a) * nx
    sq_mean = (a * a + a * b + b * b) / 3.0
    return sp.csr_matrix(values), sp.csr_matrix(deriv), sp.csr_matrix(sq_mean), r


@dataclass(frozen=True)
class PartitionOfUnity:
    coarse: CoarseGrid
    values: sp.csr_matrix  # (n_vertices, n_fine_nodes)
    grad_sq: sp.csr_matrix  # (n_vertices, n_fine_cells), exact cell means of |grad chi_j|^2

    @property
    def grad_sq_sum(self) -> np.ndarray:
        return np.asarray(self.grad_sq.sum(axis=0)).ravel()


def compute_pou(coarse: CoarseGrid) -> PartitionOfUnity:
    nx, Nx = coarse.fine.nx, coarse.Nx
    val, der, sqm, _ = _hat_1d(nx, Nx)
    values = sp.kron(val, val, format="csr")
    der2 = der.multiply(der)
    grad_sq = (sp.kron(sqm, der2) + sp.kron(der2, sqm)).tocsr()
    return PartitionOfUnity(coarse, values, grad_sq)


def kappa_tilde(kappa: ScalarField, pou: PartitionOfUnity) -> ScalarField:
    return ScalarField(kappa.grid, kappa.values * pou.grad_sq_sum)


def block_assembler(coarse: CoarseGrid) -> CellAssembler:
    """Assembler for one r-by-r block with every block node kept (natural BC)."""
    local = FineGrid(coarse.ratio)
    return CellAssembler(local.cell_nodes, np.arange(local.n_nodes), local.n_nodes)


def local_matrices(coarse: CoarseGrid, i: int, kappa: ScalarField, ktilde: ScalarField,
                   asm: CellAssembler | None = None):
    asm = asm or block_assembler(coarse)
    cells = coarse.block_cells(i)
    A_i = asm.assemble(kappa.values[cells], STIFF_REF)
    S_i = asm.assemble(ktilde.values[cells], mass_element(coarse.fine.h))
    return A_i, S_i


def local_spectral(coarse: CoarseGrid, i: int, kappa: ScalarField, ktilde: ScalarField,
                   count: int, asm: CellAssembler | None = None):
    """Smallest `count` eigenpairs of the block pencil (stiffness, kappa_tilde-mass)."""
    A_i, S_i = local_matrices(coarse, i, kappa, ktilde, asm)
    count = min(count, A_i.shape[0])
    return eig_sym_gen(A_i.toarray(), S_i.toarray(), count)


@dataclass(frozen=True)
class AuxiliarySpace:
    coarse: CoarseGrid
    n_modes: int
    eigenvalues: np.ndarray  # (n_blocks, n_modes + 1), +inf where no extra mode exists
    eigenvectors: tuple  # per block: (block nodes, n_modes), s_i-normalized
    constraint_rows: sp.csr_matrix  # (n_blocks * n_modes, n_interior): s(., phi_j^(i))

    @property
    def Lambda(self) -> float:
        """Smallest excluded eigenvalue over all blocks."""
        return float(self.eigenvalues[:, self.n_modes].min())


def build_auxiliary(coarse: CoarseGrid, kappa: ScalarField, n_modes: int,
                    pou: PartitionOfUnity | None = None) -> AuxiliarySpace:
    fine = coarse.fine
    n_local = (coarse.ratio + 1) ** 2
    if not 1 <= n_modes <= n_local:
        raise InvalidArgument(f"basis count must lie in [1, {n_local}], got {n_modes}")
    pou = pou or compute_pou(coarse)
    kt = kappa_tilde(kappa, pou)
    asm = block_assembler(coarse)
    lams = np.full((coarse.n_blocks, n_modes + 1), np.inf)
    vecs = []
    rows, cols, data = [], [], []
    for i in range(coarse.n_blocks):
        A_i, S_i = local_matrices(coarse, i, kappa, kt, asm)
        lam, phi = eig_sym_gen(A_i.toarray(), S_i.toarray(), min(n_modes + 1, n_local))
        lams[i, : lam.size] = lam
        phi = phi[:, :n_modes]
        vecs.append(phi)
        weights = (S_i @ phi).T  # (n_modes, block nodes)
        dofs = fine.dof_map[coarse.block_nodes(i)]
        keep = dofs >= 0
        for j in range(n_modes):
            rows.append(np.full(keep.sum(), i * n_modes + j))
            cols.append(dofs[keep])
            data.append(weights[j, keep])
    B = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(coarse.n_blocks * n_modes, fine.n_interior))
    return AuxiliarySpace(coarse, n_modes, lams, tuple(vecs), B)


def cem_basis_block(coarse: CoarseGrid, i: int, layers: int, aux: AuxiliarySpace,
                    A_int: sp.csr_matrix, rank_deficient: str = "raise"):
    """All basis functions of block i as (interior dofs of K_{i,m}, values (n_region, L))."""
    region = coarse.oversample(i, layers)
    dofs = coarse.fine.dof_map[region.interior_nodes]
    L = aux.n_modes
    rows = (region.blocks[:, None] * L + np.arange(L)[None, :]).ravel()
    A_R = A_int[dofs][:, dofs]
    B_R = aux.constraint_rows[rows][:, dofs]
    rhs = np.zeros((rows.size, L))
    own = np.flatnonzero(region.blocks == i)[0]
    rhs[own * L + np.arange(L), np.arange(L)] = 1.0
    psi = solve_saddle(A_R, B_R, rhs, rank_deficient=rank_deficient)
    return dofs, psi


def build_cem_basis(coarse: CoarseGrid, i: int, j: int, layers: int, aux: AuxiliarySpace,
                    A_int: sp.csr_matrix, rank_deficient: str = "raise") -> np.ndarray:
    """Basis function (i, j) as an interior-dof vector, zero outside K_{i,m}."""
    dofs, psi = cem_basis_block(coarse, i, layers, aux, A_int, rank_deficient)
    out = np.zeros(coarse.fine.n_interior)
    out[dofs] = psi[:, j]
    return out


@dataclass
class MultiscaleBasis:
    coarse: CoarseGrid
    aux: AuxiliarySpace
    layers: int
    Phi: sp.csc_matrix  # (n_interior, N_ms)
    meta: dict = field(default_factory=dict)

    @property
    def n_ms(self) -> int:
        return self.Phi.shape[1]

    @property
    def Lambda(self) -> float:
        return self.aux.Lambda

    def dense(self) -> np.ndarray:
        return self.Phi.toarray()

    def compressed(self, rtol: float = 1e-10) -> "MultiscaleBasis":
        """Same span, linearly independent columns (orthonormal, via SVD)."""
        U, s, _ = np.linalg.svd(self.dense(), full_matrices=False)
        keep = s > rtol * s[0]
        meta = dict(self.meta, compressed_from=self.n_ms, rank=int(keep.sum()))
        return MultiscaleBasis(self.coarse, self.aux, self.layers,
                               sp.csc_matrix(U[:, keep]), meta)


def build_multiscale_basis(ops: FemOperators, coarse: CoarseGrid, n_basis: int, layers: int,
                           threads: int = 1, rank_deficient: str = "raise") -> MultiscaleBasis:
    if coarse.fine != ops.grid:
        raise InvalidArgument("coarse grid does not refine the operator grid")
    if layers < 0:
        raise InvalidArgument(f"layers must be >= 0, got {layers}")
    aux = build_auxiliary(coarse, ops.kappa, n_basis)
    A_int = ops.A.tocsr()

    def one(i):
        return cem_basis_block(coarse, i, layers, aux, A_int, rank_deficient)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, range(coarse.n_blocks)))
    else:
        parts = [one(i) for i in range(coarse.n_blocks)]
    L = aux.n_modes
    rows, cols, data = [], [], []
    for i, (dofs, psi) in enumerate(parts):
        for j in range(L):
            rows.append(dofs)
            cols.append(np.full(dofs.size, i * L + j))
            data.append(psi[:, j])
    Phi = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(ops.size, coarse.n_blocks * L))
    return MultiscaleBasis(coarse, aux, layers, Phi, {"n_basis": L, "layers": layers})


def project_matrix(Phi, K) -> np.ndarray:
    """Phi^T K Phi as a dense symmetric matrix."""
    Pd = Phi.toarray() if sp.issparse(Phi) else np.asarray(Phi)
    out = Pd.T @ np.asarray(K @ Pd)
    return 0.5 * (out + out.T)


def project_vector(Phi, v) -> np.ndarray:
    return np.asarray(Phi.T @ v)
