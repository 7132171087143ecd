"""Linear algebra kernels: SPD solves, generalized symmetric eigenproblems, KKT solves."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, SolverFailure

DIRECT_LIMIT = 20000


def factorize(A):
    """Sparse LU with a symmetric fill-reducing ordering (a Cholesky stand-in)."""
    A = sp.csc_matrix(A)
    try:
        return spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SolverFailure(f"sparse factorization failed: {exc}") from exc


def pcg(A, b, tol=1e-10, precond=None, x0=None, max_iter=None):
    """Preconditioned CG; `precond` maps a residual to an approximate solution.

    Defaults to the Jacobi preconditioner. Returns (x, iterations).
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    if precond is None:
        d = np.asarray(A.diagonal(), dtype=float)
        if np.any(d <= 0):
            raise InvalidArgument("Jacobi preconditioner needs a positive diagonal")
        precond = lambda r: r / d  # noqa: E731
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0
    r = b - A @ x
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(max_iter + 1):
        res = np.linalg.norm(r)
        if res <= tol * bnorm:
            return x, it
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverFailure(f"PCG did not converge in {max_iter} iterations, "
                        f"relative residual {res / bnorm:.3e}", residual=res / bnorm)


def pcg_batch(matvec, precond, B, X0=None, tol=1e-10, max_iter=200):
    """Column-wise PCG on many right-hand sides sharing one preconditioner.

    `matvec(X, cols)` applies the operator of each listed column to the matching
    column of X; `precond(R)` applies the preconditioner to every column of R.
    Columns converge independently. Returns (X, iterations per column, converged mask).
    """
    B = np.asarray(B, dtype=float)
    n, k = B.shape
    X = np.zeros_like(B) if X0 is None else np.array(X0, dtype=float)
    bnorm = np.linalg.norm(B, axis=0)
    iters = np.zeros(k, dtype=int)
    done = bnorm == 0
    X[:, done] = 0.0
    cols = np.flatnonzero(~done)
    if cols.size == 0:
        return X, iters, np.ones(k, dtype=bool)
    R = B[:, cols] - matvec(X[:, cols], cols)
    Z = precond(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    for _ in range(max_iter + 1):
        res = np.linalg.norm(R, axis=0)
        ok = res <= tol * bnorm[cols]
        if ok.any():
            done[cols[ok]] = True
            keep = ~ok
            cols, R, P, rz = cols[keep], R[:, keep], P[:, keep], rz[keep]
        if cols.size == 0:
            break
        iters[cols] += 1
        AP = matvec(P, cols)
        alpha = rz / np.einsum("ij,ij->j", P, AP)
        X[:, cols] += alpha * P
        R -= alpha * AP
        Z = precond(R)
        rz_new = np.einsum("ij,ij->j", R, Z)
        P = Z + (rz_new / rz) * P
        rz = rz_new
    return X, iters, done


def solve_spd(A, b, tol=1e-10, method="auto"):
    """Solve A x = b for SPD A to relative residual `tol`.

    ``method='auto'`` factorizes when n <= 20000, else Jacobi-PCG.
    """
    if tol <= 0:
        raise InvalidArgument(f"tol must be positive, got {tol}")
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "pcg"
    if method == "pcg":
        return pcg(A, b, tol=tol)[0]
    lu = factorize(A)
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    # iterative refinement covers the loss from high-contrast scaling
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= tol * bnorm:
            break
        x += lu.solve(r)
    return x


def eig_sym_gen(A, S, count):
    """Smallest `count` eigenpairs of A phi = lam S phi, eigenvectors S-normalized."""
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    S = np.asarray(S.toarray() if sp.issparse(S) else S, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or S.shape != (n, n):
        raise InvalidArgument(f"need square matrices of equal size, got {A.shape}, {S.shape}")
    if not 1 <= count <= n:
        raise InvalidArgument(f"eigenpair count must lie in [1, {n}], got {count}")
    try:
        lam, phi = sla.eigh(A, S, subset_by_index=[0, count - 1])
    except np.linalg.LinAlgError as exc:
        raise InvalidArgument(f"mass-side matrix is not positive definite: {exc}") from exc
    return lam, phi


def solve_saddle(A, B, rhs_c, rank_deficient="raise", rcond=1e-10):
    """Minimize psi^T A psi subject to B psi = rhs_c.

    `rhs_c` may hold several right-hand sides as columns. With
    ``rank_deficient='lstsq'`` a rank-deficient B is accepted and the
    constraints are met in the least-squares sense (Schur complement with a
    pseudo-inverse); otherwise rank deficiency raises InvalidArgument.
    """
    A = sp.csc_matrix(A)
    B = sp.csr_matrix(B)
    rhs = np.asarray(rhs_c, dtype=float)
    single = rhs.ndim == 1
    rhs2 = rhs[:, None] if single else rhs
    n, c = A.shape[0], B.shape[0]
    if B.shape[1] != n or rhs2.shape[0] != c:
        raise InvalidArgument(f"shape mismatch: A {A.shape}, B {B.shape}, rhs {rhs.shape}")
    if rank_deficient == "lstsq":
        lu = factorize(A)
        Bd = B.toarray()
        X = lu.solve(np.ascontiguousarray(Bd.T))
        G = Bd @ X
        G = 0.5 * (G + G.T)
        psi = X @ (np.linalg.pinv(G, rcond=rcond, hermitian=True) @ rhs2)
        return psi[:, 0] if single else psi
    if c > n:
        raise InvalidArgument(f"{c} constraints on {n} unknowns cannot have full row rank")
    K = sp.bmat([[A, B.T], [B, None]], format="csc")
    sol = np.empty((n + c, rhs2.shape[1]))
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise InvalidArgument(f"KKT system is singular (rank-deficient constraints): {exc}") from exc
    full = np.vstack([np.zeros((n, rhs2.shape[1])), rhs2])
    sol = lu.solve(full)
    sol += lu.solve(full - K @ sol)
    psi = sol[:n]
    scale = max(1.0, np.abs(rhs2).max())
    err = np.abs(B @ psi - rhs2).max()
    if not np.isfinite(err) or err > 1e-8 * scale:
        raise InvalidArgument(
            f"constraints violated by {err:.3e} after KKT solve; B is numerically rank-deficient")
    return psi[:, 0] if single else psi
