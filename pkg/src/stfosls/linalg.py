"""Sparse SPD and saddle-point solvers, plus small dense solves.

Desk-scale problems are solved by sparse direct factorization; conjugate
gradients / MINRES with simple preconditioning are available behind the
``method`` flag for the largest meshes.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(Exception):
    pass


def solve_spd(M, rhs, method="direct", rtol=1e-12):
    """Solve an SPD sparse system to relative residual <= 1e-10."""
    M = M.tocsc()
    rhs = np.asarray(rhs, dtype=float)
    if method == "direct":
        try:
            lu = spla.splu(M)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        x = lu.solve(rhs)
    elif method == "cg":
        precond = sp.diags(1.0 / M.diagonal())
        x, info = spla.cg(M, rhs, rtol=rtol, atol=0.0, maxiter=20 * M.shape[0],
                          M=precond)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge ({info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    res = np.linalg.norm(M @ x - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > 1e-10 * scale:
        raise SolverError(
            f"SPD solve residual {res/scale:.2e} exceeds 1e-10; "
            "matrix may be ill-conditioned or not positive definite")
    return x


def solve_dense_pp(A, b):
    """Dense LU with partial pivoting; dtype-preserving (works for
    float64 and longdouble reduced systems)."""
    A = np.array(A, copy=True)
    b = np.array(b, copy=True)
    n = A.shape[0]
    if n == 0:
        return b
    for k in range(n - 1):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if A[p, k] == 0:
            raise SolverError("singular reduced matrix")
        if p != k:
            A[[k, p]] = A[[p, k]]
            b[[k, p]] = b[[p, k]]
        mult = A[k + 1:, k] / A[k, k]
        A[k + 1:, k:] -= np.outer(mult, A[k, k:])
        b[k + 1:] -= mult * b[k]
    x = np.zeros_like(b)
    for k in range(n - 1, -1, -1):
        if A[k, k] == 0:
            raise SolverError("singular reduced matrix")
        x[k] = (b[k] - A[k, k + 1:] @ x[k + 1:]) / A[k, k]
    return x


class BlockSaddleMatrix:
    """Symmetric block system

        [ D   0   A ] [u]   [g]
        [ 0   E   B'] [z] = [0]
        [ A   B   0 ] [p]   [f]

    with A SPD on the state space, E SPD on the control space, and D
    positive semi-definite (observation Gram)."""

    def __init__(self, D, E, A, B):
        self.D = D.tocsr()
        self.E = E.tocsr()
        self.A = A.tocsr()
        self.B = B.tocsr()
        self.nu = A.shape[0]
        self.nz = E.shape[0]

    def full_matrix(self) -> sp.csr_matrix:
        nu, nz = self.nu, self.nz
        Z_uz = sp.csr_matrix((nu, nz))
        Z_uu = sp.csr_matrix((nu, nu))
        return sp.bmat([
            [self.D, Z_uz, self.A],
            [Z_uz.T, self.E, self.B.T],
            [self.A, self.B, Z_uu],
        ], format="csr")

    def residual(self, u, z, p, g, f):
        r1 = self.D @ u + self.A @ p - g
        r2 = self.E @ z + self.B.T @ p
        r3 = self.A @ u + self.B @ z - f
        num = np.sqrt(np.dot(r1, r1) + np.dot(r2, r2) + np.dot(r3, r3))
        den = np.sqrt(np.dot(g, g) + np.dot(f, f))
        return num / max(den, 1e-300)


def solve_saddle(S: BlockSaddleMatrix, rhs_g, rhs_f, method="direct"):
    """Solve the saddle system; when E is diagonal the control is eliminated
    exactly and the reduced symmetric-indefinite (u, p) system is factorized."""
    g = np.asarray(rhs_g, dtype=float)
    f = np.asarray(rhs_f, dtype=float)
    E = S.E.tocsr()
    offdiag = E - sp.diags(E.diagonal())
    diagonal_E = offdiag.nnz == 0
    if diagonal_E:
        einv = 1.0 / E.diagonal()
        C = (S.B @ sp.diags(einv) @ S.B.T).tocsr()
        K = sp.bmat([[S.D, S.A], [S.A, -C]], format="csc")
        if method == "direct":
            try:
                lu = spla.splu(K)
            except RuntimeError as exc:
                raise SolverError(f"saddle factorization failed: {exc}") from exc
            sol = lu.solve(np.concatenate([g, f]))
        elif method == "minres":
            sol = _minres_reduced(S, K, g, f)
        else:
            raise ValueError(f"unknown method {method!r}")
        u, p = sol[:S.nu], sol[S.nu:]
        z = -einv * (S.B.T @ p)
    else:
        K = S.full_matrix().tocsc()
        lu = spla.splu(K)
        sol = lu.solve(np.concatenate([g, np.zeros(S.nz), f]))
        u, z, p = sol[:S.nu], sol[S.nu:S.nu + S.nz], sol[S.nu + S.nz:]
    res = S.residual(u, z, p, g, f)
    if res > 1e-9:
        raise SolverError(f"saddle solve residual {res:.2e} exceeds 1e-9")
    return u, z, p


def _minres_reduced(S, K, g, f):
    prec_a = spla.splu(S.A.tocsc())
    nu = S.nu

    def apply_prec(v):
        return np.concatenate([prec_a.solve(v[:nu]), prec_a.solve(v[nu:])])

    M = spla.LinearOperator(K.shape, matvec=apply_prec)
    sol, info = spla.minres(K.tocsr(), np.concatenate([g, f]),
                            rtol=1e-12, maxiter=10000, M=M)
    if info != 0:
        raise SolverError(f"MINRES did not converge ({info})")
    return sol
