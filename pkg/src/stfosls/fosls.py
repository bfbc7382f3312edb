"""Parabolic first-order-system least squares on simplicial meshes.

For a (d+1)-component trial function ``u = (u1, u2)`` the first-order
operator is

    G u = ( dt u1 + div_x u2 + b . grad_x u1 + c u1,
            -u2 - A grad_x u1,
            u1(0, .) )

and the least-squares bilinear form is the L-inner product <G u, G v>_L with
L = L2(Q) x L2(Q)^d x L2(Omega_0).  Assembly is vectorized over cell chunks.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import ASSEMBLY_DEGREE, ERROR_DEGREE, FESpace
from .fields import ScalarField, VectorField
from .linalg import solve_spd
from .mesh import INITIAL, FINAL

_CHUNK_ENTRIES = 1 << 23


def _as_matrix_coeff(A, d):
    if callable(A):
        return A
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = float(A) * np.eye(d)
    return lambda pts, A=A: np.broadcast_to(A, (pts.shape[0], d, d))


def _as_vector_coeff(b, d):
    if callable(b):
        return b
    b = np.broadcast_to(np.asarray(b, dtype=float), (d,))
    return lambda pts, b=b: np.broadcast_to(b, (pts.shape[0], d))


def _as_scalar_coeff(c):
    if callable(c):
        return c
    c = float(c)
    return lambda pts, c=c: np.full(pts.shape[0], c)


@dataclass
class FOSLSProblem:
    """Coefficients, data, and end time of one parabolic FOSLS instance."""

    d: int
    A: object = 1.0
    b: object = 0.0
    c: object = 0.0
    f1: ScalarField = None
    f2: VectorField = None
    u0: ScalarField = None
    end_time: float = 1.0

    def __post_init__(self):
        self.A_fn = _as_matrix_coeff(self.A, self.d)
        self.b_fn = _as_vector_coeff(self.b, self.d)
        self.c_fn = _as_scalar_coeff(self.c)

    def validate(self, sample_points):
        Av = self.A_fn(sample_points)
        if np.max(np.abs(Av - np.transpose(Av, (0, 2, 1)))) > 1e-12:
            raise ValueError("diffusion coefficient must be symmetric")
        eig = np.linalg.eigvalsh(Av)
        if eig.min() <= 0.0:
            raise ValueError("diffusion coefficient must be uniformly positive")
        for vals in (Av, self.b_fn(sample_points), self.c_fn(sample_points)):
            if not np.all(np.isfinite(vals)):
                raise ValueError("unbounded coefficient sample")


def heat_problem(d, f1=None, f2=None, u0=None, end_time=1.0):
    return FOSLSProblem(d=d, A=1.0, b=0.0, c=0.0, f1=f1, f2=f2, u0=u0,
                        end_time=end_time)


# ---------------------------------------------------------------------------
# local operator tensors
# ---------------------------------------------------------------------------

def _chunks(n, per_cell):
    size = max(1, _CHUNK_ENTRIES // max(per_cell, 1))
    for lo in range(0, n, size):
        yield lo, min(n, lo + size)


def _g_local(problem, space, bary, pts, lo, hi):
    """G1 (nc, nq, nloc) and G2 (nc, nq, d, nloc) applied to the local basis."""
    d = space.mesh.dim
    nq, nvert = bary.shape
    grads = space.bary_gradients[lo:hi]
    flat = pts[lo:hi].reshape(-1, d + 1)
    Av = problem.A_fn(flat).reshape(hi - lo, nq, d, d)
    bv = problem.b_fn(flat).reshape(hi - lo, nq, d)
    cv = problem.c_fn(flat).reshape(hi - lo, nq)
    nloc = (d + 1) * nvert
    G1 = np.zeros((hi - lo, nq, nloc))
    G2 = np.zeros((hi - lo, nq, d, nloc))
    # first component: time derivative + advection + reaction, and -A grad
    G1[:, :, :nvert] = (grads[:, None, :, 0]
                        + np.einsum("cqm,cvm->cqv", bv, grads[:, :, 1:])
                        + cv[:, :, None] * bary[None, :, :])
    G2[:, :, :, :nvert] = -np.einsum("cqkm,cvm->cqkv", Av, grads[:, :, 1:])
    # flux components: divergence part and -identity
    for k in range(1, d + 1):
        s = slice(k * nvert, (k + 1) * nvert)
        G1[:, :, s] = grads[:, None, :, k]
        G2[:, :, k - 1, s] = -bary[None, :, :]
    return G1, G2


def _u_local(space, bary, lo, hi):
    """Graph-norm factors: values u1, grad_x u1, u2, div u on the local basis."""
    d = space.mesh.dim
    nq, nvert = bary.shape
    grads = space.bary_gradients[lo:hi]
    nloc = (d + 1) * nvert
    V1 = np.zeros((hi - lo, nq, nloc))
    GX = np.zeros((hi - lo, nq, d, nloc))
    V2 = np.zeros((hi - lo, nq, d, nloc))
    DV = np.zeros((hi - lo, nq, nloc))
    V1[:, :, :nvert] = bary[None, :, :]
    GX[:, :, :, :nvert] = np.transpose(grads[:, :, 1:], (0, 2, 1))[:, None, :, :]
    DV[:, :, :nvert] = grads[:, None, :, 0]
    for k in range(1, d + 1):
        s = slice(k * nvert, (k + 1) * nvert)
        V2[:, :, k - 1, s] = bary[None, :, :]
        DV[:, :, s] = grads[:, None, :, k]
    return V1, GX, V2, DV


def _scatter(space, local_blocks):
    """Accumulate per-cell local matrices into a CSR matrix on all dofs."""
    dofs = space.cell_dofs()
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    data = local_blocks.reshape(-1)
    A = sp.coo_matrix((data, (rows, cols)), shape=(space.ndof, space.ndof))
    return A.tocsr()


def _initial_trace_matrix(space, degree=ASSEMBLY_DEGREE, tag=INITIAL):
    facets, bary, _, w = space.facet_quadrature(tag, degree)
    local = np.einsum("qi,fq,qj->fij", bary, w, bary)
    nv = bary.shape[1]
    rows = np.repeat(facets, nv, axis=1).ravel()
    cols = np.tile(facets, (1, nv)).ravel()
    M = sp.coo_matrix((local.ravel(), (rows, cols)),
                      shape=(space.ndof, space.ndof))
    return M.tocsr()


@dataclass
class AssembledSystem:
    space: FESpace
    matrix_free: sp.csr_matrix
    load_free: np.ndarray
    matrix_full: sp.csr_matrix = field(repr=False, default=None)

    def embed(self, x_free):
        full = np.zeros(self.space.ndof)
        full[self.space.free] = x_free
        return full


def assemble_fosls_matrix(problem, space, degree=ASSEMBLY_DEGREE):
    """Full-dof Gram matrix of <G ., G .>_L."""
    bary, pts, w = space.cell_quadrature(degree)
    d = space.mesh.dim
    nloc = (d + 1) * (d + 2)
    blocks = np.empty((space.mesh.num_cells, nloc, nloc))
    for lo, hi in _chunks(space.mesh.num_cells, bary.shape[0] * nloc * (d + 1)):
        G1, G2 = _g_local(problem, space, bary, pts, lo, hi)
        ww = w[lo:hi]
        blocks[lo:hi] = (np.einsum("cqi,cq,cqj->cij", G1, ww, G1, optimize=True)
                         + np.einsum("cqki,cq,cqkj->cij", G2, ww, G2,
                                     optimize=True))
    return _scatter(space, blocks) + _initial_trace_matrix(space, degree)


def assemble_fosls_load(problem, space, degree=ASSEMBLY_DEGREE):
    """Full-dof load vector <f, G .>_L for data (f1, f2, u0)."""
    bary, pts, w = space.cell_quadrature(degree)
    d = space.mesh.dim
    nloc = (d + 1) * (d + 2)
    vec = np.zeros(space.ndof)
    dofs = space.cell_dofs()
    flat = pts.reshape(-1, d + 1)
    f1v = problem.f1(flat).reshape(w.shape) if problem.f1 is not None else None
    f2v = problem.f2(flat).reshape(w.shape + (d,)) if problem.f2 is not None else None
    for lo, hi in _chunks(space.mesh.num_cells, bary.shape[0] * nloc * (d + 1)):
        G1, G2 = _g_local(problem, space, bary, pts, lo, hi)
        ww = w[lo:hi]
        local = np.zeros((hi - lo, nloc))
        if f1v is not None:
            local += np.einsum("cq,cqi->ci", ww * f1v[lo:hi], G1, optimize=True)
        if f2v is not None:
            local += np.einsum("cqk,cqki->ci", ww[:, :, None] * f2v[lo:hi], G2,
                               optimize=True)
        np.add.at(vec, dofs[lo:hi], local)
    if problem.u0 is not None:
        facets, fbary, fpts, fw = space.facet_quadrature(INITIAL, degree)
        u0v = problem.u0(fpts.reshape(-1, d + 1)).reshape(fw.shape)
        local = np.einsum("fq,qi->fi", fw * u0v, fbary)
        np.add.at(vec, facets, local)
    return vec


def assemble_fosls(problem, space, degree=ASSEMBLY_DEGREE) -> AssembledSystem:
    """Reduced (free-dof) FOSLS system; the matrix is SPD."""
    if space.components != space.mesh.dim + 1:
        raise ValueError("FOSLS trial space needs d+1 components")
    _, pts, _ = space.cell_quadrature(degree)
    problem.validate(pts.reshape(-1, space.mesh.dim + 1)[:200])
    A = assemble_fosls_matrix(problem, space, degree)
    l = assemble_fosls_load(problem, space, degree)
    free = space.free
    return AssembledSystem(space, A[free][:, free].tocsr(), l[free], A)


def solve_fosls(problem, space, degree=ASSEMBLY_DEGREE, method="direct"):
    """Galerkin solution coefficients (full dof vector, zeros on Sigma)."""
    system = assemble_fosls(problem, space, degree)
    x = solve_spd(system.matrix_free, system.load_free, method=method)
    return system.embed(x)


def assemble_u_gram(space, degree=ASSEMBLY_DEGREE):
    """Full-dof Gram matrix of the graph inner product
    <u1,v1> + <grad_x u1, grad_x v1> + <u2,v2> + <div u, div v>."""
    bary, pts, w = space.cell_quadrature(degree)
    d = space.mesh.dim
    nloc = (d + 1) * (d + 2)
    blocks = np.empty((space.mesh.num_cells, nloc, nloc))
    for lo, hi in _chunks(space.mesh.num_cells, bary.shape[0] * nloc * (d + 1)):
        V1, GX, V2, DV = _u_local(space, bary, lo, hi)
        ww = w[lo:hi]
        blocks[lo:hi] = (
            np.einsum("cqi,cq,cqj->cij", V1, ww, V1, optimize=True)
            + np.einsum("cqki,cq,cqkj->cij", GX, ww, GX, optimize=True)
            + np.einsum("cqki,cq,cqkj->cij", V2, ww, V2, optimize=True)
            + np.einsum("cqi,cq,cqj->cij", DV, ww, DV, optimize=True))
    return _scatter(space, blocks)


# ---------------------------------------------------------------------------
# G evaluation and the residual estimator
# ---------------------------------------------------------------------------

def g_values(problem, space, coefs, degree=ERROR_DEGREE):
    """Pointwise (G u) of an FE function: (g1 (nc,nq), g2 (nc,nq,d),
    tr (nf,nq)) at cell and initial-facet quadrature points."""
    d = space.mesh.dim
    _, pts, _ = space.cell_quadrature(degree)
    flat = pts.reshape(-1, d + 1)
    du1 = space.gradients_at_cells(coefs, 0, degree)
    u1 = space.values_at_cells(coefs, 0, degree)
    g1 = du1[:, :, 0] + problem.c_fn(flat).reshape(u1.shape) * u1
    bv = problem.b_fn(flat).reshape(u1.shape + (d,))
    g1 += np.einsum("cqk,cqk->cq", bv, du1[:, :, 1:])
    Av = problem.A_fn(flat).reshape(u1.shape + (d, d))
    g2 = -np.einsum("cqkm,cqm->cqk", Av, du1[:, :, 1:])
    for k in range(1, d + 1):
        g1 += space.gradients_at_cells(coefs, k, degree)[:, :, k]
        g2[:, :, k - 1] -= space.values_at_cells(coefs, k, degree)
    tr = space.trace_at_facets(coefs, 0, INITIAL, degree)
    return g1, g2, tr


def residual_estimator(problem, space, coefs, degree=ERROR_DEGREE):
    """|| f - G u ||_L by elevated quadrature."""
    d = space.mesh.dim
    g1, g2, tr = g_values(problem, space, coefs, degree)
    _, pts, w = space.cell_quadrature(degree)
    flat = pts.reshape(-1, d + 1)
    r1 = -g1 if problem.f1 is None else problem.f1(flat).reshape(g1.shape) - g1
    r2 = -g2 if problem.f2 is None else problem.f2(flat).reshape(g2.shape) - g2
    facets, _, fpts, fw = space.facet_quadrature(INITIAL, degree)
    r0 = -tr if problem.u0 is None else (
        problem.u0(fpts.reshape(-1, d + 1)).reshape(tr.shape) - tr)
    val = (np.sum(w * r1 ** 2) + np.sum(w[:, :, None] * r2 ** 2)
           + np.sum(fw * r0 ** 2))
    return float(np.sqrt(val))


def u_norm(space, coefs, degree=ERROR_DEGREE):
    """Graph norm of an FE function."""
    d = space.mesh.dim
    _, pts, w = space.cell_quadrature(degree)
    u1 = space.values_at_cells(coefs, 0, degree)
    du1 = space.gradients_at_cells(coefs, 0, degree)
    div = du1[:, :, 0].copy()
    val = np.sum(w * u1 ** 2) + np.sum(w[:, :, None] * du1[:, :, 1:] ** 2)
    for k in range(1, d + 1):
        u2k = space.values_at_cells(coefs, k, degree)
        val += np.sum(w * u2k ** 2)
        div += space.gradients_at_cells(coefs, k, degree)[:, :, k]
    val += np.sum(w * div ** 2)
    return float(np.sqrt(val))


def g_weighted_load(problem, space, target_g1=None, target_g2=None,
                    target_tr=None, degree=ASSEMBLY_DEGREE):
    """Vector of <target, G phi>_L for targets given at quadrature points
    (shapes as returned by g_values at the same degree)."""
    bary, pts, w = space.cell_quadrature(degree)
    d = space.mesh.dim
    nloc = (d + 1) * (d + 2)
    vec = np.zeros(space.ndof)
    dofs = space.cell_dofs()
    for lo, hi in _chunks(space.mesh.num_cells, bary.shape[0] * nloc * (d + 1)):
        G1, G2 = _g_local(problem, space, bary, pts, lo, hi)
        ww = w[lo:hi]
        local = np.zeros((hi - lo, nloc))
        if target_g1 is not None:
            local += np.einsum("cq,cqi->ci", ww * target_g1[lo:hi], G1,
                               optimize=True)
        if target_g2 is not None:
            local += np.einsum("cqk,cqki->ci",
                               ww[:, :, None] * target_g2[lo:hi], G2,
                               optimize=True)
        np.add.at(vec, dofs[lo:hi], local)
    if target_tr is not None:
        facets, fbary, _, fw = space.facet_quadrature(INITIAL, degree)
        np.add.at(vec, facets, np.einsum("fq,qi->fi", fw * target_tr, fbary))
    return vec


def component_mass_load(space, comp, values, region="cells",
                        degree=ASSEMBLY_DEGREE):
    """Vector of <values, phi_comp> over cells or the initial/final face."""
    vec = np.zeros(space.ndof)
    if region == "cells":
        bary, pts, w = space.cell_quadrature(degree)
        local = np.einsum("cq,qi->ci", w * values, bary)
        np.add.at(vec, space.mesh.cells + comp * space.ndof_scalar, local)
    else:
        tag = INITIAL if region == "initial" else FINAL
        facets, fbary, _, fw = space.facet_quadrature(tag, degree)
        local = np.einsum("fq,qi->fi", fw * values, fbary)
        np.add.at(vec, facets + comp * space.ndof_scalar, local)
    return vec
