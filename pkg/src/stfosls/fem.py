"""Continuous piecewise-affine (and piecewise-constant) finite elements on
simplicial space-time meshes: dof management, quadrature-point evaluation,
Dirichlet constraint masks, and integration of fields over cells and the
initial/final faces."""

import numpy as np
from scipy.spatial import cKDTree

from .mesh import INITIAL, FINAL, LATERAL, SpaceTimeMesh, TensorGrid, _factorial
from .quadrature import simplex_rule

ASSEMBLY_DEGREE = 4      # stiffness/load quadrature on simplices
ERROR_DEGREE = 8         # error-norm quadrature against closed forms


class FESpace:
    """Scalar or multi-component nodal space on a simplicial mesh.

    degree 1: continuous piecewise-affine, one dof per vertex per component;
    degree 0: piecewise constants, one dof per cell, no continuity.
    Components use a block layout: global dof = comp * ndof_scalar + index.
    """

    def __init__(self, mesh: SpaceTimeMesh, components=1, degree=1,
                 constrain_first_on_lateral=False):
        if degree not in (0, 1):
            raise ValueError("simplicial spaces support degree 0 or 1")
        if degree == 0 and constrain_first_on_lateral:
            raise ValueError("piecewise constants carry no boundary constraints")
        self.mesh = mesh
        self.components = components
        self.degree = degree
        self.ndof_scalar = mesh.num_vertices if degree == 1 else mesh.num_cells
        self.ndof = components * self.ndof_scalar
        mask = np.zeros(self.ndof, dtype=bool)
        if constrain_first_on_lateral:
            lateral = np.unique(mesh.facets_with_tag(LATERAL))
            mask[lateral] = True
        self.dirichlet_mask = mask
        self.free = np.flatnonzero(~mask)
        self.constrained = np.flatnonzero(mask)
        self._geom = None
        self._cell_quad = {}
        self._facet_quad = {}

    # -- geometry ----------------------------------------------------------

    def _geometry(self):
        if self._geom is None:
            m = self.mesh
            pts = m.vertices[m.cells]                      # (nc, n+1, n)
            edges = pts[:, 1:, :] - pts[:, :1, :]
            inv = np.linalg.inv(edges)
            grads = np.concatenate(
                [-inv.sum(axis=2)[:, None, :], inv.transpose(0, 2, 1)], axis=1)
            vols = np.abs(np.linalg.det(edges)) / _factorial(m.dim + 1)
            self._geom = (grads, vols)
        return self._geom

    @property
    def bary_gradients(self):
        """(nc, d+2, d+1) gradients of the barycentric basis, coords (t, x)."""
        return self._geometry()[0]

    @property
    def cell_volumes(self):
        return self._geometry()[1]

    def cell_dofs(self):
        """(nc, components*(d+2)) local-to-global dof table (degree 1)."""
        if self.degree == 0:
            base = np.arange(self.mesh.num_cells)[:, None]
            return np.concatenate(
                [base + c * self.ndof_scalar for c in range(self.components)],
                axis=1)
        return np.concatenate(
            [self.mesh.cells + c * self.ndof_scalar
             for c in range(self.components)], axis=1)

    # -- quadrature --------------------------------------------------------

    def cell_quadrature(self, degree=ASSEMBLY_DEGREE):
        """(bary (nq, d+2), points (nc, nq, d+1), weights (nc, nq))."""
        if degree not in self._cell_quad:
            rule = simplex_rule(self.mesh.dim + 1, degree)
            bary = rule.barycentric()
            pts = np.einsum("qi,cid->cqd", bary, self.mesh.vertices[self.mesh.cells])
            scale = self.cell_volumes * _factorial(self.mesh.dim + 1)
            w = rule.weights[None, :] * scale[:, None]
            self._cell_quad[degree] = (bary, pts, w)
        return self._cell_quad[degree]

    def facet_quadrature(self, tag, degree=ASSEMBLY_DEGREE):
        """(facets, bary (nq, d+1), points (nf, nq, d+1), weights (nf, nq))."""
        key = (tag, degree)
        if key not in self._facet_quad:
            facets = self.mesh.facets_with_tag(tag)
            d = self.mesh.dim
            rule = simplex_rule(d, degree)
            bary = rule.barycentric()
            fpts = self.mesh.vertices[facets]              # (nf, d+1, d+1)
            pts = np.einsum("qi,fid->fqd", bary, fpts)
            edges = fpts[:, 1:, :] - fpts[:, :1, :]        # (nf, d, d+1)
            gram = np.einsum("fid,fjd->fij", edges, edges)
            vol = np.sqrt(np.abs(np.linalg.det(gram))) / _factorial(d)
            w = rule.weights[None, :] * (vol * _factorial(d))[:, None]
            self._facet_quad[key] = (facets, bary, pts, w)
        return self._facet_quad[key]

    # -- evaluation at quadrature points ------------------------------------

    def component(self, coefs, comp):
        coefs = np.asarray(coefs)
        return coefs[comp * self.ndof_scalar:(comp + 1) * self.ndof_scalar]

    def values_at_cells(self, coefs, comp, degree=ASSEMBLY_DEGREE):
        """FE values of one component at all cell quadrature points (nc, nq)."""
        bary, _, _ = self.cell_quadrature(degree)
        u = self.component(coefs, comp)
        if self.degree == 0:
            return np.broadcast_to(u[:, None], (len(u), bary.shape[0])).copy()
        return np.einsum("qi,ci->cq", bary, u[self.mesh.cells])

    def gradients_at_cells(self, coefs, comp, degree=ASSEMBLY_DEGREE):
        """Space-time gradients of one component, (nc, nq, d+1)."""
        bary, _, _ = self.cell_quadrature(degree)
        if self.degree == 0:
            nc = self.mesh.num_cells
            return np.zeros((nc, bary.shape[0], self.mesh.dim + 1))
        u = self.component(coefs, comp)
        g = np.einsum("cid,ci->cd", self.bary_gradients, u[self.mesh.cells])
        return np.broadcast_to(g[:, None, :],
                               (g.shape[0], bary.shape[0], g.shape[1])).copy()

    def trace_at_facets(self, coefs, comp, tag, degree=ASSEMBLY_DEGREE):
        """Facet-trace values of one component, (nf, nq); degree-1 only."""
        facets, bary, _, _ = self.facet_quadrature(tag, degree)
        if self.degree != 1:
            raise ValueError("facet traces require a continuous space")
        u = self.component(coefs, comp)
        return np.einsum("qi,fi->fq", bary, u[facets])


def build_space(disc, components=1, degree=1, constrain_first_on_lateral=False):
    """Space factory over simplicial meshes and tensor grids."""
    if isinstance(disc, SpaceTimeMesh):
        return FESpace(disc, components, degree, constrain_first_on_lateral)
    if isinstance(disc, TensorGrid):
        from .tensor import TensorProductSpace
        if degree != disc.degree or degree != 3:
            raise ValueError("tensor-grid spaces are bi-cubic (degree 3)")
        return TensorProductSpace(disc, components, constrain_first_on_lateral)
    raise TypeError(f"unsupported discretization: {type(disc)!r}")


# ---------------------------------------------------------------------------
# arbitrary-point evaluation
# ---------------------------------------------------------------------------

class PointLocationError(Exception):
    pass


def locate_cells(mesh: SpaceTimeMesh, points, tol=1e-10):
    """Cell index and barycentric coordinates for each point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pts = mesh.vertices[mesh.cells]
    centroids = pts.mean(axis=1)
    tree = cKDTree(centroids)
    k = min(mesh.num_cells, 32)
    _, near = tree.query(points, k=k)
    near = np.atleast_2d(near)
    edges = pts[:, 1:, :] - pts[:, :1, :]
    invT = np.linalg.inv(np.transpose(edges, (0, 2, 1)))
    cells_out = np.empty(len(points), dtype=np.int64)
    bary_out = np.empty((len(points), mesh.dim + 2))

    def bary_in(ci, x):
        lam = invT[ci] @ (x - pts[ci, 0])
        lam0 = 1.0 - lam.sum()
        full = np.concatenate([[lam0], lam])
        return full if np.all(full >= -tol) else None

    for i, x in enumerate(points):
        hit = None
        for ci in near[i]:
            hit = bary_in(int(ci), x)
            if hit is not None:
                cells_out[i] = ci
                break
        if hit is None:
            for ci in range(mesh.num_cells):
                hit = bary_in(ci, x)
                if hit is not None:
                    cells_out[i] = ci
                    break
        if hit is None:
            raise PointLocationError(f"point outside mesh: {x.tolist()}")
        bary_out[i] = np.clip(hit, 0.0, None)
    return cells_out, bary_out


def evaluate_fe(coefs, space: FESpace, points, comp=0, gradients=False):
    """Evaluate one component of an FE function at arbitrary points."""
    cells, bary = locate_cells(space.mesh, points)
    if space.degree == 0:
        vals = space.component(coefs, comp)[cells]
        if gradients:
            return vals, np.zeros((len(cells), space.mesh.dim + 1))
        return vals
    u = space.component(coefs, comp)
    nodal = u[space.mesh.cells[cells]]
    vals = np.einsum("pi,pi->p", bary, nodal)
    if gradients:
        grads = np.einsum("pid,pi->pd", space.bary_gradients[cells], nodal)
        return vals, grads
    return vals


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def integrate(disc, integrand, region="cells", degree=ERROR_DEGREE):
    """Integrate ``integrand(points) -> values`` over the mesh cells or over
    the initial/final faces.  For tensor grids only ``region='cells'`` and
    Gauss products are supported (see stfosls.tensor)."""
    if isinstance(disc, FESpace):
        disc = disc.mesh
    if isinstance(disc, TensorGrid):
        from .tensor import integrate_tensor
        if region != "cells":
            raise ValueError("tensor grids integrate over cells only")
        return integrate_tensor(disc, integrand)
    space = FESpace(disc, 1, 1)
    if region == "cells":
        _, pts, w = space.cell_quadrature(degree)
    elif region in ("initial", "final"):
        tag = INITIAL if region == "initial" else FINAL
        _, _, pts, w = space.facet_quadrature(tag, degree)
    else:
        raise ValueError(f"unknown region {region!r}")
    vals = np.asarray(integrand(pts.reshape(-1, pts.shape[-1])))
    return float(np.sum(w.ravel() * vals))


# ---------------------------------------------------------------------------
# refinement transfer
# ---------------------------------------------------------------------------

def p1_prolongation(fine_mesh) -> "scipy.sparse.csr_matrix":
    """Scalar P1 prolongation from the mesh ``fine_mesh`` was refined from.

    New vertices are edge midpoints, so each fine row averages the rows of
    its (possibly mid-refinement) parent vertices.
    """
    import scipy.sparse as sparse

    vp = fine_mesh.vertex_parents
    if vp is None:
        raise ValueError("mesh carries no refinement bookkeeping")
    rows = {}
    n_coarse = int(np.sum(vp[:, 0] == np.arange(len(vp))))
    data, indices, indptr = [], [], [0]
    for v, (a, b) in enumerate(vp):
        if a == v and b == v:
            rows[v] = {v: 1.0}
        else:
            merged = {}
            for parent in (a, b):
                for col, val in rows[parent].items():
                    merged[col] = merged.get(col, 0.0) + 0.5 * val
            rows[v] = merged
        for col, val in sorted(rows[v].items()):
            indices.append(col)
            data.append(val)
        indptr.append(len(indices))
    return sparse.csr_matrix((data, indices, indptr),
                             shape=(len(vp), n_coarse))


def p0_prolongation(fine_mesh):
    import scipy.sparse as sparse

    parents = fine_mesh.parent_cells
    if parents is None:
        raise ValueError("mesh carries no refinement bookkeeping")
    nc = len(parents)
    return sparse.csr_matrix(
        (np.ones(nc), (np.arange(nc), parents)),
        shape=(nc, int(parents.max()) + 1))


def block_prolongation(P_scalar, components):
    import scipy.sparse as sparse

    return sparse.block_diag([P_scalar] * components, format="csr")
