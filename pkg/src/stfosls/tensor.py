"""Continuous piecewise bi-cubic tensor-product spaces in 1+1D.

These serve as the high-accuracy truth discretization for the reduced-basis
experiment.  All bilinear/linear forms are assembled from sparse
quadrature-evaluation operators: ``E_op`` maps coefficient vectors to values
at the global Gauss grid, so a form is ``E_a^T diag(w) E_b``.
"""

import numpy as np
import scipy.sparse as sp

from .mesh import TensorGrid

GAUSS_PER_CELL = 6   # exact through degree 11 per direction


def lagrange_cubic_tables(points):
    """Values and reference derivatives of the cubic Lagrange basis with
    nodes (0, 1/3, 2/3, 1), at the given reference points."""
    nodes = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    pts = np.asarray(points)
    V = np.ones((len(pts), 4))
    D = np.zeros((len(pts), 4))
    for i in range(4):
        for j in range(4):
            if j == i:
                continue
            V[:, i] *= (pts - nodes[j]) / (nodes[i] - nodes[j])
        # derivative via sum over product rule
        for j in range(4):
            if j == i:
                continue
            term = np.ones(len(pts)) / (nodes[i] - nodes[j])
            for k in range(4):
                if k in (i, j):
                    continue
                term *= (pts - nodes[k]) / (nodes[i] - nodes[k])
            D[:, i] += term
    return V, D


class TensorProductSpace:
    """2-component bi-cubic space on a TensorGrid (first component is the
    scalar unknown, second its negative spatial gradient)."""

    degree = 3

    def __init__(self, grid: TensorGrid, components=2,
                 constrain_first_on_lateral=True):
        self.grid = grid
        self.components = components
        self.mesh = grid
        bt, bx = grid.breakpoints_t, grid.breakpoints_x
        self.nt, self.nx = len(bt) - 1, len(bx) - 1
        self.Nt, self.Nx = 3 * self.nt + 1, 3 * self.nx + 1
        self.ndof_scalar = self.Nt * self.Nx
        self.ndof = components * self.ndof_scalar
        mask = np.zeros(self.ndof, dtype=bool)
        if constrain_first_on_lateral:
            ix = np.arange(self.ndof_scalar) % self.Nx
            mask[:self.ndof_scalar] = (ix == 0) | (ix == self.Nx - 1)
        self.dirichlet_mask = mask
        self.free = np.flatnonzero(~mask)
        self._ops = {}
        self._build_quadrature()

    # -- quadrature grid ---------------------------------------------------

    def _build_quadrature(self):
        g, w = np.polynomial.legendre.leggauss(GAUSS_PER_CELL)
        ref, wref = 0.5 * (g + 1.0), 0.5 * w
        self._Vt, self._Dt = lagrange_cubic_tables(ref)
        self._ref, self._wref = ref, wref
        bt, bx = self.grid.breakpoints_t, self.grid.breakpoints_x
        ht, hx = np.diff(bt), np.diff(bx)
        tq = (bt[:-1, None] + np.outer(ht, ref)).ravel()      # (nt*6,)
        xq = (bx[:-1, None] + np.outer(hx, ref)).ravel()
        wt = np.outer(ht, wref).ravel()
        wx = np.outer(hx, wref).ravel()
        T, X = np.meshgrid(tq, xq, indexing="ij")
        self.quad_points = np.column_stack([T.ravel(), X.ravel()])
        self.quad_weights = np.outer(wt, wx).ravel()
        self.nq = self.quad_points.shape[0]
        self._ht, self._hx = ht, hx
        # initial/final faces: 1D Gauss along x
        self.quad_points_initial = xq.copy()
        self.quad_weights_initial = wx.copy()
        self.nq_face = len(xq)

    # -- sparse evaluation operators ----------------------------------------

    def _axis_matrix(self, n_cells, N, h, deriv):
        """1D operator: values (or derivatives) of all global basis functions
        at the per-cell Gauss points; shape (n_cells*6, N)."""
        V, D = self._Vt, self._Dt
        tab = D if deriv else V
        rows, cols, vals = [], [], []
        for k in range(n_cells):
            scale = 1.0 / h[k] if deriv else 1.0
            for q in range(GAUSS_PER_CELL):
                r = k * GAUSS_PER_CELL + q
                for a in range(4):
                    rows.append(r)
                    cols.append(3 * k + a)
                    vals.append(tab[q, a] * scale)
        return sp.csr_matrix((vals, (rows, cols)),
                             shape=(n_cells * GAUSS_PER_CELL, N))

    def op(self, kind, comp):
        """Sparse (nq x ndof) evaluation operator.

        kind: 'val' | 'dt' | 'dx' on cells, 'tr0' | 'trT' on the initial or
        final face (value of the component's trace).
        """
        key = (kind, comp)
        if key in self._ops:
            return self._ops[key]
        At_val = self._axis_matrix(self.nt, self.Nt, self._ht, deriv=False)
        Ax_val = self._axis_matrix(self.nx, self.Nx, self._hx, deriv=False)
        if kind == "val":
            M = sp.kron(At_val, Ax_val, format="csr")
        elif kind == "dt":
            At = self._axis_matrix(self.nt, self.Nt, self._ht, deriv=True)
            M = sp.kron(At, Ax_val, format="csr")
        elif kind == "dx":
            Ax = self._axis_matrix(self.nx, self.Nx, self._hx, deriv=True)
            M = sp.kron(At_val, Ax, format="csr")
        elif kind in ("tr0", "trT"):
            it = 0 if kind == "tr0" else self.Nt - 1
            sel = sp.csr_matrix(
                (np.ones(self.Nx),
                 (np.arange(self.Nx), it * self.Nx + np.arange(self.Nx))),
                shape=(self.Nx, self.ndof_scalar))
            M = Ax_val @ sel
        else:
            raise ValueError(f"unknown operator {kind!r}")
        nq = M.shape[0]
        blocks = [sp.csr_matrix((nq, self.ndof_scalar))] * self.components
        blocks[comp] = M
        out = sp.hstack(blocks, format="csr")
        self._ops[key] = out
        return out

    def div_op(self):
        """Space-time divergence: dt of component 0 plus dx of component 1."""
        return (self.op("dt", 0) + self.op("dx", 1)).tocsr()

    def gram_u(self) -> sp.csr_matrix:
        """Gram matrix of the graph inner product (full dof set)."""
        W = sp.diags(self.quad_weights)
        W0 = sp.diags(self.quad_weights_initial)
        E1, Ex = self.op("val", 0), self.op("dx", 0)
        E2, Ed = self.op("val", 1), self.div_op()
        G = (E1.T @ W @ E1 + Ex.T @ W @ Ex + E2.T @ W @ E2 + Ed.T @ W @ Ed)
        return G.tocsr()

    # -- interpolation / evaluation ------------------------------------------

    def node_coordinates(self):
        bt, bx = self.grid.breakpoints_t, self.grid.breakpoints_x
        tn = np.concatenate([np.concatenate(
            [bt[k] + self._node_offsets(self._ht[k]) for k in range(self.nt)]),
            [bt[-1]]])
        xn = np.concatenate([np.concatenate(
            [bx[k] + self._node_offsets(self._hx[k]) for k in range(self.nx)]),
            [bx[-1]]])
        return tn, xn

    @staticmethod
    def _node_offsets(h):
        return np.array([0.0, h / 3.0, 2.0 * h / 3.0])

    def interpolate(self, f, comp=0):
        """Nodal interpolation of ``f(points)`` into the given component."""
        tn, xn = self.node_coordinates()
        T, X = np.meshgrid(tn, xn, indexing="ij")
        pts = np.column_stack([T.ravel(), X.ravel()])
        coefs = np.zeros(self.ndof)
        coefs[comp * self.ndof_scalar:(comp + 1) * self.ndof_scalar] = f(pts)
        return coefs

    def evaluate(self, coefs, points, comp=0):
        """Evaluate one component at arbitrary points of the grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        bt, bx = self.grid.breakpoints_t, self.grid.breakpoints_x
        kt = np.clip(np.searchsorted(bt, pts[:, 0], side="right") - 1,
                     0, self.nt - 1)
        kx = np.clip(np.searchsorted(bx, pts[:, 1], side="right") - 1,
                     0, self.nx - 1)
        rt = (pts[:, 0] - bt[kt]) / self._ht[kt]
        rx = (pts[:, 1] - bx[kx]) / self._hx[kx]
        Vt, _ = lagrange_cubic_tables(rt)
        Vx, _ = lagrange_cubic_tables(rx)
        u = coefs[comp * self.ndof_scalar:(comp + 1) * self.ndof_scalar]
        out = np.zeros(len(pts))
        for a in range(4):
            for b in range(4):
                idx = (3 * kt + a) * self.Nx + (3 * kx + b)
                out += Vt[:, a] * Vx[:, b] * u[idx]
        return out


def integrate_tensor(grid: TensorGrid, integrand):
    space = TensorProductSpace(grid, components=1,
                               constrain_first_on_lateral=False)
    vals = np.asarray(integrand(space.quad_points))
    return float(np.sum(space.quad_weights * vals))
