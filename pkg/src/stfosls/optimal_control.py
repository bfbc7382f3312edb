"""Optimal control constrained by the parabolic first-order system.

The quadratic cost 0.5*||F u - w*||_W^2 + 0.5*rho*||z||_Z^2 subject to
G u = f* + z is solved through its KKT saddle-point system

    d(u,v) + e(z,y) + a(v,p) + b(y,p) = <F v, w*>_W
    a(u,q) + b(z,q)                   = <f*, G q>_L

with a = <G.,G.>_L, b(z,v) = -<z, G v>_L, d = <F., F.>_W, e = rho <.,.>_Z.
Controls live in piecewise constants on the slots of L they act on.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import (ASSEMBLY_DEGREE, ERROR_DEGREE, FESpace,
                  block_prolongation, p1_prolongation)
from .fields import ScalarField, VectorField, check_gradient
from .fosls import (FOSLSProblem, assemble_fosls_matrix, assemble_fosls_load,
                    component_mass_load, g_values, g_weighted_load,
                    heat_problem, _chunks, _g_local)
from .linalg import BlockSaddleMatrix, solve_saddle
from .mesh import FINAL, INITIAL

_SLOTS = ("f1", "f2", "u0")


@dataclass
class ControlProblem:
    """FOSLS coefficients/data plus observation and regularization setup."""

    problem: FOSLSProblem
    chi1: object = 1.0           # weight on u1 over Q
    chi2: object = 0.0           # weight on u2 over Q
    chi3: object = 0.0           # weight on u1(T,.) over Omega
    w1: ScalarField = None
    w2: VectorField = None
    w3: ScalarField = None
    rho: float = 1.0e-2
    control_slots: tuple = ("f1",)

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("regularization parameter must be positive")
        for s in self.control_slots:
            if s not in _SLOTS:
                raise ValueError(f"unknown control slot {s!r}")


class ControlSpace:
    """Piecewise-constant control discretization on the selected L-slots."""

    def __init__(self, mesh, slots=("f1",)):
        self.mesh = mesh
        self.slots = tuple(slots)
        d = mesh.dim
        helper = FESpace(mesh, 1, 1)
        facets, _, _, fw = helper.facet_quadrature(INITIAL, 2)
        self._facet_w = fw
        sizes = {"f1": mesh.num_cells, "f2": d * mesh.num_cells,
                 "u0": facets.shape[0]}
        self.sizes = [sizes[s] for s in self.slots]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.ndof = int(self.offsets[-1])
        vols = helper.cell_volumes
        mass = {"f1": vols, "f2": np.tile(vols, d), "u0": fw.sum(axis=1)}
        self.mass_diag = np.concatenate([mass[s] for s in self.slots]) \
            if self.ndof else np.zeros(0)

    def slot_view(self, z, slot):
        i = self.slots.index(slot)
        return np.asarray(z)[self.offsets[i]:self.offsets[i + 1]]

    def f1_at_quadrature(self, z, degree=ERROR_DEGREE):
        """Values of the f1-slot control at cell quadrature points (nc, nq)."""
        helper = FESpace(self.mesh, 1, 1)
        bary, _, _ = helper.cell_quadrature(degree)
        if "f1" not in self.slots:
            return np.zeros((self.mesh.num_cells, bary.shape[0]))
        vals = self.slot_view(z, "f1")
        return np.broadcast_to(vals[:, None],
                               (len(vals), bary.shape[0])).copy()


@dataclass
class SaddleSolution:
    u: np.ndarray
    z: np.ndarray
    p: np.ndarray
    residual: float
    ndof: int


def _chi_fn(chi):
    if callable(chi):
        return chi
    return lambda pts, c=float(chi): np.full(pts.shape[0], c)


def assemble_observation_matrix(cp: ControlProblem, space: FESpace,
                                degree=ASSEMBLY_DEGREE):
    """Gram matrix of d(u,v) = <F u, F v>_W on all dofs."""
    mesh = space.mesh
    d = mesh.dim
    bary, pts, w = space.cell_quadrature(degree)
    flat = pts.reshape(-1, d + 1)
    blocks = []
    chi1 = _chi_fn(cp.chi1)(flat).reshape(w.shape)
    if np.any(chi1):
        local = np.einsum("qi,cq,qj->cij", bary, w * chi1 ** 2, bary)
        rows = np.repeat(mesh.cells, d + 2, axis=1).ravel()
        cols = np.tile(mesh.cells, (1, d + 2)).ravel()
        blocks.append(sp.coo_matrix((local.ravel(), (rows, cols)),
                                    shape=(space.ndof, space.ndof)))
    chi2 = _chi_fn(cp.chi2)(flat).reshape(w.shape)
    if np.any(chi2):
        local = np.einsum("qi,cq,qj->cij", bary, w * chi2 ** 2, bary)
        for k in range(1, d + 1):
            dk = mesh.cells + k * space.ndof_scalar
            rows = np.repeat(dk, d + 2, axis=1).ravel()
            cols = np.tile(dk, (1, d + 2)).ravel()
            blocks.append(sp.coo_matrix((local.ravel(), (rows, cols)),
                                        shape=(space.ndof, space.ndof)))
    chi3 = cp.chi3
    facets, fbary, fpts, fw = space.facet_quadrature(FINAL, degree)
    chi3v = _chi_fn(chi3)(fpts.reshape(-1, d + 1)).reshape(fw.shape)
    if np.any(chi3v):
        local = np.einsum("qi,fq,qj->fij", fbary, fw * chi3v ** 2, fbary)
        rows = np.repeat(facets, d + 1, axis=1).ravel()
        cols = np.tile(facets, (1, d + 1)).ravel()
        blocks.append(sp.coo_matrix((local.ravel(), (rows, cols)),
                                    shape=(space.ndof, space.ndof)))
    if not blocks:
        return sp.csr_matrix((space.ndof, space.ndof))
    out = blocks[0]
    for bl in blocks[1:]:
        out = out + bl
    return out.tocsr()


def assemble_coupling_matrix(problem: FOSLSProblem, space: FESpace,
                             zspace: ControlSpace, degree=ASSEMBLY_DEGREE):
    """B with b(z, v) = -<z, G v>_L, on all U dofs x control dofs."""
    mesh = space.mesh
    d = mesh.dim
    bary, pts, w = space.cell_quadrature(degree)
    nloc = (d + 1) * (d + 2)
    dofs = space.cell_dofs()
    cols_blocks, rows_blocks, data_blocks = [], [], []
    for lo, hi in _chunks(mesh.num_cells, bary.shape[0] * nloc * (d + 1)):
        G1, G2 = _g_local(problem, space, bary, pts, lo, hi)
        ww = w[lo:hi]
        if "f1" in zspace.slots:
            off = zspace.offsets[zspace.slots.index("f1")]
            local = -np.einsum("cq,cqi->ci", ww, G1)        # (chunk, nloc)
            rows_blocks.append(dofs[lo:hi].ravel())
            cols_blocks.append(np.repeat(np.arange(lo, hi) + off, nloc))
            data_blocks.append(local.ravel())
        if "f2" in zspace.slots:
            off = zspace.offsets[zspace.slots.index("f2")]
            nc = mesh.num_cells
            for k in range(d):
                local = -np.einsum("cq,cqi->ci", ww, G2[:, :, k, :])
                rows_blocks.append(dofs[lo:hi].ravel())
                cols_blocks.append(
                    np.repeat(np.arange(lo, hi) + off + k * nc, nloc))
                data_blocks.append(local.ravel())
    if "u0" in zspace.slots:
        off = zspace.offsets[zspace.slots.index("u0")]
        facets, fbary, _, fw = space.facet_quadrature(INITIAL, degree)
        local = -np.einsum("fq,qi->fi", fw, fbary)
        rows_blocks.append(facets.ravel())
        cols_blocks.append(np.repeat(np.arange(facets.shape[0]) + off,
                                     facets.shape[1]))
        data_blocks.append(local.ravel())
    B = sp.coo_matrix(
        (np.concatenate(data_blocks),
         (np.concatenate(rows_blocks), np.concatenate(cols_blocks))),
        shape=(space.ndof, zspace.ndof))
    return B.tocsr()


def assemble_goal_load(cp: ControlProblem, space: FESpace,
                       degree=ASSEMBLY_DEGREE):
    """g*(v) = <F v, w*>_W on all dofs."""
    mesh = space.mesh
    d = mesh.dim
    _, pts, w = space.cell_quadrature(degree)
    flat = pts.reshape(-1, d + 1)
    vec = np.zeros(space.ndof)
    if cp.w1 is not None:
        chi1 = _chi_fn(cp.chi1)(flat).reshape(w.shape)
        vec += component_mass_load(
            space, 0, chi1 * cp.w1(flat).reshape(w.shape), "cells", degree)
    if cp.w2 is not None:
        chi2 = _chi_fn(cp.chi2)(flat).reshape(w.shape)
        w2v = cp.w2(flat).reshape(w.shape + (d,))
        for k in range(d):
            vec += component_mass_load(space, k + 1, chi2 * w2v[:, :, k],
                                       "cells", degree)
    if cp.w3 is not None:
        _, _, fpts, fw = space.facet_quadrature(FINAL, degree)
        fl = fpts.reshape(-1, d + 1)
        chi3 = _chi_fn(cp.chi3)(fl).reshape(fw.shape)
        vec += component_mass_load(space, 0, chi3 * cp.w3(fl).reshape(fw.shape),
                                   "final", degree)
    return vec


def assemble_control_system(cp: ControlProblem, space: FESpace,
                            zspace: ControlSpace, degree=ASSEMBLY_DEGREE):
    """Free-dof saddle blocks and right-hand sides (g, f)."""
    free = space.free
    A = assemble_fosls_matrix(cp.problem, space, degree)[free][:, free]
    D = assemble_observation_matrix(cp, space, degree)[free][:, free]
    B = assemble_coupling_matrix(cp.problem, space, zspace, degree)[free]
    E = sp.diags(cp.rho * zspace.mass_diag).tocsr()
    g = assemble_goal_load(cp, space, degree)[free]
    f = assemble_fosls_load(cp.problem, space, degree)[free]
    return BlockSaddleMatrix(D, E, A, B), g, f


def solve_control(cp: ControlProblem, space: FESpace, zspace: ControlSpace,
                  degree=ASSEMBLY_DEGREE, method="direct") -> SaddleSolution:
    S, g, f = assemble_control_system(cp, space, zspace, degree)
    u_f, z, p_f = solve_saddle(S, g, f, method=method)
    opt = np.linalg.norm(S.E @ z + S.B.T @ p_f)
    scale = max(np.linalg.norm(g) + np.linalg.norm(f), 1e-300)
    if opt > 1e-9 * scale:
        raise RuntimeError(f"discrete optimality violated: {opt/scale:.2e}")
    ndof = S.nu + S.nz + S.nu
    full = np.zeros(space.ndof)
    full[space.free] = u_f
    pfull = np.zeros(space.ndof)
    pfull[space.free] = p_f
    return SaddleSolution(full, z, pfull, S.residual(u_f, z, p_f, g, f), ndof)


# ---------------------------------------------------------------------------
# manufactured cases (heat equation, chi = (1,0,0), control in the f1 slot)
# ---------------------------------------------------------------------------

@dataclass
class ManufacturedControlCase:
    d: int
    rho: float
    u1: ScalarField
    l1: ScalarField
    l1_lap: object                # x-Laplacian of l1 (callable)
    z: ScalarField
    f1_star: ScalarField
    u0_star: ScalarField
    w_star: ScalarField
    problem: FOSLSProblem = field(default=None)

    def costate_l_values(self, pts):
        """The co-state L-data (l1, -grad_x l1, l1(0,.)) at points."""
        l1 = self.l1(pts)
        gl = self.l1.gradient(pts)
        return l1, -gl[:, 1:]

    def control_problem(self) -> ControlProblem:
        return ControlProblem(problem=self.problem, chi1=1.0, chi2=0.0,
                              chi3=0.0, w1=self.w_star, rho=self.rho,
                              control_slots=("f1",))


def build_manufactured_case(d: int, rho: float = 0.01) -> ManufacturedControlCase:
    """Closed forms for the prescribed state cos(pi t) * prod sin(pi x_i) and
    co-state datum l1 = rho (1-t) * prod sin(pi x_i) on the unit cylinder."""
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    pi = np.pi

    def sx(p):
        out = np.sin(pi * p[:, 1])
        for k in range(2, d + 1):
            out = out * np.sin(pi * p[:, k])
        return out

    def sx_grad(p):
        # spatial gradient of prod sin(pi x_i)
        cols = []
        for k in range(1, d + 1):
            term = pi * np.cos(pi * p[:, k])
            for m in range(1, d + 1):
                if m != k:
                    term = term * np.sin(pi * p[:, m])
            cols.append(term)
        return np.column_stack(cols)

    lam = d * pi ** 2    # -Laplacian eigenvalue of the sine product

    u1 = ScalarField(
        lambda p: np.cos(pi * p[:, 0]) * sx(p),
        lambda p: np.column_stack(
            [-pi * np.sin(pi * p[:, 0]) * sx(p),
             np.cos(pi * p[:, 0])[:, None] * sx_grad(p)]),
        name="state")
    l1 = ScalarField(
        lambda p: rho * (1.0 - p[:, 0]) * sx(p),
        lambda p: np.column_stack(
            [-rho * sx(p),
             rho * (1.0 - p[:, 0])[:, None] * sx_grad(p)]),
        name="costate-datum")
    l1_lap = lambda p: -lam * rho * (1.0 - p[:, 0]) * sx(p)
    z = ScalarField(lambda p: (1.0 - p[:, 0]) * sx(p), name="control")
    # f1* = du/dt - lap u - z,   w* = u - dl1/dt - lap l1
    f1_star = ScalarField(
        lambda p: (-pi * np.sin(pi * p[:, 0]) + lam * np.cos(pi * p[:, 0])
                   - (1.0 - p[:, 0])) * sx(p),
        name="source")
    u0_star = ScalarField(lambda p: sx(p), name="initial")
    w_star = ScalarField(
        lambda p: (np.cos(pi * p[:, 0]) + rho * (1.0 + lam * (1.0 - p[:, 0])))
        * sx(p),
        name="target")
    problem = heat_problem(d, f1=f1_star, u0=u0_star, end_time=1.0)
    case = ManufacturedControlCase(d, rho, u1, l1, l1_lap, z, f1_star,
                                   u0_star, w_star, problem)
    _verify_case(case)
    return case


def _verify_case(case, n=100, seed=7):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, case.d + 1)) * 0.96 + 0.02
    check_gradient(case.u1, pts)
    check_gradient(case.l1, pts)
    # compatibility: l1(T,.) = 0, traces on Sigma vanish
    ptsT = pts.copy()
    ptsT[:, 0] = 1.0
    assert np.max(np.abs(case.l1(ptsT))) < 1e-12
    for k in range(1, case.d + 1):
        for val in (0.0, 1.0):
            side = pts.copy()
            side[:, k] = val
            assert np.max(np.abs(case.l1(side))) < 1e-12
            assert np.max(np.abs(case.u1(side))) < 1e-12


def exact_cost(case: ManufacturedControlCase, degree=12) -> float:
    """J(u, z) of the manufactured optimum by elevated quadrature on a
    reference mesh (the integrand is smooth and periodic-free)."""
    from .fem import integrate
    from .mesh import build_unit_cylinder_mesh

    mesh = build_unit_cylinder_mesh(case.d)
    for _ in range(2):
        mesh = mesh.refine_uniform()

    def dens(p):
        mis = case.u1(p) - case.w_star(p)
        return 0.5 * mis ** 2 + 0.5 * case.rho * case.z(p) ** 2

    return integrate(mesh, dens, "cells", degree)


# ---------------------------------------------------------------------------
# error report and estimators
# ---------------------------------------------------------------------------

def control_error_report(case: ManufacturedControlCase, sol: SaddleSolution,
                         space: FESpace, zspace: ControlSpace,
                         degree=ERROR_DEGREE) -> dict:
    """Every reported error quantity of a manufactured-case solution."""
    d = case.d
    prob = case.problem
    _, pts, w = space.cell_quadrature(degree)
    flat = pts.reshape(-1, d + 1)

    # err_U = ||(f*+z, 0, u0*) - G u^delta||_L   (G u = f* + z exactly)
    g1u, g2u, tru = g_values(prob, space, sol.u, degree)
    zex = case.z(flat).reshape(w.shape)
    r1 = case.f1_star(flat).reshape(w.shape) + zex - g1u
    facets, _, fpts, fw = space.facet_quadrature(INITIAL, degree)
    r0 = case.u0_star(fpts.reshape(-1, d + 1)).reshape(fw.shape) - tru
    err_U = np.sqrt(np.sum(w * r1 ** 2) + np.sum(w[:, :, None] * g2u ** 2)
                    + np.sum(fw * r0 ** 2))

    u1v = space.values_at_cells(sol.u, 0, degree)
    du1v = space.gradients_at_cells(sol.u, 0, degree)[:, :, 1:]
    uex = case.u1(flat).reshape(w.shape)
    guex = case.u1.gradient(flat)[:, 1:].reshape(w.shape + (d,))
    err_Y = np.sqrt(np.sum(w[:, :, None] * (guex - du1v) ** 2))
    err_l2 = np.sqrt(np.sum(w * (uex - u1v) ** 2))

    def face_err(tag):
        _, _, fp, fwt = space.facet_quadrature(tag, degree)
        trv = space.trace_at_facets(sol.u, 0, tag, degree)
        exv = case.u1(fp.reshape(-1, d + 1)).reshape(fwt.shape)
        return np.sqrt(np.sum(fwt * (exv - trv) ** 2))

    err_0 = face_err(INITIAL)
    err_T = face_err(FINAL)

    zv = zspace.f1_at_quadrature(sol.z, degree)
    err_z1 = np.sqrt(np.sum(w * (zex - zv) ** 2))

    wsv = case.w_star(flat).reshape(w.shape)
    J_delta = 0.5 * np.sum(w * (u1v - wsv) ** 2) + 0.5 * case.rho * np.sum(w * zv ** 2)
    err_J = abs(exact_cost(case) - J_delta)

    l1v, l2v = case.costate_l_values(flat)
    g1p, g2p, trp = g_values(prob, space, sol.p, degree)
    rp1 = l1v.reshape(w.shape) - g1p
    rp2 = l2v.reshape(w.shape + (d,)) - g2p
    rp0 = case.l1(fpts.reshape(-1, d + 1)).reshape(fw.shape) - trp
    err_p = np.sqrt(np.sum(w * rp1 ** 2) + np.sum(w[:, :, None] * rp2 ** 2)
                    + np.sum(fw * rp0 ** 2))

    return {"ndof": sol.ndof, "err_U": float(err_U), "err_Y": float(err_Y),
            "err_0": float(err_0), "err_T": float(err_T),
            "err_l2": float(err_l2), "err_z1": float(err_z1),
            "err_J": float(err_J), "err_p": float(err_p)}


def efficient_estimator(cp: ControlProblem, sol: SaddleSolution,
                        space: FESpace, zspace: ControlSpace,
                        degree=ASSEMBLY_DEGREE) -> dict:
    """Computable lower-bound-type estimator: the KKT residual functional
    over one uniform refinement (dual-norm via the graph Gram matrix), plus
    the state-equation and gradient-equation residual norms."""
    from .fosls import assemble_u_gram
    from .linalg import solve_spd

    if zspace.slots != ("f1",):
        raise NotImplementedError(
            "the efficient estimator covers source-term (f1-slot) controls")
    d = space.mesh.dim
    fine_mesh = space.mesh.refine_uniform()
    fine = FESpace(fine_mesh, space.components, 1,
                   constrain_first_on_lateral=True)
    P1 = p1_prolongation(fine_mesh)
    P = block_prolongation(P1, space.components)
    u_fine = P @ sol.u
    p_fine = P @ sol.p

    _, pts, w = fine.cell_quadrature(degree)
    flat = pts.reshape(-1, d + 1)
    chi1 = _chi_fn(cp.chi1)(flat).reshape(w.shape)
    u1v = fine.values_at_cells(u_fine, 0, degree)
    w1v = cp.w1(flat).reshape(w.shape) if cp.w1 is not None else 0.0 * u1v
    # r(v) = <F v, w* - F u>_W - <G v, G p>_L
    r = component_mass_load(fine, 0, chi1 * (w1v - chi1 * u1v), "cells", degree)
    if callable(cp.chi2) or cp.chi2:
        chi2 = _chi_fn(cp.chi2)(flat).reshape(w.shape)
        u2v = np.stack([fine.values_at_cells(u_fine, k, degree)
                        for k in range(1, d + 1)], axis=-1)
        w2v = cp.w2(flat).reshape(w.shape + (d,)) if cp.w2 is not None else 0.0 * u2v
        for k in range(d):
            r += component_mass_load(fine, k + 1,
                                     chi2 * (w2v[:, :, k] - chi2 * u2v[:, :, k]),
                                     "cells", degree)
    if callable(cp.chi3) or cp.chi3:
        fc, _, fp, fwt = fine.facet_quadrature(FINAL, degree)
        chi3 = _chi_fn(cp.chi3)(fp.reshape(-1, d + 1)).reshape(fwt.shape)
        uTv = fine.trace_at_facets(u_fine, 0, FINAL, degree)
        w3v = cp.w3(fp.reshape(-1, d + 1)).reshape(fwt.shape) \
            if cp.w3 is not None else 0.0 * uTv
        r += component_mass_load(fine, 0, chi3 * (w3v - chi3 * uTv),
                                 "final", degree)
    g1p, g2p, trp = g_values(cp.problem, fine, p_fine, degree)
    r -= g_weighted_load(cp.problem, fine, g1p, g2p, trp, degree)

    r_free = r[fine.free]
    M = assemble_u_gram(fine, degree)[fine.free][:, fine.free]
    term1 = float(np.sqrt(max(r_free @ solve_spd(M, r_free), 0.0)))

    # Galerkin check: the same functional assembled with the coarse solve's
    # own quadrature (the first saddle-row residual) vanishes on U^delta
    D_c = assemble_observation_matrix(cp, space, degree)[space.free][:, space.free]
    A_c = assemble_fosls_matrix(cp.problem, space, degree)[space.free][:, space.free]
    g_c = assemble_goal_load(cp, space, degree)[space.free]
    r_on_old = float(np.linalg.norm(
        g_c - D_c @ sol.u[space.free] - A_c @ sol.p[space.free]))

    # state-equation residual || f* + z - G u ||_L on the coarse space
    deg_err = ERROR_DEGREE
    _, cpts, cw = space.cell_quadrature(deg_err)
    cflat = cpts.reshape(-1, d + 1)
    g1u, g2u, tru = g_values(cp.problem, space, sol.u, deg_err)
    zv = zspace.f1_at_quadrature(sol.z, deg_err)
    f1v = cp.problem.f1(cflat).reshape(cw.shape) if cp.problem.f1 is not None \
        else np.zeros_like(cw)
    r1 = f1v + zv - g1u
    r2 = -g2u if cp.problem.f2 is None else \
        cp.problem.f2(cflat).reshape(cw.shape + (d,)) - g2u
    facets, _, fpts, fw = space.facet_quadrature(INITIAL, deg_err)
    u0v = cp.problem.u0(fpts.reshape(-1, d + 1)).reshape(fw.shape) \
        if cp.problem.u0 is not None else np.zeros_like(fw)
    r0 = u0v - tru
    term2 = float(np.sqrt(np.sum(cw * r1 ** 2) + np.sum(cw[:, :, None] * r2 ** 2)
                          + np.sum(fw * r0 ** 2)))

    # gradient-equation residual || (G p)_1 - rho z ||
    g1pc, _, _ = g_values(cp.problem, space, sol.p, deg_err)
    term3 = float(np.sqrt(np.sum(cw * (g1pc - cp.rho * zv) ** 2)))

    return {"term1": term1, "term2": term2, "term3": term3,
            "combined": float(np.sqrt(term1 ** 2 + term2 ** 2 + term3 ** 2)),
            "r_on_old": r_on_old}


def reliable_bound_terms(cp: ControlProblem, sol, space: FESpace,
                         ltilde_l1: ScalarField, ltilde_l2: VectorField,
                         state_u1=None, degree=ERROR_DEGREE) -> dict:
    """The four upper-bound terms for the KKT-residual dual norm, given a
    smooth co-state candidate (l1, l2) with l1|_Sigma = 0 and third component
    l1(0,.).

    ``state_u1``: optional closed-form override of the discrete state's first
    component (used to probe vanishing residuals with exact data).
    """
    d = space.mesh.dim
    prob = cp.problem
    _, pts, w = space.cell_quadrature(degree)
    flat = pts.reshape(-1, d + 1)

    # admissibility: l1 must vanish on the lateral boundary (sampled)
    from .mesh import LATERAL
    _, _, lpts, _ = space.facet_quadrature(LATERAL, 2)
    lat = np.max(np.abs(ltilde_l1(lpts.reshape(-1, d + 1))))
    if lat > 1e-10:
        raise ValueError("co-state candidate does not vanish on Sigma")

    l1v = ltilde_l1(flat)
    l1g = ltilde_l1.gradient(flat)
    l2v = ltilde_l2(flat)
    facets, _, fpts, fw = space.facet_quadrature(INITIAL, degree)
    iflat = fpts.reshape(-1, d + 1)

    # term 1: || ltilde - G p ||_L
    g1p, g2p, trp = g_values(prob, space, sol.p, degree)
    r1 = l1v.reshape(w.shape) - g1p
    r2 = l2v.reshape(w.shape + (d,)) - g2p
    r0 = ltilde_l1(iflat).reshape(fw.shape) - trp
    term1 = np.sqrt(np.sum(w * r1 ** 2) + np.sum(w[:, :, None] * r2 ** 2)
                    + np.sum(fw * r0 ** 2))

    if state_u1 is not None:
        u1v = state_u1(flat).reshape(w.shape)
    else:
        u1v = space.values_at_cells(sol.u, 0, degree)
    chi1 = _chi_fn(cp.chi1)(flat).reshape(w.shape)
    w1v = cp.w1(flat).reshape(w.shape) if cp.w1 is not None else 0.0 * u1v
    # backward-equation residual (constant b assumed divergence-free)
    bv = prob.b_fn(flat).reshape(w.shape + (d,))
    cv = prob.c_fn(flat).reshape(w.shape)
    div_Al2 = ltilde_l2.divergence_x(flat).reshape(w.shape)
    back = (-l1g[:, 0].reshape(w.shape) + div_Al2
            - np.einsum("cqk,cqk->cq", bv, l1g[:, 1:].reshape(w.shape + (d,)))
            + cv * l1v.reshape(w.shape)
            - chi1 * (w1v - chi1 * u1v))
    term2 = np.sqrt(np.sum(w * back ** 2))

    chi2 = _chi_fn(cp.chi2)(flat).reshape(w.shape)
    if state_u1 is not None or not np.any(chi2):
        u2v = np.zeros(w.shape + (d,))
    else:
        u2v = np.stack([space.values_at_cells(sol.u, k, degree)
                        for k in range(1, d + 1)], axis=-1)
    w2v = cp.w2(flat).reshape(w.shape + (d,)) if cp.w2 is not None else 0.0 * u2v
    grad_rel = (-l1g[:, 1:].reshape(w.shape + (d,)) - l2v.reshape(w.shape + (d,))
                - chi2[:, :, None] * (w2v - chi2[:, :, None] * u2v))
    term3 = np.sqrt(np.sum(w[:, :, None] * grad_rel ** 2))

    fc, _, fp, fwt = space.facet_quadrature(FINAL, degree)
    fflat = fp.reshape(-1, d + 1)
    chi3 = _chi_fn(cp.chi3)(fflat).reshape(fwt.shape)
    if state_u1 is not None:
        uTv = state_u1(fflat).reshape(fwt.shape)
    else:
        uTv = space.trace_at_facets(sol.u, 0, FINAL, degree)
    w3v = cp.w3(fflat).reshape(fwt.shape) if cp.w3 is not None else 0.0 * uTv
    term4 = np.sqrt(np.sum(fwt * (ltilde_l1(fflat).reshape(fwt.shape)
                                  - chi3 * (w3v - chi3 * uTv)) ** 2))

    return {"costate_gap": float(term1), "backward_residual": float(term2),
            "gradient_residual": float(term3), "terminal_residual": float(term4)}
