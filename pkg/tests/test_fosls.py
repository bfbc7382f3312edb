import numpy as np
import pytest

from stfosls import mesh as M
from stfosls.fem import FESpace
from stfosls.fields import ScalarField
from stfosls.fosls import (assemble_fosls, assemble_fosls_load,
                           assemble_fosls_matrix, assemble_u_gram, g_values,
                           heat_problem, residual_estimator, solve_fosls,
                           u_norm, FOSLSProblem)
from stfosls.linalg import solve_spd
from stfosls.quadrature import simplex_rule


def manufactured_heat_1d():
    pi = np.pi
    u = lambda p: np.cos(pi * p[:, 0]) * np.sin(pi * p[:, 1])
    f1 = lambda p: (-pi * np.sin(pi * p[:, 0])
                    + pi ** 2 * np.cos(pi * p[:, 0])) * np.sin(pi * p[:, 1])
    u0 = lambda p: np.sin(pi * p[:, 1])
    prob = heat_problem(1, f1=ScalarField(f1), u0=ScalarField(u0))
    return prob, u


def oracle_quadratic_form(problem, space, coefs, degree=6):
    """Independent per-cell quadrature of ||G u||_L^2: a pedestrian loop with
    its own basis evaluation, sharing no code with the assembly path."""
    mesh = space.mesh
    d = mesh.dim
    rule = simplex_rule(d + 1, degree)
    total = 0.0
    u = np.asarray(coefs)
    for ci in range(mesh.num_cells):
        cell = mesh.cells[ci]
        verts = mesh.vertices[cell]
        E = (verts[1:] - verts[0]).T          # columns are edge vectors
        vol = abs(np.linalg.det(E)) / np.prod(range(1, d + 2))
        grads = np.zeros((d + 2, d + 1))
        grads[1:] = np.linalg.inv(E)
        grads[0] = -grads[1:].sum(axis=0)
        for lam, wq in zip(rule.barycentric(), rule.weights):
            x = lam @ verts
            w = wq * vol * np.prod(range(1, d + 2))
            u1 = sum(lam[i] * u[cell[i]] for i in range(d + 2))
            du1 = sum(u[cell[i]] * grads[i] for i in range(d + 2))
            Av = problem.A_fn(x[None])[0]
            bv = problem.b_fn(x[None])[0]
            cv = problem.c_fn(x[None])[0]
            g1 = du1[0] + bv @ du1[1:] + cv * u1
            g2 = -Av @ du1[1:]
            for k in range(1, d + 1):
                comp = u[k * space.ndof_scalar + cell]
                g1 += sum(comp[i] * grads[i][k] for i in range(d + 2))
                g2[k - 1] -= sum(lam[i] * comp[i] for i in range(d + 2))
            total += w * (g1 ** 2 + g2 @ g2)
    # initial-trace part
    rule0 = simplex_rule(d, degree)
    for facet in [f for f, t in zip(mesh.boundary_facets, mesh.boundary_tags)
                  if t == 0]:
        verts = mesh.vertices[facet]
        edges = verts[1:] - verts[0]
        gram = edges @ edges.T
        vol = np.sqrt(abs(np.linalg.det(gram))) / np.prod(range(1, d + 1))
        for lam, wq in zip(rule0.barycentric(), rule0.weights):
            w = wq * vol * np.prod(range(1, d + 1))
            tr = sum(lam[i] * u[facet[i]] for i in range(d + 1))
            total += w * tr ** 2
    return total


class TestAssembly:
    def test_time_ramp(self):
        m = M.build_unit_cylinder_mesh(1)
        space = FESpace(m, 2, 1, True)
        A = assemble_fosls_matrix(heat_problem(1), space)
        coefs = np.zeros(space.ndof)
        coefs[:space.ndof_scalar] = m.vertices[:, 0]
        assert abs(coefs @ (A @ coefs) - 1.0) < 1e-13

    def test_constant_flux(self):
        m = M.build_unit_cylinder_mesh(1)
        space = FESpace(m, 2, 1, True)
        A = assemble_fosls_matrix(heat_problem(1), space)
        coefs = np.zeros(space.ndof)
        coefs[space.ndof_scalar:] = 1.0
        assert abs(coefs @ (A @ coefs) - 1.0) < 1e-13

    @pytest.mark.parametrize("d", [1, 2])
    def test_random_field_vs_oracle(self, d):
        mesh = M.build_unit_cylinder_mesh(d).refine_uniform()
        space = FESpace(mesh, d + 1, 1, True)
        problem = FOSLSProblem(d=d, A=1.3, b=[0.4] * d, c=0.7)
        A = assemble_fosls_matrix(problem, space)
        rng = np.random.default_rng(5)
        coefs = rng.standard_normal(space.ndof)
        direct = coefs @ (A @ coefs)
        oracle = oracle_quadratic_form(problem, space, coefs)
        assert abs(direct - oracle) <= 1e-12 * abs(oracle)

    def test_symmetry(self):
        for d in (1, 2):
            mesh = M.build_unit_cylinder_mesh(d).refine_uniform()
            space = FESpace(mesh, d + 1, 1, True)
            A = assemble_fosls_matrix(heat_problem(d), space)
            assert abs(A - A.T).max() <= 1e-13 * abs(A).max()

    def test_coercivity_small_mesh(self):
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        prob, _ = manufactured_heat_1d()
        system = assemble_fosls(prob, space)
        eig = np.linalg.eigvalsh(system.matrix_free.toarray())
        assert eig.min() > 0

    def test_invalid_coefficients_rejected(self):
        mesh = M.build_unit_cylinder_mesh(1)
        space = FESpace(mesh, 2, 1, True)
        with pytest.raises(ValueError):
            assemble_fosls(FOSLSProblem(d=1, A=-1.0), space)


class TestSolve:
    def test_discrete_consistency(self):
        # data manufactured as G v for a fixed discrete v: solver returns v
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform().refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        prob, _ = manufactured_heat_1d()
        system = assemble_fosls(prob, space)
        rng = np.random.default_rng(6)
        v = rng.standard_normal(space.free.size)
        rhs = system.matrix_free @ v
        got = solve_spd(system.matrix_free, rhs)
        assert np.max(np.abs(got - v)) < 1e-9 * max(1.0, np.max(np.abs(v)))

    def test_zero_data_zero_solution(self):
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        coefs = solve_fosls(heat_problem(1), space)
        assert np.max(np.abs(coefs)) < 1e-12

    def test_flux_data_path(self):
        # data (f1, f2, u0) = (0, -c, 0) is matched exactly by (u1, u2) = (0, c)
        from stfosls.fields import VectorField
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        f2 = VectorField(lambda p: np.full((len(p), 1), -0.75))
        prob = heat_problem(1, f2=f2)
        coefs = solve_fosls(prob, space)
        assert np.max(np.abs(coefs[:space.ndof_scalar])) < 1e-10
        assert np.max(np.abs(coefs[space.ndof_scalar:] - 0.75)) < 1e-10
        assert residual_estimator(prob, space, coefs) < 1e-10

    def test_estimator_decreases_under_refinement(self):
        prob, _ = manufactured_heat_1d()
        mesh = M.build_unit_cylinder_mesh(1)
        previous = np.inf
        for _ in range(4):
            space = FESpace(mesh, 2, 1, True)
            coefs = solve_fosls(prob, space)
            est = residual_estimator(prob, space, coefs)
            assert est < previous
            previous = est
            mesh = mesh.refine_uniform()

    def test_galerkin_orthogonality(self):
        prob, _ = manufactured_heat_1d()
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform().refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        system = assemble_fosls(prob, space)
        x = solve_spd(system.matrix_free, system.load_free)
        res = system.matrix_free @ x - system.load_free
        assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(system.load_free)


class TestEstimator:
    def test_consistent_data_gives_zero(self):
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        prob = heat_problem(1)
        assert residual_estimator(prob, space, np.zeros(space.ndof)) < 1e-9

    def test_algebraic_identity(self):
        # estimator^2 = |f|^2 - 2 <f, G u> + a(u, u), all at one rule
        prob, _ = manufactured_heat_1d()
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform().refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        coefs = solve_fosls(prob, space)
        deg = 8
        est = residual_estimator(prob, space, coefs, deg)
        A8 = assemble_fosls_matrix(prob, space, deg)
        l8 = assemble_fosls_load(prob, space, deg)
        _, pts, w = space.cell_quadrature(deg)
        f1v = prob.f1(pts.reshape(-1, 2)).reshape(w.shape)
        _, _, fpts, fw = space.facet_quadrature(M.INITIAL, deg)
        u0v = prob.u0(fpts.reshape(-1, 2)).reshape(fw.shape)
        fnorm2 = np.sum(w * f1v ** 2) + np.sum(fw * u0v ** 2)
        rhs = fnorm2 - 2 * (l8 @ coefs) + coefs @ (A8 @ coefs)
        assert abs(est ** 2 - rhs) <= 1e-9 * est ** 2

    def test_estimator_exactness_vs_error_quadrature(self):
        # f = G u for closed-form u: the data residual equals ||G(u - u^d)||
        prob, u = manufactured_heat_1d()
        pi = np.pi
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform().refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        coefs = solve_fosls(prob, space)
        est = residual_estimator(prob, space, coefs)
        g1, g2, tr = g_values(prob, space, coefs)
        _, pts, w = space.cell_quadrature(8)
        flat = pts.reshape(-1, 2)
        g1ex = prob.f1(flat).reshape(w.shape)      # G1(u) = f1 pointwise
        g2ex = np.zeros(w.shape + (1,))            # u2 = -grad u exactly
        _, _, fpts, fw = space.facet_quadrature(M.INITIAL, 8)
        trex = prob.u0(fpts.reshape(-1, 2)).reshape(fw.shape)
        err = np.sqrt(np.sum(w * (g1ex - g1) ** 2)
                      + np.sum(w[:, :, None] * (g2ex - g2) ** 2)
                      + np.sum(fw * (trex - tr) ** 2))
        assert abs(est - err) <= 1e-8 * err

    def test_quasi_optimality_proxy(self):
        prob, u = manufactured_heat_1d()
        pi = np.pi
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform().refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        coefs = solve_fosls(prob, space)
        # nodal interpolant of the exact pair (u, -grad_x u)
        interp = np.zeros(space.ndof)
        interp[:space.ndof_scalar] = u(mesh.vertices)
        interp[space.ndof_scalar:] = -pi * np.cos(pi * mesh.vertices[:, 0]) \
            * np.cos(pi * mesh.vertices[:, 1])
        deg = 4   # the norm the Galerkin solution minimizes
        assert (residual_estimator(prob, space, coefs, deg)
                <= residual_estimator(prob, space, interp, deg) + 1e-9)


class TestGraphGram:
    def test_time_ramp_norm(self):
        m = M.build_unit_cylinder_mesh(1)
        space = FESpace(m, 2, 1, True)
        G = assemble_u_gram(space)
        coefs = np.zeros(space.ndof)
        coefs[:space.ndof_scalar] = m.vertices[:, 0]
        assert abs(coefs @ (G @ coefs) - 4.0 / 3.0) < 1e-13
        assert u_norm(space, coefs) == pytest.approx(np.sqrt(4.0 / 3.0))

    def test_zero(self):
        m = M.build_unit_cylinder_mesh(1)
        space = FESpace(m, 2, 1, True)
        G = assemble_u_gram(space)
        assert abs(np.zeros(space.ndof) @ (G @ np.zeros(space.ndof))) == 0.0

    def test_random_field_vs_oracle(self):
        # independent loop for <u,u>_U = |u1|^2 + |grad_x u1|^2 + |u2|^2 + |div u|^2
        mesh = M.build_unit_cylinder_mesh(1).refine_uniform()
        space = FESpace(mesh, 2, 1, True)
        G = assemble_u_gram(space)
        rng = np.random.default_rng(7)
        u = rng.standard_normal(space.ndof)
        rule = simplex_rule(2, 6)
        total = 0.0
        for ci in range(mesh.num_cells):
            cell = mesh.cells[ci]
            verts = mesh.vertices[cell]
            E = (verts[1:] - verts[0]).T
            vol = abs(np.linalg.det(E)) / 2
            grads = np.zeros((3, 2))
            grads[1:] = np.linalg.inv(E)
            grads[0] = -grads[1:].sum(axis=0)
            u1n = u[cell]
            u2n = u[space.ndof_scalar + cell]
            du1 = sum(u1n[i] * grads[i] for i in range(3))
            du2 = sum(u2n[i] * grads[i] for i in range(3))
            for lam, wq in zip(rule.barycentric(), rule.weights):
                w = wq * vol * 2
                u1 = lam @ u1n
                u2 = lam @ u2n
                div = du1[0] + du2[1]
                total += w * (u1 ** 2 + du1[1] ** 2 + u2 ** 2 + div ** 2)
        assert abs(u @ (G @ u) - total) <= 1e-12 * abs(total)
