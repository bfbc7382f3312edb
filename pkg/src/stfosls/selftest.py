"""Fast property suites runnable from the command line (`stfosls run
selftest`).  Each check prints one PASS/FAIL line; the run fails if any
check fails."""

import numpy as np

from .fem import FESpace
from .fields import ScalarField
from .fosls import (assemble_fosls, assemble_fosls_matrix, heat_problem,
                    residual_estimator, solve_fosls)
from .mesh import build_moving_domain_mesh, build_unit_cylinder_mesh
from .quadrature import simplex_monomial_integral, simplex_rule


def _manufactured_heat(d=1):
    pi = np.pi

    def u(p):
        out = np.cos(pi * p[:, 0])
        for k in range(1, d + 1):
            out = out * np.sin(pi * p[:, k])
        return out

    def f1(p):
        out = (-pi * np.sin(pi * p[:, 0]) + d * pi ** 2 * np.cos(pi * p[:, 0]))
        for k in range(1, d + 1):
            out = out * np.sin(pi * p[:, k])
        return out

    def u0(p):
        out = np.ones(p.shape[0])
        for k in range(1, d + 1):
            out = out * np.sin(pi * p[:, k])
        return out

    return heat_problem(d, f1=ScalarField(f1), u0=ScalarField(u0))


def check_quadrature_exactness():
    from itertools import product as iproduct

    worst = 0.0
    for dim in (1, 2, 3):
        for deg in (4, 8):
            rule = simplex_rule(dim, deg)
            for exps in iproduct(range(deg + 1), repeat=dim):
                if sum(exps) > rule.exactness_degree:
                    continue
                val = np.sum(rule.weights
                             * np.prod(rule.points ** np.array(exps), axis=1))
                exact = simplex_monomial_integral(exps)
                worst = max(worst, abs(val - exact) / abs(exact))
    return worst, 1e-13, "quadrature monomial exactness"


def check_partition_of_unity():
    worst = 0.0
    for d in (1, 2):
        mesh = build_unit_cylinder_mesh(d).refine_uniform()
        space = FESpace(mesh, 1, 1)
        bary, _, _ = space.cell_quadrature(8)
        worst = max(worst, float(np.max(np.abs(bary.sum(axis=1) - 1.0))))
    return worst, 1e-13, "partition of unity at quadrature points"


def check_volume_conservation():
    worst = 0.0
    for build, d in ((build_unit_cylinder_mesh, 1), (build_unit_cylinder_mesh, 2),
                     (build_moving_domain_mesh, 1), (build_moving_domain_mesh, 2)):
        mesh = build(d)
        v0 = mesh.total_volume()
        for _ in range(2 if d == 2 else 3):
            mesh = mesh.refine_uniform()
        worst = max(worst, abs(mesh.total_volume() - v0) / v0)
    return worst, 1e-12, "volume conservation under refinement"


def check_matrix_symmetry():
    worst = 0.0
    for d in (1, 2):
        mesh = build_unit_cylinder_mesh(d).refine_uniform()
        space = FESpace(mesh, d + 1, 1, True)
        A = assemble_fosls_matrix(_manufactured_heat(d), space)
        worst = max(worst, float(abs(A - A.T).max() / abs(A).max()))
    return worst, 1e-13, "least-squares matrix symmetry"


def check_galerkin_orthogonality():
    worst = 0.0
    for d in (1, 2):
        mesh = build_unit_cylinder_mesh(d)
        for _ in range(2):
            mesh = mesh.refine_uniform()
        space = FESpace(mesh, d + 1, 1, True)
        prob = _manufactured_heat(d)
        system = assemble_fosls(prob, space)
        x = np.zeros(space.ndof)
        from .linalg import solve_spd
        xf = solve_spd(system.matrix_free, system.load_free)
        res = system.matrix_free @ xf - system.load_free
        worst = max(worst, float(np.linalg.norm(res)
                                 / np.linalg.norm(system.load_free)))
    return worst, 1e-9, "Galerkin orthogonality (algebraic residual)"


def check_estimator_identity():
    """estimator^2 = |f|^2 - 2 <f, G u> + a(u, u) for the Galerkin solution,
    all terms computed with the same elevated quadrature."""
    worst = 0.0
    for d in (1, 2):
        mesh = build_unit_cylinder_mesh(d)
        for _ in range(2):
            mesh = mesh.refine_uniform()
        space = FESpace(mesh, d + 1, 1, True)
        prob = _manufactured_heat(d)
        coefs = solve_fosls(prob, space)
        deg = 8
        est = residual_estimator(prob, space, coefs, deg)
        from .fosls import assemble_fosls_load
        from .mesh import INITIAL
        A8 = assemble_fosls_matrix(prob, space, deg)
        l8 = assemble_fosls_load(prob, space, deg)
        _, pts, w = space.cell_quadrature(deg)
        flat = pts.reshape(-1, d + 1)
        f1v = prob.f1(flat).reshape(w.shape)
        _, _, fpts, fw = space.facet_quadrature(INITIAL, deg)
        u0v = prob.u0(fpts.reshape(-1, d + 1)).reshape(fw.shape)
        f_norm2 = float(np.sum(w * f1v ** 2) + np.sum(fw * u0v ** 2))
        rhs = f_norm2 - 2.0 * float(l8 @ coefs) + float(coefs @ (A8 @ coefs))
        worst = max(worst, abs(est ** 2 - rhs) / est ** 2)
    return worst, 1e-9, "estimator algebraic identity"


def check_conformity():
    worst = 0.0
    for build, d in ((build_unit_cylinder_mesh, 1), (build_unit_cylinder_mesh, 2),
                     (build_moving_domain_mesh, 1), (build_moving_domain_mesh, 2)):
        mesh = build(d).refine_uniform().refine_uniform()
        mesh.check_conformity()
    return worst, 1.0, "mesh conformity after refinement"


ALL_CHECKS = (
    check_quadrature_exactness,
    check_partition_of_unity,
    check_volume_conservation,
    check_conformity,
    check_matrix_symmetry,
    check_galerkin_orthogonality,
    check_estimator_identity,
)


def run_selftest(out=print):
    failures = 0
    for check in ALL_CHECKS:
        value, tol, label = check()
        ok = value <= tol
        failures += not ok
        out(f"[{'PASS' if ok else 'FAIL'}] {label}: {value:.3e} "
            f"(tolerance {tol:.0e})")
    return failures
