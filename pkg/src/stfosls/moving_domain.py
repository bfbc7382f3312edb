"""Heat-equation FOSLS on time-dependent spatial domains.

The moving geometry is described by kappa(t, xhat) = (t, kappa'(t, xhat));
the experiments use the tent-pinch scaling kappa'(t, xhat) =
(xhat - 1/2) s(t) + 1/2 with s(t) = |t - 1/2| + 1/2, applied componentwise.
The solver itself only ever sees a mesh of the deformed polytope; the map is
used to manufacture data and to verify the Piola-transform identities that
underpin well-posedness.
"""

from dataclasses import dataclass

import numpy as np

from .fem import ERROR_DEGREE, FESpace
from .fields import ScalarField
from .fosls import heat_problem, residual_estimator, solve_fosls
from .mesh import FINAL, INITIAL, SpaceTimeMesh, build_moving_domain_mesh


@dataclass
class DeformationMap:
    """Closed-form bijection of the unit cylinder onto the moving domain."""

    d: int
    map_x: object        # (n, d+1) hat points (t, xhat) -> (n, d) physical x
    inv_x: object        # (n, d+1) physical points (t, x) -> (n, d) xhat
    dt_kp: object        # (n, d)   time derivative of kappa'
    Dx_kp: object        # (n, d, d) spatial Jacobian of kappa'
    det: object          # (n,)     det Dkappa = det Dx_kp

    def piola(self, u):
        """Return uhat(that points) for a space-time vector field u on Q:
        uhat = det Dkappa (Dkappa)^{-1} (u o kappa)."""

        def uhat(pts_hat):
            pts_hat = np.atleast_2d(pts_hat)
            x = self.map_x(pts_hat)
            phys = np.column_stack([pts_hat[:, 0], x])
            uv = np.atleast_2d(u(phys))
            det = self.det(pts_hat)
            Dx = self.Dx_kp(pts_hat)
            dt = self.dt_kp(pts_hat)
            u1 = uv[:, 0]
            u2 = uv[:, 1:]
            sol = np.linalg.solve(Dx, (u2 - dt * u1[:, None])[..., None])[..., 0]
            return np.column_stack([det * u1, det[:, None] * sol])

        return uhat


def identity_map(d: int) -> DeformationMap:
    return DeformationMap(
        d=d,
        map_x=lambda p: p[:, 1:].copy(),
        inv_x=lambda p: p[:, 1:].copy(),
        dt_kp=lambda p: np.zeros((p.shape[0], d)),
        Dx_kp=lambda p: np.broadcast_to(np.eye(d), (p.shape[0], d, d)).copy(),
        det=lambda p: np.ones(p.shape[0]),
    )


def experiment_map(d: int) -> DeformationMap:
    """The pinch map with scale s(t) = |t - 1/2| + 1/2."""

    def s(t):
        return np.abs(t - 0.5) + 0.5

    def sprime(t):
        return np.sign(t - 0.5)

    return DeformationMap(
        d=d,
        map_x=lambda p: (p[:, 1:] - 0.5) * s(p[:, 0])[:, None] + 0.5,
        inv_x=lambda p: (p[:, 1:] - 0.5) / s(p[:, 0])[:, None] + 0.5,
        dt_kp=lambda p: (p[:, 1:] - 0.5) * sprime(p[:, 0])[:, None],
        Dx_kp=lambda p: np.eye(d)[None] * s(p[:, 0])[:, None, None],
        det=lambda p: s(p[:, 0]) ** d,
    )


@dataclass
class MovingCase:
    d: int
    map: DeformationMap
    mesh: SpaceTimeMesh
    u: ScalarField            # exact solution on the deformed domain
    f1: ScalarField
    u0: ScalarField
    problem: object


def build_moving_case(d: int) -> MovingCase:
    """Manufactured solution u(kappa(t, xhat)) = prod sin(pi xhat_i) with
    f1 = du/dt - lap u and u0 = u(0, .)."""
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    pi = np.pi
    kmap = experiment_map(d)

    def s(t):
        return np.abs(t - 0.5) + 0.5

    def sprime(t):
        return np.sign(t - 0.5)

    def hat(p):
        return (p[:, 1:] - 0.5) / s(p[:, 0])[:, None] + 0.5

    def u_val(p):
        return np.prod(np.sin(pi * hat(p)), axis=1)

    def u_grad(p):
        xh = hat(p)
        sv = s(p[:, 0])
        sinv = np.sin(pi * xh)
        cosv = np.cos(pi * xh)
        # d u / d xhat_i
        dudxh = np.empty_like(xh)
        for i in range(d):
            term = pi * cosv[:, i]
            for j in range(d):
                if j != i:
                    term = term * sinv[:, j]
            dudxh[:, i] = term
        dxh_dt = -(xh - 0.5) * (sprime(p[:, 0]) / sv)[:, None]
        dt = np.sum(dudxh * dxh_dt, axis=1)
        gx = dudxh / sv[:, None]
        return np.column_stack([dt, gx])

    away_from_kink = lambda p: np.abs(p[:, 0] - 0.5) > 1e-9
    u = ScalarField(u_val, u_grad, name="moving-state",
                    smooth_mask=away_from_kink)

    def f1_val(p):
        # du/dt + d*pi^2 u / s^2   (since lap u = -d pi^2 u / s^2)
        return u_grad(p)[:, 0] + d * pi ** 2 * u_val(p) / s(p[:, 0]) ** 2

    f1 = ScalarField(f1_val, name="moving-source",
                     smooth_mask=away_from_kink)
    u0 = ScalarField(lambda p: np.prod(np.sin(pi * p[:, 1:]), axis=1),
                     name="moving-initial")
    mesh = build_moving_domain_mesh(d)
    problem = heat_problem(d, f1=f1, u0=u0, end_time=1.0)
    case = MovingCase(d, kmap, mesh, u, f1, u0, problem)
    _verify_case(case)
    return case


def _verify_case(case, n=100, seed=11):
    rng = np.random.default_rng(seed)
    # interior hat points away from the kink at t = 1/2
    ph = rng.random((n, case.d + 1)) * 0.9 + 0.05
    ph = ph[np.abs(ph[:, 0] - 0.5) > 0.05]
    x = case.map.map_x(ph)
    pts = np.column_stack([ph[:, 0], x])
    from .fields import check_gradient
    check_gradient(case.u, pts)
    # u vanishes on the lateral boundary kappa(Sigma-hat)
    for k in range(1, case.d + 1):
        for val in (0.0, 1.0):
            side = ph.copy()
            side[:, k] = val
            xs = case.map.map_x(side)
            vals = case.u(np.column_stack([side[:, 0], xs]))
            assert np.max(np.abs(vals)) < 1e-12
    # f1 equals the heat residual of u (closed forms, u2 = -grad u)
    f1v = case.f1(pts)
    lap = -case.d * np.pi ** 2 * case.u(pts) / \
        (np.abs(pts[:, 0] - 0.5) + 0.5) ** 2
    res = case.u.gradient(pts)[:, 0] - lap - f1v
    scale = np.max(np.abs(f1v)) + 1.0
    assert np.max(np.abs(res)) <= 1e-6 * scale


def solve_moving(case: MovingCase, level: int, method="direct") -> dict:
    """Galerkin FOSLS solve on the ``level``-times refined moving mesh with
    the error report of the moving-domain figures."""
    mesh = case.mesh
    for _ in range(level):
        mesh = mesh.refine_uniform()
    space = FESpace(mesh, case.d + 1, 1, constrain_first_on_lateral=True)
    coefs = solve_fosls(case.problem, space, method=method)
    est = residual_estimator(case.problem, space, coefs)

    d = case.d
    deg = ERROR_DEGREE
    _, pts, w = space.cell_quadrature(deg)
    flat = pts.reshape(-1, d + 1)
    u1v = space.values_at_cells(coefs, 0, deg)
    du1v = space.gradients_at_cells(coefs, 0, deg)[:, :, 1:]
    uex = case.u(flat).reshape(w.shape)
    gex = case.u.gradient(flat)[:, 1:].reshape(w.shape + (d,))
    err_l2 = np.sqrt(np.sum(w * (uex - u1v) ** 2))
    err_Y = np.sqrt(np.sum(w[:, :, None] * (gex - du1v) ** 2))

    def face_err(tag):
        _, _, fp, fw = space.facet_quadrature(tag, deg)
        trv = space.trace_at_facets(coefs, 0, tag, deg)
        exv = case.u(fp.reshape(-1, d + 1)).reshape(fw.shape)
        return float(np.sqrt(np.sum(fw * (exv - trv) ** 2)))

    return {"ndof": int(space.free.size), "est": float(est),
            "err_Y": float(err_Y), "err_0": face_err(INITIAL),
            "err_T": face_err(FINAL), "err_l2": float(err_l2),
            "coefs": coefs, "space": space}


# ---------------------------------------------------------------------------
# Piola-transform identities
# ---------------------------------------------------------------------------

def _fd_div_hat(uhat, pts_hat, step):
    """Finite-difference space-time divergence of a hat-domain vector field."""
    div = np.zeros(pts_hat.shape[0])
    for j in range(pts_hat.shape[1]):
        hi = pts_hat.copy()
        lo = pts_hat.copy()
        hi[:, j] += step
        lo[:, j] -= step
        div += (uhat(hi)[:, j] - uhat(lo)[:, j]) / (2 * step)
    return div


def verify_piola_identities(kmap: DeformationMap, test_fields, n=100,
                            seed=23, step=1e-5, rtol=1e-6) -> dict:
    """Pointwise checks of the three transformation identities used in the
    moving-domain isomorphism proof:

      (i)   div uhat = det Dkappa (div u) o kappa
      (ii)  the componentwise Piola relations recovering u1, u2 from uhat
      (iii) the chain rule for grad_x u1 in terms of grad_xhat uhat_1.

    ``test_fields``: list of (u, div_u) with u mapping (n, d+1) space-time
    points to (n, d+1) vectors and div_u its space-time divergence.
    """
    d = kmap.d
    rng = np.random.default_rng(seed)
    pts_hat = rng.random((n, d + 1)) * 0.8 + 0.1
    pts_hat = pts_hat[np.abs(pts_hat[:, 0] - 0.5) > 2 * step]
    x = kmap.map_x(pts_hat)
    phys = np.column_stack([pts_hat[:, 0], x])
    det = kmap.det(pts_hat)
    Dx = kmap.Dx_kp(pts_hat)
    dt = kmap.dt_kp(pts_hat)

    report = {"div": 0.0, "components": 0.0, "gradient": 0.0}
    for u, div_u in test_fields:
        uhat = kmap.piola(u)
        uh = uhat(pts_hat)
        uv = np.atleast_2d(u(phys))
        scale = np.max(np.abs(uv)) + np.max(np.abs(uh)) + 1.0

        lhs = _fd_div_hat(uhat, pts_hat, step)
        rhs = det * div_u(phys)
        report["div"] = max(report["div"],
                            np.max(np.abs(lhs - rhs)) / (np.max(np.abs(rhs)) + scale))

        # componentwise recovery of u o kappa from uhat
        u1_rec = uh[:, 0] / det
        u2_rec = (np.einsum("nij,nj->ni", Dx, uh[:, 1:])
                  + uh[:, :1] * dt) / det[:, None]
        dev = max(np.max(np.abs(u1_rec - uv[:, 0])),
                  np.max(np.abs(u2_rec - uv[:, 1:])))
        report["components"] = max(report["components"], dev / scale)

        # gradient identity for the first component
        def u1hat(ph):
            return uhat(ph)[:, 0]

        grad_hat = np.column_stack([
            (u1hat(_shift(pts_hat, j, step)) -
             u1hat(_shift(pts_hat, j, -step))) / (2 * step)
            for j in range(1, d + 1)])
        grad_det = np.column_stack([
            (kmap.det(_shift(pts_hat, j, step)) -
             kmap.det(_shift(pts_hat, j, -step))) / (2 * step)
            for j in range(1, d + 1)])
        bracket = grad_hat - (uh[:, 0] / det)[:, None] * grad_det
        DxinvT = np.linalg.inv(np.transpose(Dx, (0, 2, 1)))
        rhs_g = np.einsum("nij,nj->ni", DxinvT, bracket) / det[:, None]
        lhs_g = np.column_stack([
            (np.atleast_2d(u(_shift(phys, j, step)))[:, 0] -
             np.atleast_2d(u(_shift(phys, j, -step)))[:, 0]) / (2 * step)
            for j in range(1, d + 1)])
        gscale = np.max(np.abs(lhs_g)) + 1.0
        report["gradient"] = max(report["gradient"],
                                 np.max(np.abs(lhs_g - rhs_g)) / gscale)
    report["passed"] = all(report[k] <= rtol
                           for k in ("div", "components", "gradient"))
    report["rtol"] = rtol
    return report


def _shift(pts, j, step):
    out = pts.copy()
    out[:, j] += step
    return out


def polynomial_test_fields(d: int):
    """Three smooth space-time vector fields with analytic divergence."""
    if d == 1:
        return [
            (lambda p: np.column_stack([np.ones(len(p)), np.zeros(len(p))]),
             lambda p: np.zeros(len(p))),
            (lambda p: np.column_stack([p[:, 0], p[:, 1]]),
             lambda p: 2.0 * np.ones(len(p))),
            (lambda p: np.column_stack([p[:, 0] * p[:, 1],
                                        p[:, 1] ** 2 - p[:, 0] ** 2]),
             lambda p: p[:, 1] + 2 * p[:, 1]),
        ]
    return [
        (lambda p: np.column_stack([np.ones(len(p)), np.zeros(len(p)),
                                    np.zeros(len(p))]),
         lambda p: np.zeros(len(p))),
        (lambda p: np.column_stack([p[:, 0], p[:, 1], p[:, 2]]),
         lambda p: 3.0 * np.ones(len(p))),
        (lambda p: np.column_stack([p[:, 0] * p[:, 1],
                                    p[:, 1] * p[:, 2],
                                    p[:, 2] ** 2 + p[:, 0]]),
         lambda p: p[:, 1] + p[:, 2] + 2 * p[:, 2]),
    ]
