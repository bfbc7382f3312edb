"""Batch drivers for the five benchmark experiments, producing the CSV rows
consumed by the figure scripts."""

import time

import numpy as np

from .fem import FESpace
from .mesh import build_unit_cylinder_mesh
from .optimal_control import (ControlSpace, build_manufactured_case,
                              control_error_report, solve_control)
from .moving_domain import build_moving_case, solve_moving
from .reduced_basis import (benchmark_problem, benchmark_truth_space,
                            best_truth_error, expand_forms, greedy_offline,
                            training_grid)

CONTROL_COLUMNS = ("ndof", "err_U", "err_Y", "err_0", "err_T", "err_l2",
                   "err_z1", "err_J", "err_p")
MOVING_COLUMNS = ("ndof", "est", "err_Y", "err_0", "err_T", "err_l2")


def run_control_experiment(d, levels, rho=0.01, method="direct",
                           progress=None):
    """Rows of the control-problem convergence table, refinement levels
    0 .. levels-1."""
    case = build_manufactured_case(d, rho)
    cp = case.control_problem()
    mesh = build_unit_cylinder_mesh(d)
    rows = []
    for lvl in range(levels):
        t0 = time.time()
        space = FESpace(mesh, d + 1, 1, constrain_first_on_lateral=True)
        zspace = ControlSpace(mesh, cp.control_slots)
        sol = solve_control(cp, space, zspace, method=method)
        rep = control_error_report(case, sol, space, zspace)
        rep["wall_s"] = time.time() - t0
        rows.append(rep)
        if progress:
            progress(lvl, rep)
        if lvl + 1 < levels:
            mesh = mesh.refine_uniform()
    return rows


def run_moving_experiment(d, levels, method="direct", progress=None):
    case = build_moving_case(d)
    rows = []
    for lvl in range(levels):
        t0 = time.time()
        r = solve_moving(case, lvl, method=method)
        rep = {k: r[k] for k in MOVING_COLUMNS}
        rep["wall_s"] = time.time() - t0
        rows.append(rep)
        if progress:
            progress(lvl, rep)
    return rows


def run_rb_offline(truth_n=64, train_n=17, eps_tol=1e-3, n_max=50,
                   end_time=0.3, verbose=False):
    """Greedy training; returns (model, rows) with one row per iteration."""
    problem = benchmark_problem(end_time)
    space = benchmark_truth_space(truth_n, end_time)
    train = training_grid(problem.domain, train_n)
    model = greedy_offline(problem, space, train, eps_tol, n_max,
                           verbose=verbose)
    rows = [{"N": n, "maxtrain": est}
            for n, (_, est) in enumerate(model.history)]
    return model, rows


def run_rb_online(model, problem=None, space=None, n_points=11):
    """The two online test sweeps; returns rows with estimator and best error."""
    problem = problem or benchmark_problem()
    if space is None:
        space = model.space
    forms = model.forms or expand_forms(problem, space)
    mu1s = np.linspace(0.5, 1.5, n_points)
    mu2s = np.linspace(0.0, 1.0, n_points)
    rows = []
    for m1, m2 in zip(mu1s, mu2s):
        mu_a = (float(m1), 0.0, 0.0)
        mu_b = (0.5, float(m2), 0.75)
        _, eta_a, _ = model.online_solve(mu_a)
        _, eta_b, _ = model.online_solve(mu_b)
        rows.append({
            "mu1": float(m1),
            "est_mu1": eta_a,
            "err_mu1": best_truth_error(problem, space, mu_a, forms),
            "mu2": float(m2),
            "est_mu2": eta_b,
            "err_mu2": best_truth_error(problem, space, mu_b, forms),
        })
    return rows


def fit_slope(rows, key, window=None):
    """Least-squares slope of log(err) vs log(ndof) over the given rows."""
    sel = rows if window is None else [rows[i] for i in window]
    x = np.log([r["ndof"] for r in sel])
    y = np.log([max(r[key], 1e-300) for r in sel])
    return float(np.polyfit(x, y, 1)[0])
