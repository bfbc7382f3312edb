import numpy as np
import pytest

from stfosls.fields import ScalarField
from stfosls.mesh import unit_tensor_grid
from stfosls.reduced_basis import (Monomial, TruthSolver, benchmark_problem,
                                   benchmark_truth_space, best_truth_error,
                                   expand_forms, greedy_offline, load_model,
                                   one, training_grid)
from stfosls.tensor import TensorProductSpace


@pytest.fixture(scope="module")
def problem():
    return benchmark_problem()


@pytest.fixture(scope="module")
def space(problem):
    return benchmark_truth_space(16)


@pytest.fixture(scope="module")
def forms(problem, space):
    return expand_forms(problem, space)


@pytest.fixture(scope="module")
def smoke_model(problem, space):
    train = training_grid(problem.domain, 5)
    return greedy_offline(problem, space, train, 1e-2)


class TestExpandForms:
    def test_bilinear_terms(self, forms):
        assert forms.n_b == 8
        exps = {t.exponents for t, _ in forms.bilinear}
        assert exps == {(0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 1, 0), (0, 0, 1),
                        (0, 2, 0), (0, 1, 1), (0, 0, 2)}

    def test_linear_terms(self, forms):
        assert forms.n_l == 3
        exps = {t.exponents for t, _ in forms.linear}
        assert exps == {(0, 0, 0), (0, 1, 0), (0, 0, 1)}

    def test_scalar_terms(self, forms, problem, space):
        assert forms.n_s == 1
        f1 = problem.f1_terms[0][1]
        u0 = problem.u0_terms[0][1]
        ref = (np.sum(space.quad_weights * f1(space.quad_points) ** 2)
               + np.sum(space.quad_weights_initial * u0(np.column_stack(
                   [np.zeros_like(space.quad_points_initial),
                    space.quad_points_initial])) ** 2))
        assert float(forms.scalar[0][1]) == pytest.approx(ref, rel=1e-12)

    def test_parameter_independent_problem(self):
        from stfosls.reduced_basis import SeparableParabolicProblem
        f = ScalarField(lambda p: np.sin(np.pi * p[:, 1]))
        prob = SeparableParabolicProblem(
            n_params=1, domain=[(0.0, 1.0)],
            A_terms=[(one(1), 1.0)], b_terms=[], c_terms=[],
            f1_terms=[(one(1), f)], u0_terms=[(one(1), f)], end_time=1.0)
        sp = TensorProductSpace(unit_tensor_grid(4), 2, True)
        fm = expand_forms(prob, sp)
        assert fm.n_b == 1 and fm.n_l == 1 and fm.n_s == 1

    def test_separability_identity(self, problem, space, forms):
        # sum_q theta_q b_q(u, v) reproduces <G[mu] u, G[mu] v>_L
        solver = TruthSolver(problem, space, forms)
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(20):
            mu = (0.5 + rng.random(), rng.random(), rng.random())
            u = rng.standard_normal(space.ndof)
            v = rng.standard_normal(space.ndof)
            lhs = 0.0
            for theta, pairs in forms.bilinear:
                bq = 0.0
                for s, a, b in pairs:
                    slot = forms.slots[s]
                    bq += np.sum(slot["weights"] * (slot["terms"][a][1] @ u)
                                 * (slot["terms"][b][1] @ v))
                lhs += theta(mu) * bq
            rhs = 0.0
            scale = 0.0
            for s in range(3):
                E = solver.operator(s, mu)
                w = forms.slots[s]["weights"]
                gu, gv = E @ u, E @ v
                rhs += np.sum(w * gu * gv)
                scale += np.sum(w * np.abs(gu) * np.abs(gv))
            worst = max(worst, abs(lhs - rhs) / scale)
        assert worst <= 1e-11


class TestGreedy:
    def test_single_parameter_training(self, problem, space, forms):
        mu = (1.0, 0.5, 0.5)
        model = greedy_offline(problem, space, [mu], 1e-9, n_max=5)
        assert model.N == 1
        _, eta, _ = model.online_solve(mu)
        solver = TruthSolver(problem, space, forms)
        truth = solver.residual_norm(mu, solver.solve(mu))
        assert eta == pytest.approx(truth, rel=1e-6, abs=1e-12)

    def test_infinite_tolerance_gives_empty_model(self, problem, space):
        model = greedy_offline(problem, space, training_grid(problem.domain, 2),
                               float("inf"))
        assert model.N == 0
        mu = (0.7, 0.3, 0.9)
        _, eta, _ = model.online_solve(mu)
        assert eta ** 2 == pytest.approx(float(model.s_q[0]), rel=1e-14)

    def test_duplicate_parameters_are_excluded(self, problem, space):
        mu = (1.0, 0.5, 0.5)
        model = greedy_offline(problem, space, [mu, mu], 1e-300, n_max=10)
        assert model.N == 1   # second copy rejected, then excluded

    def test_monotone_training_maximum(self, smoke_model):
        maxima = [est for _, est in smoke_model.history]
        for a, b in zip(maxima, maxima[1:]):
            assert b <= a + 1e-12

    def test_basis_orthonormal_in_graph_norm(self, smoke_model):
        B = smoke_model.basis
        G = smoke_model.gram
        gram = B.T @ (G @ B)
        assert np.max(np.abs(gram - np.eye(B.shape[1]))) < 1e-10

    def test_reduced_matrices_are_projected_truth_matrices(self, problem,
                                                           space, forms,
                                                           smoke_model):
        # sum_q theta_q B_q must equal basis^T A(mu) basis, with A(mu)
        # assembled through the independent sparse-operator path
        solver = TruthSolver(problem, space, forms)
        rng = np.random.default_rng(13)
        mu = (0.5 + rng.random(), rng.random(), rng.random())
        A = None
        import scipy.sparse as sp
        for s in range(3):
            E = solver.operator(s, mu)
            W = sp.diags(forms.slots[s]["weights"])
            contrib = (E.T @ W @ E).tocsr()
            A = contrib if A is None else A + contrib
        basis = smoke_model.basis
        direct = basis.T @ (A @ basis)
        reduced = np.zeros_like(direct)
        for theta, Bq in zip(smoke_model.theta_b, smoke_model.B_q):
            reduced += float(theta(mu)) * np.asarray(Bq, dtype=float)
        scale = np.max(np.abs(direct))
        assert np.max(np.abs(direct - reduced)) <= 1e-12 * scale


class TestOnline:
    def test_estimator_identity_brute_force(self, problem, space, forms,
                                            smoke_model):
        solver = TruthSolver(problem, space, forms)
        rng = np.random.default_rng(9)
        for _ in range(5):
            mu = (0.5 + rng.random(), rng.random(), rng.random())
            c, eta, _ = smoke_model.online_solve(mu)
            resid = solver.residual_norm(mu, smoke_model.reconstruct(c))
            assert abs(eta ** 2 - resid ** 2) <= 1e-6 * resid ** 2

    def test_estimator_dominates_best_truth_error(self, problem, space, forms,
                                                  smoke_model):
        rng = np.random.default_rng(10)
        for _ in range(3):
            mu = (0.5 + rng.random(), rng.random(), rng.random())
            _, eta, _ = smoke_model.online_solve(mu)
            best = best_truth_error(problem, space, mu, forms)
            assert eta >= best - 1e-12

    def test_qoi_consistency(self, problem, space):
        # with F(u) = integral of u1 the online value matches quadrature of
        # the reconstructed first component
        import dataclasses
        prob = dataclasses.replace(problem, qoi="integral_u1")
        model = greedy_offline(prob, space, training_grid(prob.domain, 2),
                               1e-2, n_max=6)
        mu = (1.2, 0.4, 0.1)
        c, _, qoi = model.online_solve(mu)
        coefs = model.reconstruct(c)
        direct = np.sum(space.quad_weights * (space.op("val", 0) @ coefs))
        assert qoi == pytest.approx(direct, abs=1e-10)

    def test_reconstruction_matches_closed_form(self, smoke_model, space):
        mu = (1.0, 0.5, 0.5)
        c, eta, _ = smoke_model.online_solve(mu)
        coefs = smoke_model.reconstruct(c)
        pi = np.pi
        exact = np.sin(2 * pi * space.quad_points[:, 1]) \
            * np.cos(4 * pi * space.quad_points[:, 0])
        vals = space.op("val", 0) @ coefs
        err = np.sqrt(np.sum(space.quad_weights * (vals - exact) ** 2))
        assert err <= 2e-2   # smoke tolerance; the full model reaches 2e-3


class TestPersistence:
    def test_round_trip(self, smoke_model, problem, space, forms, tmp_path):
        smoke_model.save(tmp_path / "model")
        back = load_model(tmp_path / "model", problem, space, forms)
        assert back.N == smoke_model.N
        rng = np.random.default_rng(11)
        for _ in range(5):
            mu = (0.5 + rng.random(), rng.random(), rng.random())
            c0, eta0, q0 = smoke_model.online_solve(mu)
            c1, eta1, q1 = back.online_solve(mu)
            assert np.max(np.abs(c0 - c1)) <= 1e-12 * max(1, np.max(np.abs(c0)))
            assert abs(eta0 - eta1) <= 1e-12 * max(eta0, 1e-30)
            assert abs(q0 - q1) <= 1e-12 * max(abs(q0), 1e-30)


class TestMonomial:
    def test_product_and_eval(self):
        m1 = Monomial((1, 0, 2))
        m2 = Monomial((0, 1, 1))
        assert (m1 * m2).exponents == (1, 1, 3)
        assert m1((2.0, 3.0, 4.0)) == pytest.approx(32.0)
