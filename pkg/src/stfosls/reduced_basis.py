"""Certified reduced-basis method for parameter-separable parabolic FOSLS.

The coefficient/data expansions carry monomial parameter factors; products
of factors collect into the separable expansion of the least-squares
bilinear form, load, and squared data norm.  Online solves and the exact
residual estimator

    eta(mu)^2 = sum_q theta_q^s(mu) - sum_q theta_q^l(mu) (l_q . c^N[mu])

run on N x N quantities only.  Reduced quantities are accumulated in
extended precision: the estimator formula cancels ~|f|^2 down to eta^2, so
float64 accumulation would poison the small values the greedy tolerance
targets.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import ScalarField
from .linalg import solve_dense_pp
from .tensor import TensorProductSpace

LD = np.longdouble


@dataclass(frozen=True)
class Monomial:
    """Parameter factor mu_1^e1 * ... * mu_p^ep."""

    exponents: tuple

    def __call__(self, mu):
        out = 1.0
        for m, e in zip(mu, self.exponents):
            if e:
                out *= m ** e
        return out

    def __mul__(self, other):
        return Monomial(tuple(a + b for a, b in
                              zip(self.exponents, other.exponents)))

    def eval_many(self, mus):
        mus = np.asarray(mus, dtype=LD)
        out = np.ones(mus.shape[0], dtype=LD)
        for j, e in enumerate(self.exponents):
            if e:
                out *= mus[:, j] ** e
        return out


def one(p):
    return Monomial((0,) * p)


def coordinate(p, j):
    e = [0] * p
    e[j] = 1
    return Monomial(tuple(e))


@dataclass
class SeparableParabolicProblem:
    """Parameter-separable coefficients, data, and quantity of interest."""

    n_params: int
    domain: list                     # [(lo, hi)] per parameter
    A_terms: list                    # [(Monomial, const or callable)]
    b_terms: list
    c_terms: list
    f1_terms: list                   # [(Monomial, ScalarField)]
    u0_terms: list
    f2_terms: list = field(default_factory=list)
    qoi: str = "mean_u1"
    end_time: float = 1.0
    d: int = 1


@dataclass
class SeparableForms:
    """Separable expansion of the bilinear form, load, and squared norm.

    slots: per L-component slot a dict with the quadrature weights, the
    operator terms [(Monomial, sparse E)], and data terms [(Monomial, values)].
    """

    slots: list
    bilinear: list                   # [(Monomial, [(slot, a_idx, b_idx)])]
    linear: list                     # [(Monomial, [(slot, p_idx, b_idx)])]
    scalar: list                     # [(Monomial, longdouble)]

    @property
    def n_b(self):
        return len(self.bilinear)

    @property
    def n_l(self):
        return len(self.linear)

    @property
    def n_s(self):
        return len(self.scalar)


def _dot_ld(a, b, w=None):
    a = np.asarray(a, dtype=LD)
    b = np.asarray(b, dtype=LD)
    if w is not None:
        a = a * np.asarray(w, dtype=LD)
    return np.sum(a * b, dtype=LD)


def _coeff_values(term, pts):
    if callable(term):
        return np.asarray(term(pts))
    return np.full(pts.shape[0], float(term))


def expand_forms(problem: SeparableParabolicProblem,
                 space: TensorProductSpace) -> SeparableForms:
    """Collect the products of coefficient factors into merged term lists."""
    if not isinstance(space, TensorProductSpace):
        raise TypeError("reduced-basis truth spaces are tensor-product spaces")
    if problem.d != 1:
        raise ValueError("the tensor truth backend is 1+1D")
    pts = space.quad_points
    W = space.quad_weights
    W0 = space.quad_weights_initial
    pts0 = np.column_stack([np.zeros_like(space.quad_points_initial),
                            space.quad_points_initial])

    E_div = space.div_op()
    E_dx = space.op("dx", 0)
    E_val = space.op("val", 0)
    E_u2 = space.op("val", 1)
    E_tr = space.op("tr0", 0)

    def scaled(Efull, term):
        if callable(term):
            return sp.diags(_coeff_values(term, pts)) @ Efull
        v = float(term)
        return Efull if v == 1.0 else v * Efull

    # slot 0: first L-component over Q (the G1 stream)
    g1_terms = [(one(problem.n_params), E_div)]
    for theta, bq in problem.b_terms:
        g1_terms.append((theta, scaled(E_dx, bq)))
    for theta, cq in problem.c_terms:
        g1_terms.append((theta, scaled(E_val, cq)))
    g1_data = [(theta, f(pts)) for theta, f in problem.f1_terms]

    # slot 1: flux component over Q (the G2 stream), d = 1
    g2_terms = [(one(problem.n_params), -E_u2)]
    for theta, Aq in problem.A_terms:
        g2_terms.append((theta, -scaled(E_dx, Aq)))
    g2_data = [(theta, f(pts)) for theta, f in problem.f2_terms]

    # slot 2: initial trace over Omega
    tr_terms = [(one(problem.n_params), E_tr)]
    tr_data = [(theta, f(pts0)) for theta, f in problem.u0_terms]

    slots = [
        {"weights": W, "terms": g1_terms, "data": g1_data},
        {"weights": W, "terms": g2_terms, "data": g2_data},
        {"weights": W0, "terms": tr_terms, "data": tr_data},
    ]

    bilinear, linear, scalar = {}, {}, {}
    for s, slot in enumerate(slots):
        terms, data, w = slot["terms"], slot["data"], slot["weights"]
        for a, (ta, _) in enumerate(terms):
            for b, (tb, _) in enumerate(terms):
                bilinear.setdefault(ta * tb, []).append((s, a, b))
        for p, (tp, dv) in enumerate(data):
            for b, (tb, _) in enumerate(terms):
                linear.setdefault(tp * tb, []).append((s, p, b))
            for p2, (tp2, dv2) in enumerate(data):
                key = tp * tp2
                scalar[key] = scalar.get(key, LD(0.0)) + _dot_ld(dv, dv2, w)

    order = lambda items: sorted(items, key=lambda kv: kv[0].exponents)
    return SeparableForms(
        slots=slots,
        bilinear=[(k, v) for k, v in order(bilinear.items())],
        linear=[(k, v) for k, v in order(linear.items())],
        scalar=[(k, v) for k, v in order(scalar.items())],
    )


# ---------------------------------------------------------------------------
# truth solves
# ---------------------------------------------------------------------------

class TruthSolver:
    """Assembles and factorizes the truth FOSLS system per parameter."""

    def __init__(self, problem, space, forms):
        self.problem = problem
        self.space = space
        self.forms = forms

    def operator(self, slot, mu):
        terms = self.forms.slots[slot]["terms"]
        E = None
        for theta, mat in terms:
            contrib = float(theta(mu)) * mat
            E = contrib if E is None else E + contrib
        return E.tocsr()

    def data_values(self, slot, mu):
        data = self.forms.slots[slot]["data"]
        if not data:
            return None
        out = None
        for theta, vals in data:
            contrib = float(theta(mu)) * vals
            out = contrib if out is None else out + contrib
        return out

    def solve(self, mu):
        space = self.space
        ops = [self.operator(s, mu) for s in range(3)]
        weights = [self.forms.slots[s]["weights"] for s in range(3)]
        A = None
        rhs = np.zeros(space.ndof)
        for E, w, s in zip(ops, weights, range(3)):
            WE = sp.diags(w) @ E
            contrib = (E.T @ WE).tocsr()
            A = contrib if A is None else A + contrib
            dv = self.data_values(s, mu)
            if dv is not None:
                rhs += E.T @ (w * dv)
        free = space.free
        lu = spla.splu(A[free][:, free].tocsc())
        x = lu.solve(rhs[free])
        full = np.zeros(space.ndof)
        full[free] = x
        return full

    def residual_norm(self, mu, coefs):
        """|| f[mu] - G[mu] u ||_L at truth quadrature accuracy."""
        total = LD(0.0)
        for s in range(3):
            E = self.operator(s, mu)
            w = self.forms.slots[s]["weights"]
            gv = E @ coefs
            dv = self.data_values(s, mu)
            res = -gv if dv is None else dv - gv
            total += _dot_ld(res, res, w)
        return float(np.sqrt(max(total, LD(0.0))))


# ---------------------------------------------------------------------------
# reduced model
# ---------------------------------------------------------------------------

@dataclass
class ReducedModel:
    problem: SeparableParabolicProblem
    space: object
    forms: SeparableForms
    gram: object                      # truth graph-norm Gram (sparse)
    basis: np.ndarray                 # (ndof, N)
    B_q: np.ndarray                   # (n_b, N, N) longdouble
    l_q: np.ndarray                   # (n_l, N) longdouble
    s_q: np.ndarray                   # (n_s,) longdouble
    F_q: np.ndarray                   # (n_F, N)
    theta_b: list
    theta_l: list
    theta_s: list
    theta_F: list
    history: list = field(default_factory=list)
    _stream_cache: list = field(default_factory=list)

    @property
    def N(self):
        return self.basis.shape[1]

    # -- offline updates ---------------------------------------------------

    def append_snapshot(self, psi):
        """Extend all reduced quantities by one orthonormal basis vector."""
        streams = self._stream_values(psi)
        self._stream_cache.append(streams)
        N = self.N
        newB = np.zeros((len(self.theta_b), N + 1, N + 1), dtype=LD)
        newB[:, :N, :N] = self.B_q
        for q, (_, pairs) in enumerate(self.forms.bilinear):
            for s, a, b in pairs:
                w = self.forms.slots[s]["weights"]
                va_new = streams[s][a]
                vb_new = streams[s][b]
                for i in range(N):
                    old = self._stream_cache[i]
                    # row i (test = old), col N (trial = new) and transpose
                    newB[q, i, N] += _dot_ld(va_new, old[s][b], w)
                    newB[q, N, i] += _dot_ld(old[s][a], vb_new, w)
                newB[q, N, N] += _dot_ld(va_new, vb_new, w)
        newl = np.zeros((len(self.theta_l), N + 1), dtype=LD)
        newl[:, :N] = self.l_q
        for q, (_, pairs) in enumerate(self.forms.linear):
            for s, p, b in pairs:
                w = self.forms.slots[s]["weights"]
                dv = self.forms.slots[s]["data"][p][1]
                newl[q, N] += _dot_ld(dv, streams[s][b], w)
        newF = np.zeros((self.F_q.shape[0], N + 1))
        newF[:, :N] = self.F_q
        for q in range(self.F_q.shape[0]):
            newF[q, N] = float(self._qoi_vector(q) @ psi)
        self.basis = np.column_stack([self.basis, psi])
        self.B_q, self.l_q, self.F_q = newB, newl, newF

    def _stream_values(self, psi):
        out = []
        for slot in self.forms.slots:
            out.append([mat @ psi for _, mat in slot["terms"]])
        return out

    def _qoi_vector(self, q):
        if self.problem.qoi == "mean_u1":
            space = self.space
            vol = float(np.sum(space.quad_weights))
            return (space.op("val", 0).T @ space.quad_weights) / vol
        if self.problem.qoi == "integral_u1":
            space = self.space
            return space.op("val", 0).T @ space.quad_weights
        raise ValueError(f"unknown quantity of interest {self.problem.qoi!r}")

    # -- online phase --------------------------------------------------------

    def reduced_system(self, mu):
        B = np.zeros((self.N, self.N), dtype=LD)
        for theta, Bq in zip(self.theta_b, self.B_q):
            B += LD(theta(mu)) * Bq
        l = np.zeros(self.N, dtype=LD)
        for theta, lq in zip(self.theta_l, self.l_q):
            l += LD(theta(mu)) * lq
        return B, l

    def online_solve(self, mu):
        """Reduced coefficients, exact residual estimator, and QoI value."""
        if self.N == 0:
            eta2 = self._scalar_part(mu)
            return (np.zeros(0), float(np.sqrt(max(eta2, LD(0.0)))), 0.0)
        B, l = self.reduced_system(mu)
        c = solve_dense_pp(B, l)
        eta2 = self._scalar_part(mu) - np.sum(l * c, dtype=LD)
        eta = float(np.sqrt(max(eta2, LD(0.0))))
        qoi = 0.0
        for theta, Fq in zip(self.theta_F, self.F_q):
            qoi += float(theta(mu)) * float(np.asarray(Fq, dtype=LD) @ c)
        return np.asarray(c, dtype=float), eta, qoi

    def _scalar_part(self, mu):
        out = LD(0.0)
        for theta, sq in zip(self.theta_s, self.s_q):
            out += LD(theta(mu)) * sq
        return out

    def estimate_many(self, mus):
        """Online estimator over a parameter batch (training sweeps)."""
        mus = np.asarray(mus, dtype=float)
        n = mus.shape[0]
        th_b = np.stack([th.eval_many(mus) for th in self.theta_b])
        th_l = np.stack([th.eval_many(mus) for th in self.theta_l])
        th_s = np.stack([th.eval_many(mus) for th in self.theta_s])
        svals = np.einsum("qn,q->n", th_s, self.s_q)
        if self.N == 0:
            return np.sqrt(np.maximum(svals, 0.0)).astype(float)
        out = np.empty(n)
        Bs = np.einsum("qn,qij->nij", th_b, self.B_q)
        ls = np.einsum("qn,qi->ni", th_l, self.l_q)
        for i in range(n):
            c = solve_dense_pp(Bs[i], ls[i])
            eta2 = svals[i] - np.sum(ls[i] * c, dtype=LD)
            out[i] = float(np.sqrt(max(eta2, LD(0.0))))
        return out

    def reconstruct(self, c):
        """Truth coefficients of the reduced solution."""
        return self.basis @ np.asarray(c, dtype=float)

    # -- persistence ---------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "n_params": self.problem.n_params,
            "domain": [list(map(float, ab)) for ab in self.problem.domain],
            "N": int(self.N),
            "qoi": self.problem.qoi,
            "end_time": self.problem.end_time,
            "theta_b": [list(t.exponents) for t in self.theta_b],
            "theta_l": [list(t.exponents) for t in self.theta_l],
            "theta_s": [list(t.exponents) for t in self.theta_s],
            "theta_F": [list(t.exponents) for t in self.theta_F],
            "history": [[list(map(float, mu)), float(est)]
                        for mu, est in self.history],
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=1))
        np.save(directory / "basis.npy", self.basis)
        np.save(directory / "B_q.npy", self.B_q)
        np.save(directory / "l_q.npy", self.l_q)
        np.save(directory / "s_q.npy", self.s_q)
        np.save(directory / "F_q.npy", self.F_q)


def load_model(directory, problem=None, space=None, forms=None) -> ReducedModel:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    model = ReducedModel(
        problem=problem, space=space, forms=forms, gram=None,
        basis=np.load(directory / "basis.npy"),
        B_q=np.load(directory / "B_q.npy"),
        l_q=np.load(directory / "l_q.npy"),
        s_q=np.load(directory / "s_q.npy"),
        F_q=np.load(directory / "F_q.npy"),
        theta_b=[Monomial(tuple(e)) for e in meta["theta_b"]],
        theta_l=[Monomial(tuple(e)) for e in meta["theta_l"]],
        theta_s=[Monomial(tuple(e)) for e in meta["theta_s"]],
        theta_F=[Monomial(tuple(e)) for e in meta["theta_F"]],
        history=[(tuple(mu), est) for mu, est in meta["history"]],
    )
    return model


# ---------------------------------------------------------------------------
# greedy offline phase
# ---------------------------------------------------------------------------

def empty_model(problem, space, forms) -> ReducedModel:
    n_F = 1
    return ReducedModel(
        problem=problem, space=space, forms=forms, gram=space.gram_u(),
        basis=np.zeros((space.ndof, 0)),
        B_q=np.zeros((forms.n_b, 0, 0), dtype=LD),
        l_q=np.zeros((forms.n_l, 0), dtype=LD),
        s_q=np.array([sq for _, sq in forms.scalar], dtype=LD),
        F_q=np.zeros((n_F, 0)),
        theta_b=[t for t, _ in forms.bilinear],
        theta_l=[t for t, _ in forms.linear],
        theta_s=[t for t, _ in forms.scalar],
        theta_F=[one(problem.n_params)],
    )


def training_grid(domain, n_per_direction):
    axes = [np.linspace(lo, hi, n_per_direction) for lo, hi in domain]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def greedy_offline(problem, space, train_set, eps_tol, n_max=50,
                   verbose=False) -> ReducedModel:
    """Weak-greedy basis construction steered by the exact online estimator."""
    if eps_tol <= 0:
        raise ValueError("greedy tolerance must be positive")
    forms = expand_forms(problem, space)
    solver = TruthSolver(problem, space, forms)
    model = empty_model(problem, space, forms)
    train = np.asarray(train_set, dtype=float)
    excluded = np.zeros(train.shape[0], dtype=bool)
    maxima = []
    while True:
        etas = model.estimate_many(train)
        etas_adm = np.where(excluded, -np.inf, etas)
        k = int(np.argmax(etas_adm))
        if not np.isfinite(etas_adm[k]):
            break    # every training parameter was excluded
        max_eta = float(etas[k])
        model.history.append((tuple(train[k]), max_eta))
        maxima.append(max_eta)
        if verbose:
            print(f"greedy N={model.N:3d} max estimator {max_eta:.4e} "
                  f"at mu={tuple(np.round(train[k], 6))}")
        if max_eta <= eps_tol or model.N >= n_max:
            break
        if len(maxima) >= 4 and maxima[-1] > 0.999 * maxima[-4]:
            break    # stagnation at the truth-discretization floor
        snapshot = solver.solve(train[k])
        psi, scale = _orthonormalize(snapshot, model)
        if scale < 1e-8:
            excluded[k] = True
            continue
        model.append_snapshot(psi)
    return model


def _orthonormalize(v, model, passes=2):
    """Graph-norm Gram-Schmidt against the current basis, re-orthogonalized."""
    G = model.gram
    norm0 = np.sqrt(max(float(v @ (G @ v)), 0.0))
    w = v.copy()
    for _ in range(passes):
        if model.N:
            w = w - model.basis @ (model.basis.T @ (G @ w))
    norm = np.sqrt(max(float(w @ (G @ w)), 0.0))
    if norm0 == 0.0:
        return w, 0.0
    return (w / norm if norm > 0 else w), norm / norm0


def best_truth_error(problem, space, mu, forms=None) -> float:
    """Residual of the truth Galerkin solution at mu: the best error any
    reduced model built from this truth space can reach."""
    forms = forms or expand_forms(problem, space)
    solver = TruthSolver(problem, space, forms)
    coefs = solver.solve(mu)
    return solver.residual_norm(mu, coefs)


# ---------------------------------------------------------------------------
# the parameter-dependent benchmark problem
# ---------------------------------------------------------------------------

def benchmark_problem(end_time=0.3) -> SeparableParabolicProblem:
    """Diffusion/advection/reaction scales (mu1, mu2, mu3) on
    P = [0.5, 1.5] x [0, 1] x [0, 1] with parameter-independent data whose
    mu = (1, 0.5, 0.5) solution is sin(2 pi x) cos(4 pi t)."""
    pi = np.pi

    def f1(p):
        t, x = p[:, 0], p[:, 1]
        return (np.sin(2 * pi * x) * ((4 * pi ** 2 + 0.5) * np.cos(4 * pi * t)
                                      - 4 * pi * np.sin(4 * pi * t))
                + pi * np.cos(2 * pi * x) * np.cos(4 * pi * t))

    def u0(p):
        return np.sin(2 * pi * p[:, 1])

    return SeparableParabolicProblem(
        n_params=3,
        domain=[(0.5, 1.5), (0.0, 1.0), (0.0, 1.0)],
        A_terms=[(coordinate(3, 0), 1.0)],
        b_terms=[(coordinate(3, 1), 1.0)],
        c_terms=[(coordinate(3, 2), 1.0)],
        f1_terms=[(one(3), ScalarField(f1, name="benchmark-f1"))],
        u0_terms=[(one(3), ScalarField(u0, name="benchmark-u0"))],
        end_time=end_time,
    )


def benchmark_truth_space(n=64, end_time=0.3) -> TensorProductSpace:
    from .mesh import unit_tensor_grid

    return TensorProductSpace(unit_tensor_grid(n, end_time),
                              components=2, constrain_first_on_lateral=True)
