"""Quadrature rules on reference simplices and tensor cells.

Simplex rules are conical (collapsed) Gauss-Jacobi products, so all weights
are strictly positive at every order.  The reference n-simplex is
``{y in R^n : y_i >= 0, sum y_i <= 1}`` with volume 1/n!.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Points (in reference coordinates) and positive weights.

    ``weights`` sum to the reference-element volume; ``exactness_degree`` is
    the total polynomial degree integrated exactly.
    """

    points: np.ndarray          # (nq, n)
    weights: np.ndarray         # (nq,)
    exactness_degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def npoints(self) -> int:
        return self.points.shape[0]

    def barycentric(self) -> np.ndarray:
        """Barycentric coordinates (nq, n+1); first entry is 1 - sum(y)."""
        lam0 = 1.0 - self.points.sum(axis=1)
        return np.column_stack([lam0, self.points])


def _jacobi_01(n: int, alpha: int):
    """Gauss-Jacobi nodes/weights on [0,1] for weight (1-x)^alpha."""
    if alpha == 0:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    """Positive-weight rule on the reference ``dim``-simplex, exact to ``degree``.

    Built as a conical product: map ``[0,1]^dim`` onto the simplex by
    ``y_k = xi_k * prod_{j<k}(1 - xi_j)``; the Jacobian factors
    ``(1-xi_j)^(dim-j)`` are absorbed into Gauss-Jacobi weights.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    npts = max(1, (degree + 2) // 2)
    axes = [_jacobi_01(npts, dim - 1 - j) for j in range(dim)]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    xi = np.column_stack([g.ravel() for g in grids])
    w = np.ones(xi.shape[0])
    for wg in wgrids:
        w *= wg.ravel()
    pts = np.empty_like(xi)
    rest = np.ones(xi.shape[0])
    for k in range(dim):
        pts[:, k] = xi[:, k] * rest
        rest = rest * (1.0 - xi[:, k])
    return QuadratureRule(pts, w, 2 * npts - 1)


@lru_cache(maxsize=None)
def gauss_rule_01(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [0,1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(
        (0.5 * (x + 1.0)).reshape(-1, 1), 0.5 * w, 2 * n - 1
    )


def simplex_monomial_integral(exponents) -> float:
    """Exact ``int_{T_n} prod y_i^{a_i} dy`` = prod(a_i!) / (n + sum a_i)!."""
    from math import factorial

    a = list(exponents)
    n = len(a)
    num = 1
    for ai in a:
        num *= factorial(ai)
    return num / factorial(n + sum(a))
