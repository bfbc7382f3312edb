"""Closed-form scalar/vector fields on space-time points.

Points are arrays of shape (n, d+1) with columns (t, x_1, ..., x_d).
Fields wrap vectorized callables; analytic gradients, when declared, can be
validated against central finite differences.
"""

import numpy as np


class ScalarField:
    """Scalar field with optional analytic space-time gradient.

    ``smooth_mask``, when given, marks the points where the field is smooth
    (e.g. excluding a kink plane t = 1/2); derivative checks are restricted
    to that region.
    """

    def __init__(self, value, grad=None, name="", smooth_mask=None):
        self._value = value
        self._grad = grad
        self.name = name
        self.smooth_mask = smooth_mask

    def __call__(self, pts):
        return np.asarray(self._value(np.asarray(pts, dtype=float)))

    @property
    def has_gradient(self):
        return self._grad is not None

    def gradient(self, pts):
        if self._grad is None:
            raise ValueError(f"field {self.name!r} declares no gradient")
        return np.asarray(self._grad(np.asarray(pts, dtype=float)))

    def smooth_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.smooth_mask is None:
            return pts
        return pts[self.smooth_mask(pts)]


class VectorField:
    """d-vector field, optionally with an analytic spatial divergence."""

    def __init__(self, value, div_x=None, name=""):
        self._value = value
        self._div_x = div_x
        self.name = name

    def __call__(self, pts):
        return np.asarray(self._value(np.asarray(pts, dtype=float)))

    def divergence_x(self, pts):
        if self._div_x is None:
            raise ValueError(f"field {self.name!r} declares no divergence")
        return np.asarray(self._div_x(np.asarray(pts, dtype=float)))


def constant_scalar(c):
    c = float(c)
    return ScalarField(lambda p: np.full(p.shape[0], c),
                       lambda p: np.zeros_like(p), name=f"const({c})")


def zero_vector(d):
    return VectorField(lambda p: np.zeros((p.shape[0], d)),
                       lambda p: np.zeros(p.shape[0]), name="0")


def fd_gradient(value, pts, step=1e-6):
    """Central finite-difference space-time gradient of a scalar callable."""
    pts = np.asarray(pts, dtype=float)
    out = np.empty_like(pts)
    for j in range(pts.shape[1]):
        hi = pts.copy()
        lo = pts.copy()
        hi[:, j] += step
        lo[:, j] -= step
        out[:, j] = (np.asarray(value(hi)) - np.asarray(value(lo))) / (2 * step)
    return out


def check_gradient(field: ScalarField, pts, step=1e-6, rtol=1e-5):
    """Raise if the declared gradient disagrees with central differences
    (sampled inside the field's declared smoothness region)."""
    pts = field.smooth_points(pts)
    ana = field.gradient(pts)
    num = fd_gradient(field, pts, step=step)
    scale = np.max(np.abs(ana)) + np.max(np.abs(num)) + 1.0
    err = np.max(np.abs(ana - num)) / scale
    if err > rtol:
        raise AssertionError(
            f"gradient check failed for {field.name!r}: rel err {err:.3e}")
    return err
