"""Degree-0/1 spline curves on SRV level.

Degree 0 (piecewise constant, right-continuous) models polygonal curves,
degree 1 (continuous piecewise linear) models smooth curves: the
back-transform of a continuous SRV curve is differentiable.  Fitting is a
weighted least-squares problem solved through the normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import RankDeficientError, ValidationError

# Gauss-Legendre rule per knot interval for degree-1 closedness integrals.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)

_EVAL_SLACK = 1e-12


@dataclass(frozen=True)
class SrvSpline:
    """Spline on SRV level: knot vector plus coefficient matrix.

    degree       : 0 or 1.
    knots        : (K+1,) strictly increasing, endpoints 0 and 1.
    coefficients : (B, d) with B = K for degree 0 and K+1 for degree 1.
    """

    degree: int
    knots: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        if self.degree not in (0, 1):
            raise ValidationError("spline degree must be 0 or 1")
        knots = np.asarray(self.knots, dtype=float)
        coefs = np.asarray(self.coefficients, dtype=float)
        if knots.ndim != 1 or knots.shape[0] < 2:
            raise ValidationError("need at least two knots")
        if knots[0] != 0.0 or knots[-1] != 1.0 or np.any(np.diff(knots) <= 0):
            raise ValidationError("knots must increase strictly from 0 to 1")
        expected = knots.shape[0] - 1 if self.degree == 0 else knots.shape[0]
        if coefs.ndim != 2 or coefs.shape[0] != expected:
            raise ValidationError(
                f"degree-{self.degree} spline on {knots.shape[0] - 1} intervals "
                f"needs {expected} coefficient rows, got {coefs.shape}")
        if not np.all(np.isfinite(coefs)):
            raise ValidationError("coefficients must be finite")
        knots.setflags(write=False)
        coefs.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coefficients", coefs)

    @property
    def dim(self) -> int:
        return self.coefficients.shape[1]

    @property
    def n_basis(self) -> int:
        return self.coefficients.shape[0]

    def evaluate(self, t) -> np.ndarray:
        """Value at parameter(s) t in [0, 1].

        Degree 0 is right-continuous with the value at 1 taken from the
        last interval; degree 1 interpolates the knot coefficients.
        """
        scalar = np.isscalar(t) or np.asarray(t).ndim == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < -_EVAL_SLACK) or np.any(t > 1.0 + _EVAL_SLACK):
            raise ValidationError("evaluation parameter outside [0, 1]")
        out = self._eval_fast(np.clip(t, 0.0, 1.0))
        return out[0] if scalar else out

    def _eval_fast(self, t: np.ndarray) -> np.ndarray:
        # hot path: t already a float array within [0, 1]
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1,
                      0, self.knots.shape[0] - 2)
        if self.degree == 0:
            return self.coefficients[idx]
        left = self.knots[idx]
        width = self.knots[idx + 1] - left
        u = ((t - left) / width)[:, None]
        return (1.0 - u) * self.coefficients[idx] + u * self.coefficients[idx + 1]

    def design_row_data(self, t):
        """Sparse design data: (index array, weight arrays) for basis rows."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1,
                      0, self.knots.shape[0] - 2)
        if self.degree == 0:
            return idx, np.ones_like(t)
        left = self.knots[idx]
        u = (t - left) / (self.knots[idx + 1] - left)
        return idx, u

    def l2_norm_sq(self) -> float:
        """Exact integral of ||p(t)||^2 over [0, 1]."""
        seg = np.diff(self.knots)
        c = self.coefficients
        if self.degree == 0:
            return float(np.sum(seg * np.sum(c**2, axis=1)))
        a, b = c[:-1], c[1:]
        per = (np.sum(a * a, axis=1) + np.sum(a * b, axis=1)
               + np.sum(b * b, axis=1)) / 3.0
        return float(np.sum(seg * per))

    def closedness_gap(self) -> np.ndarray:
        """Integral of p·||p||, i.e. the end-to-start gap of the back-transform."""
        return _gap_and_jacobian(self, need_jacobian=False)[0]

    def closedness_penalty(self) -> float:
        gap = self.closedness_gap()
        return float(np.dot(gap, gap))

    def scaled(self, factor: float) -> "SrvSpline":
        return SrvSpline(self.degree, self.knots, self.coefficients * factor)

    def to_json_dict(self) -> dict:
        return {
            "degree": int(self.degree),
            "knots": [float(v) for v in self.knots],
            "coefficients": [[float(v) for v in row] for row in self.coefficients],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "SrvSpline":
        return SrvSpline(int(data["degree"]), np.asarray(data["knots"], float),
                         np.asarray(data["coefficients"], float))


@dataclass(frozen=True)
class WeightedSrvSample:
    """Weighted SRV observations (t, value, weight) pooled from curves."""

    t: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if t.ndim != 1 or values.ndim != 2 or values.shape[0] != t.shape[0]:
            raise ValidationError("sample arrays must align: t (n,), values (n,d)")
        if weights.shape != t.shape:
            raise ValidationError("one weight per sample point required")
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise ValidationError("sample parameters must lie in [0, 1]")
        if np.any(weights <= 0.0):
            raise ValidationError("weights must be positive")
        for arr in (t, values, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @staticmethod
    def concatenate(samples: Sequence["WeightedSrvSample"]) -> "WeightedSrvSample":
        return WeightedSrvSample(
            np.concatenate([s.t for s in samples]),
            np.vstack([s.values for s in samples]),
            np.concatenate([s.weights for s in samples]))


def _design_matrix(degree: int, knots: np.ndarray, t: np.ndarray) -> np.ndarray:
    n_basis = knots.shape[0] - 1 if degree == 0 else knots.shape[0]
    idx = np.clip(np.searchsorted(knots, t, side="right") - 1,
                  0, knots.shape[0] - 2)
    design = np.zeros((t.shape[0], n_basis))
    rows = np.arange(t.shape[0])
    if degree == 0:
        design[rows, idx] = 1.0
    else:
        left = knots[idx]
        u = (t - left) / (knots[idx + 1] - left)
        design[rows, idx] = 1.0 - u
        design[rows, idx + 1] = u
    return design


def normal_equations(sample: WeightedSrvSample, degree: int,
                     knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram matrix and right-hand side of the weighted least-squares problem."""
    knots = np.asarray(knots, dtype=float)
    design = _design_matrix(degree, knots, sample.t)
    weighted = design * sample.weights[:, None]
    gram = design.T @ weighted
    rhs = weighted.T @ sample.values
    return gram, rhs


def solve_normal_equations(gram: np.ndarray, rhs: np.ndarray,
                           ridge: float = 0.0) -> np.ndarray:
    if ridge < 0.0:
        raise ValidationError("ridge must be non-negative")
    a = gram + ridge * np.eye(gram.shape[0]) if ridge > 0.0 else gram
    try:
        factor = scipy.linalg.cho_factor(a)
    except scipy.linalg.LinAlgError as exc:
        raise RankDeficientError(
            "least-squares design is rank deficient; use fewer knots or a "
            "positive ridge") from exc
    return scipy.linalg.cho_solve(factor, rhs)


def fit_least_squares(sample: WeightedSrvSample, degree: int, knots,
                      ridge: float = 0.0) -> SrvSpline:
    """Minimise sum_i w_i ||p(t_i) - value_i||^2 (+ ridge ||coefs||^2).

    Raises :class:`RankDeficientError` when the sample cannot identify all
    coefficients and no ridge is given.
    """
    knots = np.asarray(knots, dtype=float)
    gram, rhs = normal_equations(sample, degree, knots)
    coefs = solve_normal_equations(gram, rhs, ridge)
    return SrvSpline(degree, knots, coefs)


def uniform_knots(inner_knots: int) -> np.ndarray:
    """Equally spaced knot vector with the given number of inner knots."""
    if inner_knots < 0:
        raise ValidationError("inner knot count must be non-negative")
    return np.linspace(0.0, 1.0, inner_knots + 2)


def _gap_and_jacobian(spline: SrvSpline, need_jacobian: bool):
    """Closedness gap and (optionally) its jacobian w.r.t. the coefficients.

    gap_r = ∫ p_r ||p||, jac[r, b, a] = ∫ φ_b (δ_ra ||p|| + p_r p_a / ||p||);
    exact for degree 0, Gauss-Legendre per knot interval for degree 1.
    """
    c = spline.coefficients
    n_basis, d = c.shape
    seg = np.diff(spline.knots)
    if spline.degree == 0:
        norms = np.linalg.norm(c, axis=1)
        gap = (seg[:, None] * c * norms[:, None]).sum(axis=0)
        if not need_jacobian:
            return gap, None
        jac = np.zeros((d, n_basis, d))
        for b in range(n_basis):
            if norms[b] > 0.0:
                block = norms[b] * np.eye(d) + np.outer(c[b], c[b]) / norms[b]
            else:
                block = np.zeros((d, d))  # derivative of c||c|| vanishes at 0
            jac[:, b, :] = seg[b] * block
        return gap, jac

    mid = 0.5 * (spline.knots[:-1] + spline.knots[1:])
    half = 0.5 * seg
    ts = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    vals = spline.evaluate(ts)
    norms = np.linalg.norm(vals, axis=1)
    gap = (w[:, None] * vals * norms[:, None]).sum(axis=0)
    if not need_jacobian:
        return gap, None
    idx, u = spline.design_row_data(ts)
    safe = np.where(norms > 0.0, norms, 1.0)
    outer = vals[:, :, None] * vals[:, None, :] / safe[:, None, None]
    outer[norms == 0.0] = 0.0
    blocks = norms[:, None, None] * np.eye(d)[None, :, :] + outer  # (n, d, d)
    jac = np.zeros((d, n_basis, d))
    wb = w * (1.0 - u)
    for a in range(d):
        for r in range(d):
            contrib = blocks[:, r, a]
            jac[r, :, a] += np.bincount(idx, weights=wb * contrib,
                                        minlength=n_basis)
            jac[r, :, a] += np.bincount(idx + 1, weights=w * u * contrib,
                                        minlength=n_basis)
    return gap, jac


def closedness_gap_jacobian(spline: SrvSpline) -> np.ndarray:
    """Jacobian of the closedness gap w.r.t. the coefficient matrix, (d, B, d)."""
    return _gap_and_jacobian(spline, need_jacobian=True)[1]


def closedness_penalty_gradient(spline: SrvSpline) -> np.ndarray:
    """Gradient of ||gap||^2 w.r.t. the coefficient matrix, shape (B, d)."""
    gap, jac = _gap_and_jacobian(spline, need_jacobian=True)
    return 2.0 * np.einsum("r,rba->ba", gap, jac)
