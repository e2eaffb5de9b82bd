"""Synthetic curve generation for end-to-end tests and benchmarks.

Curves are drawn from an SRV-spline template by perturbing its coefficients
with independent Gaussian noise, closing the perturbed spline by penalty
descent when required, and evaluating the back-transform on a random
observation grid.  Sub-streams are split per curve from a single seed so
runs are reproducible and curves independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import DiscreteCurve, ingest_curve, srv_back_transform, srv_transform
from .errors import ValidationError
from .mean import arc_length_assignment, mvt_sample
from .splines import SrvSpline, closedness_penalty_gradient, fit_least_squares

# Gap norm below which a perturbed spline counts as closed; penalty descent
# backtracks from this initial step size.
CLOSE_TOL = 1e-6
_CLOSE_STEP0 = 0.1
_CLOSE_MAX_STEPS = 500


@dataclass(frozen=True)
class SimulationConfig:
    """Template spline plus noise/sampling parameters and a 64-bit seed."""

    template: SrvSpline
    sigma: float
    n: int
    m_range: tuple[int, int]
    closed: bool
    seed: int

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValidationError("sigma must be positive")
        if self.n < 1:
            raise ValidationError("need n >= 1 curves")
        lo, hi = self.m_range
        if lo < 3 or hi < lo:
            raise ValidationError("m_range must satisfy 3 <= lo <= hi")

    def to_json_dict(self) -> dict:
        return {
            "template": self.template.to_json_dict(),
            "sigma": float(self.sigma),
            "n": int(self.n),
            "m_range": [int(self.m_range[0]), int(self.m_range[1])],
            "closed": bool(self.closed),
            "seed": int(self.seed),
        }

    @staticmethod
    def from_json_dict(data: dict, seed=None) -> "SimulationConfig":
        if seed is None:
            seed = data.get("seed")
        if seed is None:
            raise ValidationError("simulation config needs a seed")
        return SimulationConfig(
            template=SrvSpline.from_json_dict(data["template"]),
            sigma=float(data["sigma"]),
            n=int(data["n"]),
            m_range=(int(data["m_range"][0]), int(data["m_range"][1])),
            closed=bool(data["closed"]),
            seed=int(seed),
        )


def close_spline(spline: SrvSpline, tol: float = CLOSE_TOL,
                 max_steps: int = _CLOSE_MAX_STEPS) -> SrvSpline:
    """Drive the closedness gap below ``tol`` by backtracking gradient descent."""
    coefs = spline.coefficients.copy()
    for _ in range(max_steps):
        current = SrvSpline(spline.degree, spline.knots, coefs)
        gap = current.closedness_gap()
        if float(np.linalg.norm(gap)) <= tol:
            return current
        grad = closedness_penalty_gradient(current)
        penalty = float(np.dot(gap, gap))
        step = _CLOSE_STEP0
        while step > 1e-16:
            cand = coefs - step * grad
            cand_gap = SrvSpline(spline.degree, spline.knots,
                                 cand).closedness_gap()
            if float(np.dot(cand_gap, cand_gap)) < penalty:
                break
            step *= 0.5
        else:
            raise ValidationError("closing stalled: no descent step found")
        coefs = cand
    raise ValidationError(
        f"closing did not reach gap {tol:g} within {max_steps} steps")


def sample_curves(config: SimulationConfig) -> list[DiscreteCurve]:
    """Draw ``config.n`` observed curves from the template.

    Per curve: coefficients are perturbed with N(0, sigma²) noise, the
    spline is closed if requested, the observation count m is drawn
    uniformly from ``m_range`` and the curve is evaluated at m-2 uniform
    interior parameters plus both endpoints.  The last point is snapped onto
    the first for closed curves (the closing residual is below CLOSE_TOL).
    """
    template = config.template
    streams = np.random.SeedSequence(config.seed).spawn(config.n)
    curves = []
    for child in streams:
        rng = np.random.default_rng(child)
        noise = config.sigma * rng.standard_normal(template.coefficients.shape)
        spline = SrvSpline(template.degree, template.knots,
                           template.coefficients + noise)
        if config.closed:
            spline = close_spline(spline)
        m = int(rng.integers(config.m_range[0], config.m_range[1] + 1))
        interior = np.sort(rng.random(m - 2))
        grid = np.unique(np.concatenate([[0.0], interior, [1.0]]))
        points = np.array(
            srv_back_transform(spline, np.zeros(template.dim), grid).points)
        if config.closed:
            points[-1] = points[0]
        curves.append(ingest_curve(points, None, closed=config.closed))
    return curves


def coefficient_rmse(estimate: SrvSpline, template: SrvSpline) -> float:
    """Root-mean-square difference over all spline coefficient entries."""
    if estimate.degree != template.degree:
        raise ValidationError("splines have different degrees")
    if (estimate.knots.shape != template.knots.shape
            or not np.allclose(estimate.knots, template.knots, atol=1e-12)):
        raise ValidationError("splines live on different knot vectors")
    if estimate.coefficients.shape != template.coefficients.shape:
        raise ValidationError("coefficient shapes differ")
    diff = estimate.coefficients - template.coefficients
    return float(np.sqrt(np.mean(diff**2)))


# ---------------------------------------------------------------------------
# Deterministic template shapes used in tests, demos and benchmarks
# ---------------------------------------------------------------------------

def _spline_from_points(points, inner_knots, closed):
    curve = ingest_curve(points, None, closed=closed)
    sample = mvt_sample(curve, arc_length_assignment(curve))
    knots = np.linspace(0.0, 1.0, inner_knots + 2)
    spline = fit_least_squares(sample, degree=1, knots=knots)
    if closed:
        spline = close_spline(spline, tol=1e-9)
    return spline


def heart_template(inner_knots: int = 10, scale: float = 1.0) -> SrvSpline:
    """Closed heart-shaped degree-1 SRV spline template."""
    theta = np.linspace(0.0, 2.0 * np.pi, 801)
    x = 16.0 * np.sin(theta) ** 3
    y = (13.0 * np.cos(theta) - 5.0 * np.cos(2.0 * theta)
         - 2.0 * np.cos(3.0 * theta) - np.cos(4.0 * theta))
    points = scale * np.column_stack([x, y])
    return _spline_from_points(points, inner_knots, closed=True)


def spiral_template(inner_knots: int = 10, turns: float = 2.5,
                    scale: float = 1.0) -> SrvSpline:
    """Open Archimedean spiral degree-1 SRV spline template."""
    theta = np.linspace(0.0, 2.0 * np.pi * turns, 801)
    r = 0.5 + theta / (2.0 * np.pi)
    points = scale * np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return _spline_from_points(points, inner_knots, closed=False)


def open_template(inner_knots: int = 9, scale: float = 1.0) -> SrvSpline:
    """Open S-shaped degree-1 SRV spline template."""
    t = np.linspace(0.0, 1.0, 601)
    x = t + 0.3 * np.sin(2.0 * np.pi * t)
    y = 0.8 * np.sin(np.pi * t) + 0.25 * np.sin(3.0 * np.pi * t)
    points = scale * np.column_stack([x, y])
    return _spline_from_points(points, inner_knots, closed=False)


def template_polygon(template: SrvSpline, n_points: int = 200,
                     closed: bool = False) -> DiscreteCurve:
    """Dense polygon evaluated from a template on a uniform grid."""
    grid = np.linspace(0.0, 1.0, n_points + 1)
    curve = srv_back_transform(template, np.zeros(template.dim), grid)
    if closed:
        points = np.array(curve.points)
        points[-1] = points[0]
        return ingest_curve(points, None, closed=True)
    return curve


__all__ = [
    "CLOSE_TOL",
    "SimulationConfig",
    "close_spline",
    "coefficient_rmse",
    "heart_template",
    "open_template",
    "sample_curves",
    "spiral_template",
    "template_polygon",
]
