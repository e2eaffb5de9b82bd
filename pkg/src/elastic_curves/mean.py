"""Fréchet spline means for samples of sparsely observed curves.

The mean SRV curve is a degree-0 or degree-1 spline minimising the summed
squared elastic distances to the observed polygons.  Estimation alternates a
warping step (align every polygon to the current mean) with a fitting step
(weighted least squares on per-segment SRV observations).  The fit integral
is discretised by the mean-value rule: segment j of curve i contributes one
observation at the midpoint of its warped parameter interval with value
Δβ_ij / sqrt(||Δβ_ij||·(t_{j+1}-t_j)).  Closed means add a penalty
λ_k·||∫ p̄||p̄||||² whose weight grows with the outer iteration.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .alignment import (
    WarpAssignment,
    _interval_integrals,
    align_closed_polygons,
    align_open_polygons,
    align_to_spline,
    default_starts,
)
from .curves import DiscreteCurve, PiecewiseConstantSrv, srv_transform
from .errors import ValidationError
from .splines import (
    SrvSpline,
    WeightedSrvSample,
    _gap_and_jacobian,
    normal_equations,
    solve_normal_equations,
    uniform_knots,
)

logger = logging.getLogger(__name__)


@dataclass
class ElasticMeanResult:
    """Fitted mean spline with per-curve warps and convergence traces."""

    mean: SrvSpline
    assignments: list[WarpAssignment]
    loss_trace: list[float]
    closure_gap_trace: list[float]
    iterations: int
    converged: bool

    def to_json_dict(self) -> dict:
        return {
            "mean": self.mean.to_json_dict(),
            "assignments": [[float(v) for v in a.as_vector()]
                            for a in self.assignments],
            "loss_trace": [float(v) for v in self.loss_trace],
            "closure_gap_trace": [float(v) for v in self.closure_gap_trace],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def arc_length_assignment(curve: DiscreteCurve) -> WarpAssignment:
    """Identity-style start: corners at their relative arc-length positions."""
    arc = curve.arc_length_params()
    if curve.closed:
        return WarpAssignment(arc[1:-1], t0=0.0)
    return WarpAssignment(arc[1:-1])


def mvt_sample(curve: DiscreteCurve, assignment: WarpAssignment,
               scheme: str = "uniform") -> WeightedSrvSample:
    """One SRV observation per polygon segment under the given warp.

    Values follow the mean-value rule Δβ_j / sqrt(||Δβ_j||·δ_j) with
    δ_j = t_{j+1} - t_j, placed at the interval midpoints.  Weights are 1
    (``uniform``) or δ_j (``trapezoid``).  Zero-gap segments are skipped
    with a warning; it is an error for every gap to vanish.
    """
    if scheme not in ("uniform", "trapezoid"):
        raise ValidationError("scheme must be 'uniform' or 'trapezoid'")
    if assignment.m != curve.n_segments:
        raise ValidationError("assignment does not match the curve's segments")
    t_full = assignment.full()
    gaps = np.diff(t_full)
    delta = np.diff(curve.points, axis=0)
    keep = gaps > 0.0
    skipped = int(np.count_nonzero(~keep))
    if skipped == curve.n_segments:
        raise ValidationError("all warp gaps vanish; no sample points left")
    if skipped:
        logger.warning("mvt_sample: skipped %d zero-gap segment(s)", skipped)
    gaps = gaps[keep]
    delta = delta[keep]
    mids = 0.5 * (t_full[:-1] + t_full[1:])[keep]
    if assignment.closed:
        mids = mids - np.floor(mids)
    norms = np.linalg.norm(delta, axis=1)
    values = delta / np.sqrt(norms * gaps)[:, None]
    weights = np.ones_like(gaps) if scheme == "uniform" else gaps
    return WeightedSrvSample(np.clip(mids, 0.0, 1.0), values, weights)


def _resolve_knots(knots) -> np.ndarray:
    if np.isscalar(knots):
        return uniform_knots(int(knots))
    return np.asarray(knots, dtype=float)


def initial_mean(curves, degree: int, knots, scheme: str = "uniform",
                 ridge: float = 0.0) -> SrvSpline:
    """Least-squares mean with identity (arc-length) warps for every curve."""
    knots = _resolve_knots(knots)
    samples = [mvt_sample(c, arc_length_assignment(c), scheme) for c in curves]
    pooled = WeightedSrvSample.concatenate(samples)
    gram, rhs = normal_equations(pooled, degree, knots)
    coefs = solve_normal_equations(gram, rhs, ridge)
    return SrvSpline(degree, knots, coefs)


def _discrete_loss(mean: SrvSpline, samples: list[WeightedSrvSample]) -> float:
    total = 0.0
    for s in samples:
        resid = mean.evaluate(s.t) - s.values
        total += float(np.sum(s.weights * np.sum(resid**2, axis=1)))
    return total


def _warp_step_worker(args):
    mean, q, closed, eps, max_iters, prev, wide = args
    # the previous assignment is always a start, so no warp step can worsen
    # a curve's alignment; the full default set is scanned once up front
    starts = [prev] + (default_starts(q, closed) if wide else [])
    if mean.degree == 1:
        res = align_to_spline(mean, q, closed=closed, eps=eps,
                              max_iters=max_iters, starts=starts)
    elif closed:
        res = align_closed_polygons(mean, q, eps=eps, max_sweeps=max_iters,
                                    starts=starts)
    else:
        res = align_open_polygons(mean, q, eps=eps, max_sweeps=max_iters,
                                  starts=starts)
    return res.assignment


def _warp_step(mean, srvs, closed, eps, max_iters, assignments, pool, wide):
    tasks = [(mean, q, closed, eps, max_iters, prev, wide)
             for q, prev in zip(srvs, assignments)]
    if pool is not None and len(tasks) > 1:
        return list(pool.map(_warp_step_worker, tasks))
    return [_warp_step_worker(t) for t in tasks]


_RESTART_POLICIES = ("full", "warm")


# ---------------------------------------------------------------------------
# Fitting-step variants
# ---------------------------------------------------------------------------

def _exact_gram(degree: int, knots: np.ndarray) -> np.ndarray:
    """∫ φ_b φ_b' dt for the degree-0/1 basis."""
    seg = np.diff(knots)
    if degree == 0:
        return np.diag(seg)
    n = knots.shape[0]
    gram = np.zeros((n, n))
    for i, h in enumerate(seg):
        gram[i, i] += h / 3.0
        gram[i + 1, i + 1] += h / 3.0
        gram[i, i + 1] += h / 6.0
        gram[i + 1, i] += h / 6.0
    return gram


def _warped_srv_load(mean_prev: SrvSpline, q: PiecewiseConstantSrv,
                     assignment: WarpAssignment, knots: np.ndarray):
    """Load vector ∫ φ_b(t) r(t) dt for the piecewise-linear warped SRV r.

    r(t) = q_j * sqrt(w_j/I_j) * <p_old(t), q_j>_+ on warp interval j, the
    closed-form image of the polygon under the optimal warp slope.  Returns
    the (B, d) load plus ∫||r||² for the loss bookkeeping.
    """
    closed = assignment.closed
    t_full = assignment.full()
    w = np.diff(q.breaks)
    m = q.n_segments
    integrals = _interval_integrals(mean_prev, q.values, t_full, closed)
    scale = np.where(integrals > 0.0,
                     np.sqrt(w / np.where(integrals > 0.0, integrals, 1.0)), 0.0)

    lo, hi = t_full[0], t_full[-1]
    model_knots = mean_prev.knots
    if closed:
        shifts = []
        for k in range(int(np.floor(lo)) - 1, int(np.floor(hi)) + 2):
            cand = model_knots + k
            shifts.append(cand[(cand > lo) & (cand < hi)])
        inner = np.concatenate(shifts) if shifts else np.empty(0)
    else:
        inner = model_knots[(model_knots > lo) & (model_knots < hi)]
    events = np.unique(np.concatenate([t_full, inner]))

    def piece_data(ev):
        mids = 0.5 * (ev[:-1] + ev[1:])
        qidx = np.clip(np.searchsorted(t_full, mids, side="right") - 1, 0, m - 1)
        base = np.floor(mids) if closed else np.zeros_like(mids)
        left = np.clip(ev[:-1] - base, 0.0, 1.0)
        right = np.clip(ev[1:] - base, 0.0, 1.0)
        qv = q.values[qidx]
        a = np.einsum("ij,ij->i", mean_prev.evaluate(left), qv)
        b = np.einsum("ij,ij->i", mean_prev.evaluate(right), qv)
        return mids, qidx, left, right, a, b

    mids, qidx, left, right, a, b = piece_data(events)
    # split pieces where the dot product changes sign so r stays linear
    crossing = ((a < 0.0) & (b > 0.0)) | ((a > 0.0) & (b < 0.0))
    if np.any(crossing):
        frac = a[crossing] / (a[crossing] - b[crossing])
        roots = events[:-1][crossing] + frac * np.diff(events)[crossing]
        events = np.unique(np.concatenate([events, roots]))
        mids, qidx, left, right, a, b = piece_data(events)

    coef_left = scale[qidx] * np.clip(a, 0.0, None)
    coef_right = scale[qidx] * np.clip(b, 0.0, None)
    lens = np.diff(events)

    n_basis = knots.shape[0] - 1 if mean_prev.degree == 0 else knots.shape[0]
    span = np.clip(np.searchsorted(knots, 0.5 * (left + right),
                                   side="right") - 1, 0, knots.shape[0] - 2)
    load = np.zeros((n_basis, q.dim))
    qv = q.values[qidx]
    if mean_prev.degree == 0:
        mass = lens * 0.5 * (coef_left + coef_right)  # r linear, φ constant
        for col in range(q.dim):
            load[:, col] = np.bincount(span, weights=mass * qv[:, col],
                                       minlength=n_basis)
    else:
        kl = knots[span]
        kw = knots[span + 1] - kl
        u_l = (left - kl) / kw
        u_r = (right - kl) / kw
        # exact ∫ (linear basis)·(linear r) over each piece
        low = lens / 6.0 * (coef_left * (2.0 * (1 - u_l) + (1 - u_r))
                            + coef_right * ((1 - u_l) + 2.0 * (1 - u_r)))
        high = lens / 6.0 * (coef_left * (2.0 * u_l + u_r)
                             + coef_right * (u_l + 2.0 * u_r))
        for col in range(q.dim):
            load[:, col] = (np.bincount(span, weights=low * qv[:, col],
                                        minlength=n_basis)
                            + np.bincount(span + 1, weights=high * qv[:, col],
                                          minlength=n_basis))
    seg_norm_sq = np.sum(q.values**2, axis=1)
    r_norm_sq = float(np.sum(w * seg_norm_sq * (integrals > 0.0)))
    return load, r_norm_sq


def _quadratic_parts(mean_prev, curves, srvs, assignments, degree, knots,
                     scheme, fit_method):
    """(gram, rhs, loss_offset, samples) of the fitting-step quadratic."""
    if fit_method == "mvt":
        samples = [mvt_sample(c, a, scheme) for c, a in zip(curves, assignments)]
        pooled = WeightedSrvSample.concatenate(samples)
        gram, rhs = normal_equations(pooled, degree, knots)
        offset = float(np.sum(pooled.weights * np.sum(pooled.values**2, axis=1)))
        return gram, rhs, offset, samples
    if fit_method != "polygon":
        raise ValidationError("fit_method must be 'mvt' or 'polygon'")
    gram = _exact_gram(degree, knots) * len(curves)
    rhs = np.zeros((gram.shape[0], curves[0].dim))
    offset = 0.0
    for q, a in zip(srvs, assignments):
        load, r_norm_sq = _warped_srv_load(mean_prev, q, a, knots)
        rhs += load
        offset += r_norm_sq
    return gram, rhs, offset, None


def _quadratic_loss(gram, rhs, offset, coefs, ridge):
    quad = float(np.einsum("bd,bc,cd->", coefs, gram, coefs))
    lin = float(np.sum(coefs * rhs))
    reg = ridge * float(np.sum(coefs**2))
    return quad - 2.0 * lin + offset + reg


def _penalized_fit(gram, rhs, degree, knots, lam, coefs0, ridge=0.0,
                   newton_steps: int = 10):
    """Damped Newton on the quadratic fit term plus λ·closedness penalty.

    The penalty Hessian uses the Gauss-Newton approximation 2λ JᵀJ with the
    analytic gap jacobian; steps are accepted only when the total objective
    decreases, with the damping raised otherwise.
    """
    n_basis, d = rhs.shape
    a_reg = gram + ridge * np.eye(n_basis)
    h_quad = np.kron(np.eye(d), 2.0 * a_reg)

    def total(coefs):
        spline = SrvSpline(degree, knots, coefs)
        gap = spline.closedness_gap()
        return (_quadratic_loss(gram, rhs, 0.0, coefs, ridge)
                + lam * float(np.dot(gap, gap)))

    coefs = coefs0.copy()
    value = total(coefs)
    damping = 0.0
    for _ in range(newton_steps):
        spline = SrvSpline(degree, knots, coefs)
        gap, jac = _gap_and_jacobian(spline, need_jacobian=True)
        jmat = np.transpose(jac, (0, 2, 1)).reshape(d, d * n_basis)
        grad = (2.0 * (a_reg @ coefs - rhs)).flatten(order="F")
        grad += 2.0 * lam * (jmat.T @ gap)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-12 * max(1.0, abs(value)):
            break
        hess = h_quad + 2.0 * lam * (jmat.T @ jmat)
        accepted = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(
                    hess + damping * np.eye(hess.shape[0]), -grad)
            except np.linalg.LinAlgError:
                damping = max(damping * 10.0, 1e-8)
                continue
            step = 1.0
            while step > 1e-8:
                cand = coefs + step * delta.reshape((n_basis, d), order="F")
                cand_value = total(cand)
                if cand_value < value:
                    coefs, value = cand, cand_value
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                damping *= 0.25
                break
            damping = max(damping * 10.0, 1e-8)
        if not accepted:
            break
    return coefs


# ---------------------------------------------------------------------------
# Outer loops
# ---------------------------------------------------------------------------

def _validate_curves(curves, closed):
    curves = list(curves)
    if not curves:
        raise ValidationError("need at least one curve")
    dim = curves[0].dim
    for c in curves:
        if c.dim != dim:
            raise ValidationError("curves must share their ambient dimension")
        if c.closed != closed:
            kind = "closed" if closed else "open"
            raise ValidationError(f"all curves must be {kind}")
    return curves


def _mean_loop(curves, degree, knots, eps, max_iters, scheme, ridge,
               closed, lambda_step, align_eps, align_max_iters, fit_method,
               newton_steps, jobs, restart_policy):
    curves = _validate_curves(curves, closed)
    if degree not in (0, 1):
        raise ValidationError("mean spline degree must be 0 or 1")
    if restart_policy not in _RESTART_POLICIES:
        raise ValidationError("restart_policy must be 'full' or 'warm'")
    knots = _resolve_knots(knots)
    srvs = [srv_transform(c) for c in curves]
    assignments = [arc_length_assignment(c) for c in curves]

    gram, rhs, offset, samples = _quadratic_parts(
        None, curves, srvs, assignments, degree, knots, scheme, "mvt")
    coefs = solve_normal_equations(gram, rhs, ridge)
    mean = SrvSpline(degree, knots, coefs)
    loss_trace = [_quadratic_loss(gram, rhs, offset, coefs, ridge)]
    gap_trace = []
    if closed:
        gap_trace.append(float(np.linalg.norm(mean.closedness_gap())))

    converged = False
    iterations = 0
    pool = (ProcessPoolExecutor(max_workers=jobs)
            if jobs and jobs > 1 and len(curves) > 1 else None)
    try:
        for k in range(1, max_iters + 1):
            iterations = k
            assignments = _warp_step(mean, srvs, closed, align_eps,
                                     align_max_iters, assignments, pool,
                                     wide=(restart_policy == "full" or k == 1))
            gram, rhs, offset, samples = _quadratic_parts(
                mean, curves, srvs, assignments, degree, knots, scheme,
                fit_method)
            if closed:
                lam = lambda_step * k
                coefs = _penalized_fit(gram, rhs, degree, knots, lam,
                                       mean.coefficients, ridge, newton_steps)
            else:
                coefs = solve_normal_equations(gram, rhs, ridge)
            new_mean = SrvSpline(degree, knots, coefs)
            loss_trace.append(_quadratic_loss(gram, rhs, offset, coefs, ridge))
            if closed:
                gap_trace.append(
                    float(np.linalg.norm(new_mean.closedness_gap())))
            delta = float(np.linalg.norm(new_mean.coefficients
                                         - mean.coefficients))
            mean = new_mean
            if delta < eps:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return ElasticMeanResult(mean, list(assignments), loss_trace, gap_trace,
                             iterations, converged)


def elastic_mean_open(curves, degree: int = 1, knots=10, eps: float = 1e-3,
                      max_iters: int = 20, scheme: str = "uniform",
                      ridge: float = 0.0, align_eps: float = 1e-4,
                      align_max_iters: int = 50, fit_method: str = "mvt",
                      restart_policy: str = "full",
                      jobs: int = 1) -> ElasticMeanResult:
    """Elastic spline mean of open curves.

    ``knots`` is either an inner-knot count (equally spaced) or an explicit
    knot vector.  Convergence is measured as the Frobenius change of the
    coefficient matrix between outer iterations.  ``fit_method='polygon'``
    replaces the mean-value-rule fitting step by the closed-form integral
    under the piecewise-linear warped-SRV assumption.  The warping step
    always starts from each curve's previous assignment; ``restart_policy``
    "full" additionally scans the default starts every iteration, "warm"
    only on the first (faster, same loss guarantee).
    """
    return _mean_loop(curves, degree, knots, eps, max_iters, scheme, ridge,
                      closed=False, lambda_step=0.0, align_eps=align_eps,
                      align_max_iters=align_max_iters, fit_method=fit_method,
                      newton_steps=0, jobs=jobs, restart_policy=restart_policy)


def elastic_mean_closed(curves, degree: int = 1, knots=10, eps: float = 1e-3,
                        max_iters: int = 20, scheme: str = "uniform",
                        lambda_step: float = 1e-3, ridge: float = 0.0,
                        align_eps: float = 1e-4, align_max_iters: int = 50,
                        fit_method: str = "mvt", newton_steps: int = 10,
                        restart_policy: str = "full",
                        jobs: int = 1) -> ElasticMeanResult:
    """Elastic spline mean of closed curves with a growing closedness penalty.

    Outer iteration k fits with penalty weight λ_k = ``lambda_step``·k by
    damped Newton steps warm-started from the previous coefficients; the
    closure gap norm is recorded per iteration in ``closure_gap_trace``.
    """
    if lambda_step <= 0.0:
        raise ValidationError("lambda_step must be positive")
    return _mean_loop(curves, degree, knots, eps, max_iters, scheme, ridge,
                      closed=True, lambda_step=lambda_step,
                      align_eps=align_eps, align_max_iters=align_max_iters,
                      fit_method=fit_method, newton_steps=newton_steps,
                      jobs=jobs, restart_policy=restart_policy)
