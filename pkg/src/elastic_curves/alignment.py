"""Elastic alignment of a polygon against a model SRV curve.

Aligning a curve with piecewise-constant SRV q (breakpoints s_j, values q_j)
to a model SRV curve p reduces to maximising

    score(t) = sum_j sqrt((s_{j+1}-s_j) * int_{t_j}^{t_{j+1}} <p(t), q_j>_+^2 dt)

over monotone breakpoint vectors t; the elastic distance then is
sqrt(||p||^2 + ||q||^2 - 2*score).  For closed curves the model is extended
periodically and an extra start offset t_0 (with t_m = t_0 + 1) is optimised.

Two maximisation engines are provided: alternating-parity coordinate sweeps
with an exact closed-form coordinate maximiser (both curves polygonal), and
projected gradient ascent with backtracking (model is a continuous degree-1
SRV spline).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .curves import DiscreteCurve, PiecewiseConstantSrv, srv_transform
from .errors import GradientUndefinedError, ValidationError
from .splines import SrvSpline

logger = logging.getLogger(__name__)

# Base entropy for the optional seeded random restarts (kept fixed so results
# are reproducible given identical inputs and restart counts).
_RESTART_ENTROPY = 715517


# ---------------------------------------------------------------------------
# Warp vectors and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WarpAssignment:
    """Breakpoint parameters of the warped polygon.

    interior : (m-1,) non-decreasing values t_1..t_{m-1}.
    t0       : None for open curves (t_0 = 0, t_m = 1 implicit); for closed
               curves the start offset, with t_m = t_0 + 1.
    """

    interior: np.ndarray
    t0: float | None = None

    def __post_init__(self):
        interior = np.atleast_1d(np.asarray(self.interior, dtype=float))
        if interior.ndim != 1:
            raise ValidationError("interior warp values must be a 1-D sequence")
        if np.any(np.diff(interior) < 0):
            raise ValidationError("warp values must be non-decreasing")
        if self.t0 is None:
            if interior.size and (interior[0] < 0.0 or interior[-1] > 1.0):
                raise ValidationError("open warp values must lie in [0, 1]")
        else:
            t0 = float(self.t0)
            if interior.size and (interior[0] < t0 or interior[-1] > t0 + 1.0):
                raise ValidationError(
                    "closed warp values must lie in [t0, t0 + 1]")
        interior.setflags(write=False)
        object.__setattr__(self, "interior", interior)

    @property
    def closed(self) -> bool:
        return self.t0 is not None

    @property
    def m(self) -> int:
        return self.interior.shape[0] + 1

    def full(self) -> np.ndarray:
        """All m+1 breakpoints including the endpoints."""
        if self.t0 is None:
            return np.concatenate([[0.0], self.interior, [1.0]])
        return np.concatenate([[self.t0], self.interior, [self.t0 + 1.0]])

    def as_vector(self) -> np.ndarray:
        """The optimisation variable: interior values, preceded by t0 if closed."""
        if self.t0 is None:
            return self.interior.copy()
        return np.concatenate([[self.t0], self.interior])

    @staticmethod
    def from_vector(vec: np.ndarray, closed: bool) -> "WarpAssignment":
        vec = np.asarray(vec, dtype=float)
        if closed:
            return WarpAssignment(vec[1:], t0=float(vec[0]))
        return WarpAssignment(vec)


@dataclass
class AlignmentResult:
    """Optimal warp plus diagnostics for one alignment problem."""

    assignment: WarpAssignment
    score: float
    distance: float
    sweeps: int
    restarts_used: int
    converged: bool
    score_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "t": [float(v) for v in self.assignment.as_vector()],
            "phi": float(self.score),
            "distance": float(self.distance),
            "sweeps": int(self.sweeps),
            "converged": bool(self.converged),
        }


# ---------------------------------------------------------------------------
# Step-function plumbing
# ---------------------------------------------------------------------------

def _as_step(p):
    """(breaks, values) for piecewise-constant SRVs, None for degree-1 splines."""
    if isinstance(p, PiecewiseConstantSrv):
        return p.breaks, p.values
    if isinstance(p, SrvSpline):
        if p.degree == 0:
            return p.knots, p.coefficients
        return None
    raise ValidationError(f"unsupported SRV model type {type(p)!r}")


def _model_norm_sq(p) -> float:
    step = _as_step(p)
    if step is None:
        return p.l2_norm_sq()
    breaks, values = step
    return float(np.sum(np.diff(breaks) * np.sum(values**2, axis=1)))


def _shifted_breaks(breaks: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """All integer shifts of the breakpoints that fall inside (lo, hi)."""
    ks = np.arange(int(np.floor(lo)) - 1, int(np.floor(hi)) + 2)
    shifted = (breaks[None, :] + ks[:, None]).ravel()
    return shifted[(shifted > lo) & (shifted < hi)]


def _restrict_step(breaks, values, lo, hi, periodic):
    """Step function restricted to [lo, hi]; periodic wraps via t - floor(t)."""
    if hi <= lo:
        return np.array([lo, hi]), values[:1] * 0.0
    if periodic:
        inner = _shifted_breaks(breaks, lo, hi)
    else:
        inner = breaks[(breaks > lo) & (breaks < hi)]
    r = np.unique(np.concatenate([[lo], inner, [hi]]))
    mids = 0.5 * (r[:-1] + r[1:])
    if periodic:
        mids = mids - np.floor(mids)
    idx = np.clip(np.searchsorted(breaks, mids, side="right") - 1,
                  0, values.shape[0] - 1)
    return r, values[idx]


def _interval_integrals_step(p_breaks, p_values, q_values, t_full, periodic):
    """int_{t_j}^{t_{j+1}} <p(t), q_j>_+^2 dt for every q interval j."""
    m = q_values.shape[0]
    lo, hi = t_full[0], t_full[-1]
    if periodic:
        inner = _shifted_breaks(p_breaks, lo, hi)
    else:
        inner = p_breaks[(p_breaks > lo) & (p_breaks < hi)]
    events = np.unique(np.concatenate([t_full, inner]))
    lens = np.diff(events)
    mids = 0.5 * (events[:-1] + events[1:])
    qidx = np.clip(np.searchsorted(t_full, mids, side="right") - 1, 0, m - 1)
    pos = mids - np.floor(mids) if periodic else mids
    pidx = np.clip(np.searchsorted(p_breaks, pos, side="right") - 1,
                   0, p_values.shape[0] - 1)
    dots = np.einsum("ij,ij->i", p_values[pidx], q_values[qidx])
    contrib = lens * np.square(np.clip(dots, 0.0, None))
    return np.bincount(qidx, weights=contrib, minlength=m)


def _pos_sq_piece_integrals(a, b, lens):
    """Integral of max(linear, 0)^2 on pieces with endpoint dots a, b."""
    both_pos = (a >= 0.0) & (b >= 0.0)
    both_neg = (a <= 0.0) & (b <= 0.0)
    out = np.where(both_pos, lens * (a * a + a * b + b * b) / 3.0, 0.0)
    diff = b - a
    safe = np.where(diff == 0.0, 1.0, diff)
    cross_up = (a < 0.0) & (b > 0.0)
    cross_dn = (a > 0.0) & (b < 0.0)
    out = np.where(cross_up, lens * b**3 / (3.0 * safe), out)
    out = np.where(cross_dn, lens * a**3 / (3.0 * -safe), out)
    return np.where(both_neg, 0.0, out)


def _interval_integrals_linear(p: SrvSpline, q_values, t_full, periodic):
    """Per-interval integrals when the model SRV is continuous piecewise linear."""
    m = q_values.shape[0]
    lo, hi = t_full[0], t_full[-1]
    if periodic:
        inner = _shifted_breaks(p.knots, lo, hi)
    else:
        inner = p.knots[(p.knots > lo) & (p.knots < hi)]
    events = np.unique(np.concatenate([t_full, inner]))
    lens = np.diff(events)
    mids = 0.5 * (events[:-1] + events[1:])
    qidx = np.clip(np.searchsorted(t_full, mids, side="right") - 1, 0, m - 1)
    if periodic:
        base = np.floor(mids)
        left = np.clip(events[:-1] - base, 0.0, 1.0)
        right = np.clip(events[1:] - base, 0.0, 1.0)
    else:
        left, right = events[:-1], events[1:]
    qv = q_values[qidx]
    a = np.einsum("ij,ij->i", p._eval_fast(left), qv)
    b = np.einsum("ij,ij->i", p._eval_fast(right), qv)
    contrib = _pos_sq_piece_integrals(a, b, lens)
    return np.bincount(qidx, weights=contrib, minlength=m)


def _interval_integrals(p, q_values, t_full, periodic):
    step = _as_step(p)
    if step is None:
        return _interval_integrals_linear(p, q_values, t_full, periodic)
    return _interval_integrals_step(step[0], step[1], q_values, t_full, periodic)


def _model_point(p, t, periodic):
    t = np.asarray(t, dtype=float)
    if periodic:
        t = t - np.floor(t)
    step = _as_step(p)
    if step is None:
        return p._eval_fast(np.clip(t, 0.0, 1.0))
    breaks, values = step
    idx = np.clip(np.searchsorted(breaks, t, side="right") - 1,
                  0, values.shape[0] - 1)
    return values[idx]


def _score_from_integrals(weights, integrals) -> float:
    return float(np.sum(np.sqrt(weights * np.clip(integrals, 0.0, None))))


def _check_t_full(t_full, m, closed):
    if t_full.shape[0] != m + 1:
        raise ValidationError(
            f"warp vector has {t_full.shape[0] - 1} intervals, polygon has {m}")
    if np.any(np.diff(t_full) < 0):
        raise ValidationError("warp vector must be non-decreasing")
    if not closed and (t_full[0] != 0.0 or t_full[-1] != 1.0):
        raise ValidationError("open warp vector must span [0, 1]")


def _coerce_t_full(assignment, m, closed):
    if isinstance(assignment, WarpAssignment):
        if assignment.closed != closed:
            raise ValidationError("assignment open/closed flag mismatch")
        t_full = assignment.full()
    else:
        arr = np.asarray(assignment, dtype=float)
        if closed:
            if arr.shape[0] == m:  # (t0, interior)
                t_full = np.concatenate([arr, [arr[0] + 1.0]])
            else:
                t_full = arr
        else:
            if arr.shape[0] == m - 1:
                t_full = np.concatenate([[0.0], arr, [1.0]])
            else:
                t_full = arr
    _check_t_full(t_full, m, closed)
    return t_full


# ---------------------------------------------------------------------------
# Score, gradient
# ---------------------------------------------------------------------------

def warp_score_open(p, q: PiecewiseConstantSrv, assignment) -> float:
    """Matching score of an open polygon q warped onto the model SRV p."""
    t_full = _coerce_t_full(assignment, q.n_segments, closed=False)
    integrals = _interval_integrals(p, q.values, t_full, periodic=False)
    return _score_from_integrals(np.diff(q.breaks), integrals)


def warp_score_closed(p, q: PiecewiseConstantSrv, assignment) -> float:
    """Matching score for closed curves; p is extended 1-periodically."""
    t_full = _coerce_t_full(assignment, q.n_segments, closed=True)
    if abs((t_full[-1] - t_full[0]) - 1.0) > 1e-9:
        raise ValidationError("closed warp vector must satisfy t_m = t_0 + 1")
    integrals = _interval_integrals(p, q.values, t_full, periodic=True)
    return _score_from_integrals(np.diff(q.breaks), integrals)


def warp_score_gradient(p: SrvSpline, q: PiecewiseConstantSrv, assignment,
                        closed: bool | None = None) -> np.ndarray:
    """Partial derivatives of the matching score w.r.t. the warp vector.

    Requires a continuous (degree-1) model.  Interval integrals that vanish
    contribute zero terms (semi-derivative convention); exactly coincident
    adjacent warp entries raise :class:`GradientUndefinedError`.
    Returns (m-1,) for open curves, (m,) with the t0 partial first for closed.
    """
    if _as_step(p) is not None:
        raise ValidationError("score gradient needs a continuous degree-1 model")
    if closed is None:
        closed = isinstance(assignment, WarpAssignment) and assignment.closed
    t_full = _coerce_t_full(assignment, q.n_segments, closed)
    if np.any(np.diff(t_full) == 0.0):
        raise GradientUndefinedError(
            "coincident warp entries; fall back to coordinate moves")
    return _gradient_convention(p, q, t_full, closed)


def _gradient_convention(p, q, t_full, closed):
    """Gradient with all vanishing-integral terms set to zero (no tie check)."""
    integrals = _interval_integrals(p, q.values, t_full, periodic=closed)
    weights = np.diff(q.breaks)
    m = q.n_segments
    pts = _model_point(p, t_full[:-1], periodic=closed)  # p at t_0..t_{m-1}
    # dot of p(t_j) with the segment left of t_j and right of t_j
    left_dot = np.einsum("ij,ij->i", pts[1:], q.values[:-1])   # j = 1..m-1
    right_dot = np.einsum("ij,ij->i", pts[1:], q.values[1:])
    left_dot = np.square(np.clip(left_dot, 0.0, None))
    right_dot = np.square(np.clip(right_dot, 0.0, None))

    def _term(w, num, integral):
        if integral <= 0.0:
            return 0.0
        return np.sqrt(w) * num / np.sqrt(integral)

    grad = np.zeros(m - 1)
    for j in range(1, m):
        grad[j - 1] = 0.5 * (_term(weights[j - 1], left_dot[j - 1],
                                   integrals[j - 1])
                             - _term(weights[j], right_dot[j - 1],
                                     integrals[j]))
    if not closed:
        return grad
    p0 = _model_point(p, np.array([t_full[0]]), periodic=True)[0]
    wrap_in = np.square(max(float(np.dot(p0, q.values[-1])), 0.0))
    wrap_out = np.square(max(float(np.dot(p0, q.values[0])), 0.0))
    g0 = 0.5 * (_term(weights[-1], wrap_in, integrals[-1])
                - _term(weights[0], wrap_out, integrals[0]))
    return np.concatenate([[g0], grad])


# ---------------------------------------------------------------------------
# Closed-form coordinate maximisation
# ---------------------------------------------------------------------------

def _coord_argmax(p_breaks, p_values, q_prev, q_next, w_prev, w_next,
                  lo, hi, periodic=False, search_lo=None, search_hi=None):
    """Maximise L(t) = sqrt(w_prev*int_lo^t <p,q_prev>_+^2)
                     + sqrt(w_next*int_t^hi <p,q_next>_+^2)  over [lo, hi].

    The maximiser lies in the finite set of step breakpoints plus one interior
    stationary point per constant piece; ties resolve to the smallest t.
    An optional sub-interval [search_lo, search_hi] restricts the candidates
    while the integrals keep their full range.
    """
    a_bound = lo if search_lo is None else max(search_lo, lo)
    b_bound = hi if search_hi is None else min(search_hi, hi)
    if hi <= lo:
        return lo, 0.0
    r, pv = _restrict_step(p_breaks, p_values, lo, hi, periodic)
    dp = np.square(np.clip(pv @ q_prev, 0.0, None))
    dn = np.square(np.clip(pv @ q_next, 0.0, None))
    lens = np.diff(r)
    grow = np.concatenate([[0.0], np.cumsum(lens * dp)])
    total_next = float(np.sum(lens * dn))
    shrink = total_next - np.concatenate([[0.0], np.cumsum(lens * dn)])

    def value_at(t):
        i = int(np.clip(np.searchsorted(r, t, side="right") - 1, 0, len(lens) - 1))
        g1 = grow[i] + (t - r[i]) * dp[i]
        g2 = shrink[i] - (t - r[i]) * dn[i]
        return float(np.sqrt(w_prev * max(g1, 0.0))
                     + np.sqrt(w_next * max(g2, 0.0)))

    best_t, best_val = a_bound, value_at(a_bound)
    for i in range(len(lens)):
        piece_lo, piece_hi = r[i], r[i + 1]
        if piece_hi < a_bound or piece_lo > b_bound:
            continue
        for cand in _piece_candidates(piece_lo, piece_hi, dp[i], dn[i],
                                      grow[i], shrink[i], w_prev, w_next):
            if cand < a_bound or cand > b_bound:
                continue
            val = value_at(cand)
            if val > best_val:
                best_t, best_val = cand, val
    if b_bound > a_bound:
        val = value_at(b_bound)
        if val > best_val:
            best_t, best_val = b_bound, val
    return best_t, best_val


def _piece_candidates(r_lo, r_hi, dp, dn, grow, shrink, w_prev, w_next):
    """Candidate maximisers within one constant piece, in ascending order."""
    cands = [r_lo]
    if dp > 0.0 and dn > 0.0:
        a1 = w_prev * dp
        a2 = w_next * dn
        b1 = w_prev * (dp * r_lo - grow)
        b2 = w_next * (shrink + dn * r_lo)
        denom = a1 * a2 * a2 + a1 * a1 * a2
        if denom > 0.0:
            tc = (a1 * a1 * b2 + a2 * a2 * b1) / denom
            if r_lo < tc < r_hi:
                cands.append(tc)
    return cands


def maximize_coordinate(p, q_prev, q_next, s_prev, s_mid, s_next,
                        lo, hi, periodic: bool = False) -> float:
    """Optimal single breakpoint between two fixed neighbours.

    Maximises the part of the matching score that depends on one warp entry,
    with segment vectors q_prev/q_next and model breakpoint weights taken
    from s_prev < s_mid < s_next.  Ties resolve to the smallest argmax.
    """
    step = _as_step(p)
    if step is None:
        raise ValidationError("coordinate maximisation needs a piecewise-"
                              "constant model; use align_to_spline instead")
    q_prev = np.asarray(q_prev, dtype=float)
    q_next = np.asarray(q_next, dtype=float)
    t, _ = _coord_argmax(step[0], step[1], q_prev, q_next,
                         s_mid - s_prev, s_next - s_mid, lo, hi, periodic)
    return float(t)


# ---------------------------------------------------------------------------
# Default starting values
# ---------------------------------------------------------------------------

def polygon_arc_length_params(q: PiecewiseConstantSrv) -> np.ndarray:
    """Relative arc length of the polygon's corners, recovered from its SRV."""
    seg_lengths = np.sum(q.values**2, axis=1) * np.diff(q.breaks)
    total = seg_lengths.sum()
    if total <= 0.0:
        raise ValidationError("polygon has zero length")
    params = np.concatenate([[0.0], np.cumsum(seg_lengths)]) / total
    params[-1] = 1.0
    return params


def default_starts(q: PiecewiseConstantSrv, closed: bool,
                   n_offsets: int = 5) -> list[WarpAssignment]:
    """Arc-length and uniform starts; closed curves add evenly spaced offsets."""
    m = q.n_segments
    arc = polygon_arc_length_params(q)[1:-1]
    uniform = np.linspace(0.0, 1.0, m + 1)[1:-1]
    bases = [arc, uniform]
    if not closed:
        return [WarpAssignment(b) for b in bases]
    offsets = np.arange(n_offsets) / n_offsets
    return [WarpAssignment(b + off, t0=float(off))
            for off in offsets for b in bases]


def random_starts(m: int, closed: bool, count: int) -> list[WarpAssignment]:
    """Seeded random monotone starts used by the `restarts` options."""
    out = []
    for k in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([_RESTART_ENTROPY, k]))
        interior = np.sort(rng.random(m - 1))
        if closed:
            t0 = float(rng.uniform(-0.5, 0.5))
            out.append(WarpAssignment(t0 + interior, t0=t0))
        else:
            out.append(WarpAssignment(interior))
    return out


# ---------------------------------------------------------------------------
# Alternating parity sweeps (both curves polygonal)
# ---------------------------------------------------------------------------

def _sweep_run_open(p_breaks, p_values, q, eps, max_sweeps, start):
    s = q.breaks
    w = np.diff(s)
    m = q.n_segments
    t = _coerce_t_full(start, m, closed=False).copy()
    trace = [_score_from_integrals(
        w, _interval_integrals_step(p_breaks, p_values, q.values, t, False))]
    history = [t[1:-1].copy()]
    converged = m <= 1
    sweeps = 0
    for k in range(1, max_sweeps + 1):
        if m <= 1:
            break
        for j in range(1, m):
            if (j - k) % 2 == 0:
                t[j], _ = _coord_argmax(p_breaks, p_values,
                                        q.values[j - 1], q.values[j],
                                        w[j - 1], w[j], t[j - 1], t[j + 1])
        sweeps = k
        trace.append(_score_from_integrals(
            w, _interval_integrals_step(p_breaks, p_values, q.values, t, False)))
        history.append(t[1:-1].copy())
        if len(history) >= 4:
            if (np.linalg.norm(history[-1] - history[-3]) < eps
                    and np.linalg.norm(history[-2] - history[-4]) < eps):
                converged = True
                break
        if len(history) > 4:
            history.pop(0)
    return WarpAssignment(t[1:-1]), trace, sweeps, converged


def _sweep_run_closed(p_breaks, p_values, q, eps, max_sweeps, start):
    s = q.breaks
    w = np.diff(s)
    m = q.n_segments
    t = _coerce_t_full(start, m, closed=True).copy()
    trace = [_score_from_integrals(
        w, _interval_integrals_step(p_breaks, p_values, q.values, t, True))]
    history = [np.concatenate([[t[0]], t[1:-1]])]
    converged = False
    sweeps = 0
    for k in range(1, max_sweeps + 1):
        for j in range(1, m):
            if (j - k) % 2 == 0:
                t[j], _ = _coord_argmax(p_breaks, p_values,
                                        q.values[j - 1], q.values[j],
                                        w[j - 1], w[j], t[j - 1], t[j + 1],
                                        periodic=True)
        if k % 2 == 0:
            # start-offset update; integrals run over the full wrapped window
            lo = t[m - 1] - 1.0
            hi = t[1]
            t0, _ = _coord_argmax(p_breaks, p_values,
                                  q.values[-1], q.values[0],
                                  w[-1], w[0], lo, hi, periodic=True,
                                  search_lo=-1.0, search_hi=1.0)
            t[0] = t0
            t[m] = t0 + 1.0
        sweeps = k
        trace.append(_score_from_integrals(
            w, _interval_integrals_step(p_breaks, p_values, q.values, t, True)))
        history.append(np.concatenate([[t[0]], t[1:-1]]))
        if len(history) >= 4:
            if (np.linalg.norm(history[-1] - history[-3]) < eps
                    and np.linalg.norm(history[-2] - history[-4]) < eps):
                converged = True
                break
        if len(history) > 4:
            history.pop(0)
    return WarpAssignment(t[1:-1], t0=float(t[0])), trace, sweeps, converged


def _distance_from_score(p_norm_sq, q_norm_sq, score) -> float:
    return float(np.sqrt(max(p_norm_sq + q_norm_sq - 2.0 * score, 0.0)))


def _best_polygon_alignment(p, q, eps, max_sweeps, starts, closed):
    step = _as_step(p)
    if step is None:
        raise ValidationError("both curves must be polygonal here; use "
                              "align_to_spline for a degree-1 model")
    p_breaks, p_values = step
    if p_values.shape[1] != q.dim:
        raise ValidationError("dimension mismatch between model and polygon")
    if starts is None:
        starts = default_starts(q, closed)
    if not starts:
        raise ValidationError("need at least one starting value")
    runner = _sweep_run_closed if closed else _sweep_run_open
    best = None
    for start in starts:
        assignment, trace, sweeps, converged = runner(
            p_breaks, p_values, q, eps, max_sweeps, start)
        if best is None or trace[-1] > best[1][-1]:
            best = (assignment, trace, sweeps, converged)
    assignment, trace, sweeps, converged = best
    distance = _distance_from_score(_model_norm_sq(p), q.l2_norm_sq(), trace[-1])
    return AlignmentResult(assignment, trace[-1], distance, sweeps,
                           restarts_used=len(starts), converged=converged,
                           score_trace=trace)


def align_open_polygons(p, q: PiecewiseConstantSrv, eps: float = 1e-4,
                        max_sweeps: int = 50, starts=None) -> AlignmentResult:
    """Alternating-parity coordinate sweeps for two open polygonal SRVs.

    Runs every start to convergence (change below ``eps`` for two
    consecutive parity phases) and keeps the best final score.
    """
    if eps <= 0.0:
        raise ValidationError("eps must be positive")
    return _best_polygon_alignment(p, q, eps, max_sweeps, starts, closed=False)


def align_closed_polygons(p, q: PiecewiseConstantSrv, eps: float = 1e-4,
                          max_sweeps: int = 50, starts=None) -> AlignmentResult:
    """Parity sweeps for closed polygons with a start-offset update on even
    sweeps; the model is extended periodically."""
    if eps <= 0.0:
        raise ValidationError("eps must be positive")
    if q.n_segments < 2:
        raise ValidationError("a closed polygon needs at least two segments")
    return _best_polygon_alignment(p, q, eps, max_sweeps, starts, closed=True)


# ---------------------------------------------------------------------------
# Projected gradient ascent (model is a continuous degree-1 spline)
# ---------------------------------------------------------------------------

def _pava_nondecreasing(x: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto non-decreasing sequences."""
    n = x.shape[0]
    level = x.astype(float).copy()
    weight = np.ones(n)
    idx = np.zeros(n, dtype=int)
    k = -1
    for i in range(n):
        k += 1
        level[k] = x[i]
        weight[k] = 1.0
        idx[k] = i
        while k > 0 and level[k - 1] > level[k]:
            merged = (level[k - 1] * weight[k - 1] + level[k] * weight[k])
            weight[k - 1] += weight[k]
            level[k - 1] = merged / weight[k - 1]
            k -= 1
    out = np.empty(n)
    start = 0
    for b in range(k + 1):
        end = idx[b + 1] if b < k else n
        out[start:end] = level[b]
        start = end
    return out


def _project_open(vec: np.ndarray) -> np.ndarray:
    if vec.size == 0:
        return vec
    return np.clip(_pava_nondecreasing(vec), 0.0, 1.0)


def _project_closed(vec: np.ndarray) -> np.ndarray:
    t0 = float(np.clip(vec[0], -1.0, 1.0))
    rel = np.clip(_pava_nondecreasing(vec[1:] - vec[0]), 0.0, 1.0)
    return np.concatenate([[t0], t0 + rel])


def _integral_pos_sq_linear(p: SrvSpline, q_vec, a, b, periodic) -> float:
    """Scalar integral of <p, q_vec>_+^2 over [a, b] (p continuous)."""
    if b <= a:
        return 0.0
    if periodic:
        inner = _shifted_breaks(p.knots, a, b)
    else:
        inner = p.knots[(p.knots > a) & (p.knots < b)]
    ev = np.sort(np.concatenate([[a, b], inner]))
    mids = 0.5 * (ev[:-1] + ev[1:])
    base = np.floor(mids) if periodic else np.zeros_like(mids)
    lo = np.minimum(np.maximum(ev[:-1] - base, 0.0), 1.0)
    hi = np.minimum(np.maximum(ev[1:] - base, 0.0), 1.0)
    da = p._eval_fast(lo) @ q_vec
    db = p._eval_fast(hi) @ q_vec
    return float(np.sum(_pos_sq_piece_integrals(da, db, np.diff(ev))))


def _partial_pos_sq(a, b, h, x) -> float:
    """h · ∫_0^x max(a + (b-a)s, 0)^2 ds for a fraction x in [0, 1]."""
    if x <= 0.0:
        return 0.0
    if x > 1.0:
        x = 1.0
    c = b - a
    if a >= 0.0 and b >= 0.0:
        return h * (a * a * x + a * c * x * x + c * c * x**3 / 3.0)
    if a <= 0.0 and b <= 0.0:
        return 0.0
    s0 = a / (a - b)  # sign-change fraction, strictly inside (0, 1)
    if a < 0.0:
        if x <= s0:
            return 0.0
        ax = a + c * x
        return h * ax**3 / (3.0 * c)
    if x >= s0:
        return h * (-(a**3)) / (3.0 * c)
    ax = a + c * x
    return h * (ax**3 - a**3) / (3.0 * c)


class _CoordScore1D:
    """Fast evaluator of the single-coordinate objective against a degree-1
    model: L(t) = sqrt(w_prev·∫_lo^t <p,q_prev>_+²) + sqrt(w_next·∫_t^hi
    <p,q_next>_+²), backed by per-piece prefix tables."""

    def __init__(self, p, q_prev, q_next, w_prev, w_next, lo, hi, periodic):
        if periodic:
            inner = _shifted_breaks(p.knots, lo, hi)
        else:
            inner = p.knots[(p.knots > lo) & (p.knots < hi)]
        ev = np.sort(np.concatenate([[lo, hi], inner]))
        mids = 0.5 * (ev[:-1] + ev[1:])
        base = np.floor(mids) if periodic else np.zeros_like(mids)
        left = np.minimum(np.maximum(ev[:-1] - base, 0.0), 1.0)
        right = np.minimum(np.maximum(ev[1:] - base, 0.0), 1.0)
        pl = p._eval_fast(left)
        pr = p._eval_fast(right)
        self.events = ev
        self.lens = np.diff(ev)
        self.a1 = pl @ q_prev
        self.b1 = pr @ q_prev
        self.a2 = pl @ q_next
        self.b2 = pr @ q_next
        piece1 = _pos_sq_piece_integrals(self.a1, self.b1, self.lens)
        piece2 = _pos_sq_piece_integrals(self.a2, self.b2, self.lens)
        self.cum1 = np.concatenate([[0.0], np.cumsum(piece1)])
        self.cum2 = np.concatenate([[0.0], np.cumsum(piece2)])
        self.total2 = float(self.cum2[-1])
        self.w_prev = w_prev
        self.w_next = w_next

    def __call__(self, t: float) -> float:
        ev = self.events
        i = int(np.searchsorted(ev, t, side="right") - 1)
        i = min(max(i, 0), len(self.lens) - 1)
        h = self.lens[i]
        x = (t - ev[i]) / h if h > 0.0 else 0.0
        g1 = self.cum1[i] + _partial_pos_sq(self.a1[i], self.b1[i], h, x)
        g2 = self.total2 - self.cum2[i] - _partial_pos_sq(
            self.a2[i], self.b2[i], h, x)
        return (np.sqrt(self.w_prev * max(g1, 0.0))
                + np.sqrt(self.w_next * max(g2, 0.0)))

    def maximize(self) -> float:
        """Best breakpoint, refined by golden search in the best bracket."""
        ev = self.events
        vals = [self(t) for t in ev]
        best = int(np.argmax(vals))
        lo = ev[max(best - 1, 0)]
        hi = ev[min(best + 1, len(ev) - 1)]
        t, val = _golden_max(self, lo, hi)
        return t if val > vals[best] else float(ev[best])


def _golden_max(f, lo, hi, tol=1e-10, max_iter=80):
    if hi - lo <= tol:
        mid = 0.5 * (lo + hi)
        return mid, f(mid)
    inv_phi = 0.6180339887498949
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    t = c if fc >= fd else d
    return float(t), float(max(fc, fd))


def _numeric_coordinate_sweep(p, q, t_full, closed, only_js=None,
                              update_t0=True):
    """One bounded scalar maximisation per coordinate; used when the gradient
    is undefined (coincident entries) to separate pooled warp values.

    ``only_js`` restricts the sweep to the given interior indices;
    ``update_t0`` controls the closed-curve start-offset move.
    """
    w = np.diff(q.breaks)
    m = q.n_segments
    t = t_full.copy()
    js = range(1, m) if only_js is None else sorted(only_js)
    for j in js:
        lo, hi = t[j - 1], t[j + 1]
        if hi - lo <= 1e-15:
            continue
        score = _CoordScore1D(p, q.values[j - 1], q.values[j],
                              w[j - 1], w[j], lo, hi, closed)
        t[j] = score.maximize()
    if closed and update_t0:
        # integrals span the wrapped window, the search stays in [-1, 1]
        int_lo, int_hi = t[m - 1] - 1.0, t[1]
        lo, hi = max(int_lo, -1.0), min(int_hi, 1.0)
        if hi - lo > 1e-15:
            score = _CoordScore1D(p, q.values[-1], q.values[0],
                                  w[-1], w[0], int_lo, int_hi, True)
            cands = np.clip(score.events, lo, hi)
            vals = [score(tc) for tc in cands]
            best = int(np.argmax(vals))
            t0, best_val = float(cands[best]), vals[best]
            g_t, g_val = _golden_max(score, max(cands[best] - 0.08, lo),
                                     min(cands[best] + 0.08, hi))
            if g_val > best_val:
                t0 = g_t
            t[0] = t0
            t[m] = t0 + 1.0
    return t


def _tied_indices(t_full, m, closed):
    """Interior indices touching a zero-length warp interval (plus 0 for t0)."""
    gaps = np.diff(t_full)
    js = set()
    for j in range(1, m):
        if gaps[j - 1] == 0.0 or gaps[j] == 0.0:
            js.add(j)
    if closed and (gaps[0] == 0.0 or gaps[-1] == 0.0):
        js.add(0)
    return js


def _ascent_run(p, q, eps, max_iters, start, closed):
    m = q.n_segments
    t_full = _coerce_t_full(start, m, closed)
    vec = np.concatenate([[t_full[0]], t_full[1:-1]]) if closed else t_full[1:-1]
    project = _project_closed if closed else _project_open
    weights = np.diff(q.breaks)

    def score(_p, _q, t_now):
        return _score_from_integrals(
            weights, _interval_integrals_linear(p, q.values, t_now, closed))

    def expand(v):
        if closed:
            return np.concatenate([v, [v[0] + 1.0]])
        return np.concatenate([[0.0], v, [1.0]])

    repair_budget = 2  # tie separation is a rescue, not the main engine

    def repair_ties(v, phi):
        """Numeric coordinate moves on tied entries only; None if no gain."""
        t_now = expand(v)
        js = _tied_indices(t_now, m, closed)
        if not js:
            return None
        t_new = _numeric_coordinate_sweep(p, q, t_now, closed,
                                          only_js=sorted(js - {0}),
                                          update_t0=0 in js)
        phi_new = score(p, q, t_new)
        if phi_new > phi + 1e-12 * max(1.0, abs(phi)):
            v_new = (np.concatenate([[t_new[0]], t_new[1:-1]]) if closed
                     else t_new[1:-1])
            return v_new, phi_new
        return None

    phi = score(p, q, expand(vec))
    trace = [phi]
    alpha = 0.1
    converged = vec.size == 0
    iters = 0
    for it in range(1, max_iters + 1):
        iters = it
        grad = _gradient_convention(p, q, expand(vec), closed)
        if np.linalg.norm(grad) < eps:
            repaired = repair_ties(vec, phi) if repair_budget > 0 else None
            if repaired is None:
                converged = True
                break
            repair_budget -= 1
            vec, phi = repaired
            trace.append(phi)
            continue
        moved = False
        while alpha > 1e-14:
            cand = project(vec + alpha * grad)
            phi_c = score(p, q, expand(cand))
            if phi_c > phi + 1e-15 * max(1.0, abs(phi)):
                step = float(np.linalg.norm(cand - vec))
                vec, phi = cand, phi_c
                trace.append(phi)
                alpha = min(alpha * 2.0, 4.0)
                moved = True
                if step < eps:
                    converged = True
                break
            alpha *= 0.5
        if not moved:
            repaired = repair_ties(vec, phi) if repair_budget > 0 else None
            if repaired is None:
                converged = True  # no ascent direction left: local maximum
                break
            repair_budget -= 1
            vec, phi = repaired
            trace.append(phi)
            alpha = max(alpha, 1e-3)
            continue
        if converged:
            break
    assignment = (WarpAssignment(vec[1:], t0=float(vec[0])) if closed
                  else WarpAssignment(vec))
    return assignment, trace, iters, converged


def align_to_spline(p, q: PiecewiseConstantSrv, closed: bool = False,
                    eps: float = 1e-4, max_iters: int = 200,
                    starts=None) -> AlignmentResult:
    """Align a polygon to a spline model.

    Degree-0 models delegate to the coordinate-sweep algorithms; degree-1
    models use projected gradient ascent (isotonic projection onto the
    monotone warp cone) with backtracking line search, best over all starts.
    """
    if _as_step(p) is not None:
        if closed:
            return align_closed_polygons(p, q, eps=eps, max_sweeps=max_iters,
                                         starts=starts)
        return align_open_polygons(p, q, eps=eps, max_sweeps=max_iters,
                                   starts=starts)
    if p.dim != q.dim:
        raise ValidationError("dimension mismatch between model and polygon")
    if starts is None:
        starts = default_starts(q, closed)
    best = None
    for start in starts:
        assignment, trace, iters, converged = _ascent_run(
            p, q, eps, max_iters, start, closed)
        if best is None or trace[-1] > best[1][-1]:
            best = (assignment, trace, iters, converged)
    assignment, trace, iters, converged = best
    distance = _distance_from_score(p.l2_norm_sq(), q.l2_norm_sq(), trace[-1])
    return AlignmentResult(assignment, trace[-1], distance, iters,
                           restarts_used=len(starts), converged=converged,
                           score_trace=trace)


# ---------------------------------------------------------------------------
# Curve-level API
# ---------------------------------------------------------------------------

def align_curves(c1: DiscreteCurve, c2: DiscreteCurve, eps: float = 1e-4,
                 max_sweeps: int = 50, restarts: int = 0,
                 polygon: str = "auto") -> AlignmentResult:
    """Elastic alignment of two observed curves.

    One curve takes the warped-polygon role (``polygon``: "auto" picks the
    one with fewer vertices, ties to the second); the other acts as the
    fixed model.  ``restarts`` adds seeded random starts on top of the
    deterministic defaults.
    """
    if c1.dim != c2.dim:
        raise ValidationError("curves must share their ambient dimension")
    if c1.closed != c2.closed:
        raise ValidationError("cannot align an open curve with a closed one")
    if polygon == "auto":
        polygon = "first" if c1.points.shape[0] < c2.points.shape[0] else "second"
    if polygon not in ("first", "second"):
        raise ValidationError("polygon must be 'auto', 'first' or 'second'")
    model_curve, poly_curve = ((c2, c1) if polygon == "first" else (c1, c2))
    p = srv_transform(model_curve)
    q = srv_transform(poly_curve)
    starts = default_starts(q, c1.closed)
    if restarts > 0:
        starts = starts + random_starts(q.n_segments, c1.closed, restarts)
    if c1.closed:
        result = align_closed_polygons(p, q, eps=eps, max_sweeps=max_sweeps,
                                       starts=starts)
    else:
        result = align_open_polygons(p, q, eps=eps, max_sweeps=max_sweeps,
                                     starts=starts)
    result.diagnostics["polygon_role"] = polygon
    return result


def elastic_distance(c1: DiscreteCurve, c2: DiscreteCurve, eps: float = 1e-4,
                     max_sweeps: int = 50, restarts: int = 0,
                     polygon: str = "auto") -> float:
    """Parametrisation-invariant distance between two observed curves."""
    return align_curves(c1, c2, eps=eps, max_sweeps=max_sweeps,
                        restarts=restarts, polygon=polygon).distance


def apply_alignment(curve: DiscreteCurve, result) -> DiscreteCurve:
    """Re-parametrise the warped polygon by its optimal breakpoints.

    Degenerate segments (zero warp gap) collapse onto their left endpoint;
    closed curves are rotated so the new start vertex has parameter 0.
    """
    assignment = result.assignment if isinstance(result, AlignmentResult) else result
    if assignment.m != curve.n_segments:
        raise ValidationError("alignment was computed for a different polygon")
    t_full = assignment.full()
    if not assignment.closed:
        if curve.closed:
            raise ValidationError("open alignment applied to a closed curve")
        keep = np.concatenate([[True], np.diff(t_full) > 0.0])
        return DiscreteCurve(curve.points[keep], t_full[keep], closed=False)
    if not curve.closed:
        raise ValidationError("closed alignment applied to an open curve")
    m = curve.n_segments
    corners = curve.points[:m]
    tau = t_full[:m] - np.floor(t_full[:m])
    order = np.roll(np.arange(m), -int(np.argmin(tau)))
    params = tau[order] - tau[order[0]]
    points = corners[order]
    keep = np.concatenate([[True], np.diff(params) > 0.0])
    points, params = points[keep], params[keep]
    points = np.vstack([points, points[0]])
    params = np.concatenate([params, [1.0]])
    return DiscreteCurve(points, params, closed=True)


def warping_derivative(p, q: PiecewiseConstantSrv, assignment):
    """Optimal warp slope as a step function (breakpoints, levels).

    On interval j the maximising warp has slope
    (s_{j+1}-s_j) * <p(t), q_j>_+^2 / int_{t_j}^{t_{j+1}} <p, q_j>_+^2;
    intervals with vanishing integral get slope 0 (the limit warp jumps).
    Requires a piecewise-constant model.
    """
    step = _as_step(p)
    if step is None:
        raise ValidationError("warp derivative is piecewise constant only for "
                              "piecewise-constant models")
    p_breaks, p_values = step
    closed = assignment.closed if isinstance(assignment, WarpAssignment) else False
    t_full = _coerce_t_full(assignment, q.n_segments, closed)
    w = np.diff(q.breaks)
    integrals = _interval_integrals_step(p_breaks, p_values, q.values,
                                         t_full, closed)
    lo, hi = t_full[0], t_full[-1]
    if closed:
        inner = _shifted_breaks(p_breaks, lo, hi)
    else:
        inner = p_breaks[(p_breaks > lo) & (p_breaks < hi)]
    events = np.unique(np.concatenate([t_full, inner]))
    mids = 0.5 * (events[:-1] + events[1:])
    qidx = np.clip(np.searchsorted(t_full, mids, side="right") - 1,
                   0, q.n_segments - 1)
    pos = mids - np.floor(mids) if closed else mids
    pidx = np.clip(np.searchsorted(p_breaks, pos, side="right") - 1,
                   0, p_values.shape[0] - 1)
    dots = np.square(np.clip(
        np.einsum("ij,ij->i", p_values[pidx], q.values[qidx]), 0.0, None))
    denom = integrals[qidx]
    levels = np.where(denom > 0.0, w[qidx] * dots / np.where(denom > 0, denom, 1.0), 0.0)
    return events, levels
