"""Discrete curves, their square-root-velocity transform and the back-transform.

A discretely observed curve is treated as a polygon with constant-speed
parametrisation between its corners.  On that convention the SRV transform
q = dβ/dt / sqrt(||dβ/dt||) is piecewise constant, one vector per segment,
and integrating q·||q|| recovers the polygon exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CurveCsvError, ValidationError

logger = logging.getLogger(__name__)

# Chord shorter than this fraction of the bounding-box diagonal counts as a
# duplicate observation (zero-length segments would give q_j = 0 and a
# degenerate warping problem).
DUPLICATE_RTOL = 1e-12

# Gauss-Legendre rule used per knot interval when back-transforming
# continuous (degree-1) SRV splines; the integrand is smooth per interval.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class DiscreteCurve:
    """Ordered observed points of one curve.

    points : (m+1, d) array of vertices; consecutive vertices are distinct.
    params : (m+1,) strictly increasing, params[0] = 0 and params[-1] = 1.
    closed : whether the curve is closed; if so the closing vertex is stored
             explicitly (points[0] == points[-1]).
    """

    points: np.ndarray
    params: np.ndarray
    closed: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        prm = np.asarray(self.params, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
            raise ValidationError("curve needs at least two points in R^d")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("curve points must be finite")
        if prm.shape != (pts.shape[0],):
            raise ValidationError("params length must match point count")
        if prm[0] != 0.0 or prm[-1] != 1.0:
            raise ValidationError("params must start at 0 and end at 1")
        if np.any(np.diff(prm) <= 0):
            raise ValidationError("params must be strictly increasing")
        if self.closed and not np.array_equal(pts[0], pts[-1]):
            raise ValidationError("closed curve must store its closing vertex")
        pts.setflags(write=False)
        prm.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "params", prm)

    @property
    def n_segments(self) -> int:
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def chord_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def length(self) -> float:
        return float(self.chord_lengths().sum())

    def arc_length_params(self) -> np.ndarray:
        """Relative arc-length position of every vertex."""
        return arc_length_params(self.points)

    def translated(self, offset: Sequence[float]) -> "DiscreteCurve":
        return DiscreteCurve(self.points + np.asarray(offset, dtype=float),
                             self.params, self.closed)


@dataclass(frozen=True)
class PiecewiseConstantSrv:
    """SRV transform of a constant-speed polygon.

    breaks : (m+1,) parameter breakpoints, 0 = s_0 < ... < s_m = 1.
    values : (m, d) constant SRV vector per segment.
    """

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        brk = np.asarray(self.breaks, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if brk.ndim != 1 or brk.shape[0] < 2:
            raise ValidationError("breaks must hold at least two entries")
        if brk[0] != 0.0 or brk[-1] != 1.0 or np.any(np.diff(brk) <= 0):
            raise ValidationError("breaks must increase strictly from 0 to 1")
        if val.ndim != 2 or val.shape[0] != brk.shape[0] - 1:
            raise ValidationError("values must hold one vector per interval")
        if not np.all(np.isfinite(val)):
            raise ValidationError("SRV values must be finite")
        brk.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "breaks", brk)
        object.__setattr__(self, "values", val)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_segments(self) -> int:
        return self.values.shape[0]

    def l2_norm_sq(self) -> float:
        """Integral of ||q||^2; equals the polygon's length."""
        seg = np.diff(self.breaks)
        return float(np.sum(seg * np.sum(self.values**2, axis=1)))

    def evaluate(self, t) -> np.ndarray:
        """Right-continuous step evaluation (value at 1 from the last piece)."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, t, side="right") - 1,
                      0, self.n_segments - 1)
        return self.values[idx]


def arc_length_params(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = chords.sum()
    if total <= 0.0:
        raise ValidationError("total chord length is zero")
    params = np.concatenate([[0.0], np.cumsum(chords)]) / total
    params[-1] = 1.0
    return params


def ingest_curve(raw_points, params=None, closed: bool = False) -> DiscreteCurve:
    """Validate raw observations and build a :class:`DiscreteCurve`.

    Consecutive near-duplicate points (chord below ``DUPLICATE_RTOL`` times
    the bounding-box diagonal) are dropped and counted in a log warning.
    Missing params are assigned by relative arc length.  For closed curves
    whose first and last point differ, the first point is appended as the
    closing vertex (only possible when params are assigned automatically).
    """
    pts = np.asarray(raw_points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValidationError("need at least two observed points")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("observed points must be finite")
    prm = None
    if params is not None:
        prm = np.asarray(params, dtype=float)
        if prm.shape != (pts.shape[0],):
            raise ValidationError("params length must match point count")
        if np.any(np.diff(prm) <= 0):
            raise ValidationError("params must be strictly increasing")
        if prm[0] != 0.0 or prm[-1] != 1.0:
            raise ValidationError("params must start at 0 and end at 1")

    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    tol = DUPLICATE_RTOL * diag

    keep = [0]
    for i in range(1, pts.shape[0]):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) <= tol:
            continue
        keep.append(i)
    # keep the final vertex so an explicit endpoint param survives
    if keep[-1] != pts.shape[0] - 1:
        keep[-1] = pts.shape[0] - 1
    dropped = pts.shape[0] - len(keep)
    if dropped:
        logger.warning("ingest_curve: dropped %d near-duplicate point(s)", dropped)
    pts = pts[keep]
    if prm is not None:
        prm = prm[keep]
    if pts.shape[0] < 2:
        raise ValidationError("fewer than 2 distinct points after duplicate removal")

    if closed and not np.array_equal(pts[0], pts[-1]):
        if np.linalg.norm(pts[-1] - pts[0]) <= tol:
            pts = pts.copy()
            pts[-1] = pts[0]
        elif prm is not None:
            raise ValidationError(
                "closed curve with explicit params must end at its start point")
        else:
            pts = np.vstack([pts, pts[0]])

    if prm is None:
        prm = arc_length_params(pts)
    return DiscreteCurve(pts, prm, closed)


def srv_transform(curve: DiscreteCurve) -> PiecewiseConstantSrv:
    """SRV transform of the constant-speed polygon through the curve's vertices.

    On segment j the derivative is Δβ_j/Δs_j, so the SRV value is
    Δβ_j / sqrt(||Δβ_j||·Δs_j).
    """
    delta = np.diff(curve.points, axis=0)
    ds = np.diff(curve.params)
    norms = np.linalg.norm(delta, axis=1)
    if np.any(norms <= 0.0):
        raise ValidationError("curve has a zero-length segment")
    values = delta / np.sqrt(norms * ds)[:, None]
    return PiecewiseConstantSrv(curve.params, values)


def srv_back_transform(srv, start, grid) -> DiscreteCurve:
    """Integrate q·||q|| from an SRV curve back to points on a grid.

    ``srv`` is a :class:`PiecewiseConstantSrv` or an ``SrvSpline`` of degree
    0 or 1.  The integral is exact on piecewise-constant pieces; degree-1
    splines use a fixed 5-point Gauss-Legendre rule per knot interval.
    The grid must increase strictly from 0 to 1.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("grid must be a non-empty 1-D sequence")
    if grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must increase strictly from 0 to 1")
    start = np.asarray(start, dtype=float)

    breaks, values = _speed_profile(srv)
    if values is not None:
        cum = _cumulative_step(breaks, values, grid)
    else:
        cum = _cumulative_gauss(srv, grid)
    points = start[None, :] + cum
    return DiscreteCurve(points, grid, closed=False)


def _speed_profile(srv):
    """(breaks, q·||q|| per piece) for step-like SRVs, (None, None) otherwise."""
    if isinstance(srv, PiecewiseConstantSrv):
        breaks, vals = srv.breaks, srv.values
    elif getattr(srv, "degree", None) == 0:
        breaks, vals = srv.knots, srv.coefficients
    else:
        return None, None
    speed = vals * np.linalg.norm(vals, axis=1, keepdims=True)
    return breaks, speed


def _cumulative_step(breaks, speed, grid):
    seg = np.diff(breaks)
    cum_at_breaks = np.vstack([np.zeros((1, speed.shape[1])),
                               np.cumsum(speed * seg[:, None], axis=0)])
    idx = np.clip(np.searchsorted(breaks, grid, side="right") - 1,
                  0, speed.shape[0] - 1)
    return cum_at_breaks[idx] + (grid - breaks[idx])[:, None] * speed[idx]


def _cumulative_gauss(spline, grid):
    # split at grid points and knots so every piece is smooth
    events = np.unique(np.concatenate([grid, spline.knots]))
    lo, hi = events[:-1], events[1:]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    # (pieces, nodes) parameter matrix, evaluated in one pass
    ts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = spline.evaluate(ts.ravel())
    speed = vals * np.linalg.norm(vals, axis=1, keepdims=True)
    speed = speed.reshape(len(mid), len(_GL_NODES), -1)
    piece = (speed * _GL_WEIGHTS[None, :, None]).sum(axis=1) * half[:, None]
    cum = np.vstack([np.zeros((1, piece.shape[1])), np.cumsum(piece, axis=0)])
    pos = np.searchsorted(events, grid)
    return cum[pos]


# ---------------------------------------------------------------------------
# Shared CSV long format: header ``curve_id,t,x1,...,xd``; rows grouped by
# curve_id and ordered by t within a curve; the t column may be empty, in
# which case relative arc length is assigned on ingestion.
# ---------------------------------------------------------------------------

def read_curves_csv(path, closed: bool = False) -> dict[str, DiscreteCurve]:
    """Read the shared long-format CSV into an ordered id -> curve mapping."""
    path = Path(path)
    groups: dict[str, dict] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CurveCsvError("empty file", row=1) from None
        if len(header) < 3 or header[0] != "curve_id" or header[1] != "t":
            raise CurveCsvError(
                "header must be curve_id,t,x1,...,xd", row=1)
        dim = len(header) - 2
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise CurveCsvError(
                    f"expected {dim + 2} fields, found {len(row)}", row=row_no)
            cid = row[0]
            t_raw = row[1].strip()
            try:
                t_val = float(t_raw) if t_raw else None
            except ValueError:
                raise CurveCsvError(
                    f"malformed t value {row[1]!r}", row=row_no) from None
            try:
                coords = [float(v) for v in row[2:]]
            except ValueError:
                raise CurveCsvError(
                    f"malformed coordinate in {row[2:]!r}", row=row_no) from None
            g = groups.setdefault(cid, {"t": [], "x": [], "first_row": row_no})
            g["t"].append(t_val)
            g["x"].append(coords)

    curves: dict[str, DiscreteCurve] = {}
    for cid, g in groups.items():
        have_t = [t is not None for t in g["t"]]
        if any(have_t) and not all(have_t):
            raise CurveCsvError(
                f"curve {cid!r} mixes empty and non-empty t values",
                row=g["first_row"])
        params = np.array(g["t"], dtype=float) if all(have_t) else None
        try:
            curves[cid] = ingest_curve(np.array(g["x"]), params, closed=closed)
        except ValidationError as exc:
            raise CurveCsvError(f"curve {cid!r}: {exc}",
                                row=g["first_row"]) from exc
    if not curves:
        raise CurveCsvError("no curves in file", row=2)
    return curves


def write_curves_csv(path, curves: dict[str, DiscreteCurve] | Sequence,
                     with_params: bool = True) -> None:
    """Write curves in the shared long format with round-trip float precision."""
    if isinstance(curves, dict):
        items = list(curves.items())
    else:
        items = list(curves)
    dim = items[0][1].dim
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["curve_id", "t"] + [f"x{i + 1}" for i in range(dim)])
        for cid, curve in items:
            for t, point in zip(curve.params, curve.points):
                t_field = repr(float(t)) if with_params else ""
                writer.writerow([cid, t_field] + [repr(float(v)) for v in point])
