"""Elastic distances and spline Fréchet means for sparsely observed curves.

Observed curves are treated as constant-speed polygons; their square-root-
velocity transforms are piecewise constant, which turns the warping problem
into a finite-dimensional maximisation solved by coordinate sweeps or
projected gradient ascent.  Means over samples of curves are modelled as
degree-0/1 splines on SRV level and fitted by alternating alignment and
weighted least squares, with a penalty method enforcing closedness.
"""

from .alignment import (
    AlignmentResult,
    WarpAssignment,
    align_closed_polygons,
    align_curves,
    align_open_polygons,
    align_to_spline,
    apply_alignment,
    elastic_distance,
    maximize_coordinate,
    warp_score_closed,
    warp_score_gradient,
    warp_score_open,
    warping_derivative,
)
from .analysis import (
    ClusterResult,
    DistanceMatrix,
    ThresholdClassifier,
    average_linkage,
    distance_matrix,
    fit_threshold,
    loo_cv,
)
from .curves import (
    DiscreteCurve,
    PiecewiseConstantSrv,
    ingest_curve,
    read_curves_csv,
    srv_back_transform,
    srv_transform,
    write_curves_csv,
)
from .errors import (
    CurveCsvError,
    GradientUndefinedError,
    RankDeficientError,
    ValidationError,
)
from .mean import (
    ElasticMeanResult,
    elastic_mean_closed,
    elastic_mean_open,
    initial_mean,
    mvt_sample,
)
from .simulate import (
    SimulationConfig,
    coefficient_rmse,
    heart_template,
    open_template,
    sample_curves,
)
from .splines import (
    SrvSpline,
    WeightedSrvSample,
    closedness_gap_jacobian,
    closedness_penalty_gradient,
    fit_least_squares,
    uniform_knots,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "ClusterResult",
    "CurveCsvError",
    "DiscreteCurve",
    "DistanceMatrix",
    "ElasticMeanResult",
    "GradientUndefinedError",
    "PiecewiseConstantSrv",
    "RankDeficientError",
    "SimulationConfig",
    "SrvSpline",
    "ThresholdClassifier",
    "ValidationError",
    "WarpAssignment",
    "WeightedSrvSample",
    "align_closed_polygons",
    "align_curves",
    "align_open_polygons",
    "align_to_spline",
    "apply_alignment",
    "average_linkage",
    "closedness_gap_jacobian",
    "closedness_penalty_gradient",
    "coefficient_rmse",
    "distance_matrix",
    "elastic_distance",
    "elastic_mean_closed",
    "elastic_mean_open",
    "fit_least_squares",
    "fit_threshold",
    "heart_template",
    "ingest_curve",
    "initial_mean",
    "loo_cv",
    "maximize_coordinate",
    "mvt_sample",
    "open_template",
    "read_curves_csv",
    "sample_curves",
    "srv_back_transform",
    "srv_transform",
    "uniform_knots",
    "warp_score_closed",
    "warp_score_gradient",
    "warp_score_open",
    "warping_derivative",
    "write_curves_csv",
]
