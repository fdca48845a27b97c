"""Locally sparse function-on-function regression with an overlapping group-Lasso penalty."""

from .bspline import BSplineBasis, Grid, eval_basis, grid_from_points, make_basis, make_grid
from .groups import GroupStructure, RectangleSet, block_structure, group_norms, zero_rectangles
from .model import (
    DesignProblem,
    FunctionalSample,
    TensorKernel,
    build_ar_pairs,
    build_design,
    center,
    logh_inverse,
    logh_transform,
    predict,
)
from .solver import (
    FitResult,
    LambdaPath,
    SolverConfig,
    SolverError,
    cross_validate,
    fit,
    fit_path,
    lambda_max,
    select_lambda,
)

__version__ = "0.1.0"
