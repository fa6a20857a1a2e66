"""Infinite-support B-splines, cone programming, and volatility engines."""

import os as _os

# honor the worker cap before any numerical library spins up its pools
_cap = _os.environ.get("VOLSPLINE_THREADS")
if _cap:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _cap)

from volspline.bspline import (
    BasisSpec,
    CompiledBasis,
    KnotVector,
    PiecewisePoly,
    Spline,
    SplineError,
    compile_basis,
    derivative_decomposition,
    design_matrix,
    eval_basis,
    eval_spline,
    gram_matrix,
    make_basis,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "CompiledBasis",
    "KnotVector",
    "PiecewisePoly",
    "Spline",
    "SplineError",
    "compile_basis",
    "derivative_decomposition",
    "design_matrix",
    "eval_basis",
    "eval_spline",
    "gram_matrix",
    "make_basis",
    "__version__",
]
