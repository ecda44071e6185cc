"""Rational SPDE approximations of fractional Whittle-Matern Gaussian fields."""
__version__ = "0.1.0"

from .mesh import Mesh, build_interval_mesh, build_rect_mesh, make_projector  # noqa: E402
from .fem import OperatorSpec, assemble  # noqa: E402
from .ratapprox import brasil, chebyshev_pade, rational_coefficients, to_partial_fractions  # noqa: E402
from .gmrf import FieldParams, build_model  # noqa: E402
from .inference import ObservationSet, fit, loglik, posterior, predict  # noqa: E402

__all__ = [
    "Mesh", "build_interval_mesh", "build_rect_mesh", "make_projector",
    "OperatorSpec", "assemble",
    "brasil", "chebyshev_pade", "rational_coefficients", "to_partial_fractions",
    "FieldParams", "build_model",
    "ObservationSet", "fit", "loglik", "posterior", "predict",
]
