"""Special functions, quadrature, random streams and the small LM solver."""

from .optimize import LsqResult, least_squares_2
from .quadrature import DEFAULT_SPEC, QuadratureSpec, QuadResult, gauss_legendre, integrate
from .random import RngStream
from .special import bessel_i_scaled, marcum_p1, marcum_q1

__all__ = [
    "bessel_i_scaled",
    "marcum_q1",
    "marcum_p1",
    "QuadratureSpec",
    "QuadResult",
    "DEFAULT_SPEC",
    "integrate",
    "gauss_legendre",
    "RngStream",
    "LsqResult",
    "least_squares_2",
]
