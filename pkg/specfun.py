"""
Special functions for the moment computations.

log(1+erf) kernels and the Gaussian wedge integrals P and Q. The inner z1
integral of P and Q is collapsed to a normal CDF, so only a smooth 1-D
integral over z2 is handed to adaptive quadrature, and the integral is
carried in log space so deep tails neither underflow nor lose precision.
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy import integrate, special

from errors import ParameterError, QuadratureError, RangeError

logger = logging.getLogger(__name__)

LOG_PI = math.log(math.pi)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
# largest x with exp(x) finite in double precision
MAX_LOG_DOUBLE = math.log(np.finfo(float).max)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for the z2 quadrature."""

    abs_tol: float = 1e-11
    rel_tol: float = 1e-10
    max_subdivisions: int = 200
    # Gaussian mass beyond 12 sigma is below 1e-31
    tail_cutoff: float = 12.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ParameterError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ParameterError("max_subdivisions must be at least 1")
        if not self.tail_cutoff > 0:
            raise ParameterError("tail_cutoff must be positive")

    def scaled(self, tol_scale: float) -> "QuadratureSpec":
        """Return a copy with both tolerances multiplied by tol_scale."""
        if not tol_scale > 0:
            raise ParameterError("tolerance scale must be positive")
        return replace(self, abs_tol=self.abs_tol * tol_scale, rel_tol=self.rel_tol * tol_scale)


DEFAULT_QUAD = QuadratureSpec()


def log1perf(y: ArrayLike) -> ArrayLike:
    """log(1 + erf(y)) = log(erfc(-y)), finite for all finite y."""
    if np.ndim(y) == 0:
        y = float(y)
        if y >= 0.0:
            return math.log1p(math.erf(y))
        # erfc(-y) = erfcx(-y) * exp(-y^2) keeps the left tail representable
        return math.log(special.erfcx(-y)) - y * y

    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y >= 0.0
    out[pos] = np.log1p(special.erf(y[pos]))
    neg = ~pos
    out[neg] = np.log(special.erfcx(-y[neg])) - y[neg] ** 2
    return out


def dlog1perf(y: ArrayLike) -> ArrayLike:
    """Derivative of log1perf: (2/sqrt(pi)) exp(-y^2) / (1 + erf(y))."""
    with np.errstate(over="ignore"):
        value = TWO_OVER_SQRT_PI / special.erfcx(-np.asarray(y, dtype=float))
    if np.ndim(value) == 0:
        return float(value)
    return value


def _check_args(theta: float, a1: float, a2: float):
    if not (math.isfinite(theta) and math.isfinite(a1) and math.isfinite(a2)):
        raise ParameterError(f"non-finite argument (theta={theta}, a1={a1}, a2={a2})")
    if a1 < 0:
        raise ParameterError(f"a1 must be non-negative, got {a1}")


def log_qfun(theta: float, a1: float, a2: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """log Q(theta, a1, a2) from quadrature of the bounded, max-shifted integrand."""
    _check_args(theta, a1, a2)
    c = theta + a2

    # the wedge degenerates to a half plane: Q = pi * Phi(c)
    if a1 == 0.0:
        return LOG_PI + float(special.log_ndtr(c))

    # Q = sqrt(2 pi) * int_0^inf exp(-z^2/2) Phi(c - a1 z) dz; the log integrand
    # is decreasing in z so its maximum sits at z = 0
    log_peak = float(special.log_ndtr(c))

    def scaled_integrand(z: float) -> float:
        return math.exp(-0.5 * z * z + float(special.log_ndtr(c - a1 * z)) - log_peak)

    upper = quad.tail_cutoff
    hints = {c / a1, (c + 4.0) / a1, 1.0 / (1.0 + a1 * abs(c))}
    points = sorted(p for p in hints if 0.0 < p < upper)

    result = integrate.quad(
        scaled_integrand, 0.0, upper,
        epsabs=quad.abs_tol, epsrel=quad.rel_tol,
        limit=quad.max_subdivisions,
        points=points or None,
        full_output=1,
    )
    value, abserr = result[0], result[1]
    if len(result) > 3 and abserr > 10.0 * max(quad.abs_tol, quad.rel_tol * abs(value)):
        raise QuadratureError(
            f"Q quadrature failed at theta={theta}, a1={a1}, a2={a2}: {result[3]}",
            diagnostics={"value": value, "abserr": abserr},
        )
    if value <= 0.0:
        raise QuadratureError(f"non-positive Q integral at theta={theta}, a1={a1}, a2={a2}")

    return LOG_SQRT_2PI + log_peak + math.log(value)


def log_pfun(theta: float, a1: float, a2: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """log P(theta, a1, a2) = theta^2/2 - log(pi) + log Q."""
    return 0.5 * theta * theta - LOG_PI + log_qfun(theta, a1, a2, quad)


def pfun(theta: float, a1: float, a2: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Linear-scale P; for testing only, the solvers work with log_pfun."""
    log_p = log_pfun(theta, a1, a2, quad)
    if log_p > MAX_LOG_DOUBLE:
        raise RangeError(f"P({theta}, {a1}, {a2}) overflows (log P = {log_p:.6g})")
    return math.exp(log_p)


def qfun(theta: float, a1: float, a2: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Linear-scale Q, the wedge integral without the exp(theta^2/2)/pi prefactor."""
    return math.exp(log_qfun(theta, a1, a2, quad))


def log_rfun(theta: float, a1: float, a2: float) -> float:
    """log of int_0^inf exp(-z^2/2 - (a1 z - theta - a2)^2/2) dz, in closed form."""
    _check_args(theta, a1, a2)
    c = theta + a2
    spread = 1.0 + a1 * a1
    return (
        -0.5 * c * c / spread
        + 0.5 * math.log(2.0 * math.pi / spread)
        + float(special.log_ndtr(a1 * c / math.sqrt(spread)))
    )


def theta_stationarity(theta: float, a1: float, a2: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """d/dtheta log P, i.e. the consistency equation theta*Q + R = 0 divided by Q."""
    return theta + math.exp(log_rfun(theta, a1, a2) - log_qfun(theta, a1, a2, quad))
