"""
Overlap-resolved second-moment entropy density W(x, omega, h).

For a pair of configurations with overlap omega the density is the entropy of
the overlap classes plus sup_t G(t), where G(t) is the infimum over two
independent tilts theta1, theta2 of the Gaussian wedge log-partition terms.
E_cor(h) is the lowest energy at which the uncorrelated pair (omega = 0) still
dominates; h_cor is where it meets E_min(h).
"""

import math
import logging
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from errors import DomainError, NotFoundError, ParameterError, SolverError
from firstmoment import SQRT2, energy_roots, h_star
from specfun import DEFAULT_QUAD, QuadratureSpec, log_pfun, theta_stationarity

logger = logging.getLogger(__name__)

OMEGA_CLAMP = 1e-3

NEWTON_STEP = 1e-6
NEWTON_MAX_ITER = 30
NEWTON_MAX_HALVINGS = 20
RESIDUAL_TOL = 1e-7

ECOR_THRESHOLD = 1e-7
# bisection tolerance on E for e_cor and on h for h_cor
ECOR_XTOL = 5e-4
OMEGA_STEP = 0.01
E_BRACKET = (-2.0, 0.0)


class SaddleMethod(str, Enum):
    MAX_MIN = "max_min"
    NEWTON = "newton"


@dataclass(frozen=True)
class OverlapQuery:
    """A point (x, omega, h); omega beyond 1 - OMEGA_CLAMP is clamped on construction."""

    x: float
    omega: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.omega, self.h)):
            raise ParameterError(f"non-finite overlap query {self}")
        if abs(self.omega) > 1.0:
            raise ParameterError(f"overlap must lie in [-1, 1], got {self.omega}")
        limit = 1.0 - OMEGA_CLAMP
        if abs(self.omega) > limit:
            clamped = math.copysign(limit, self.omega)
            logger.debug(f"clamping overlap {self.omega} to {clamped}")
            object.__setattr__(self, "omega", clamped)

    @property
    def beta(self) -> float:
        return (self.omega + 1.0) / 4.0

    def t_range(self) -> Tuple[float, float]:
        """Admissible t-interval; both shifted wedge arguments are positive inside it."""
        beta = self.beta
        return self.h * beta / SQRT2, self.x - self.h * (0.5 - beta) / SQRT2


@dataclass
class SecondMomentSaddle:
    t_star: float
    theta1_star: float
    theta2_star: float
    value: float
    residuals: Tuple[float, float, float]
    method: str = SaddleMethod.MAX_MIN.value
    at_boundary: bool = False

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class CorrelationScan:
    """Outcome of one ω-scan at fixed energy."""

    energy: float
    w_zero: float
    w_best: float
    omega_best: float

    @property
    def flipped(self) -> bool:
        return self.w_best - self.w_zero > ECOR_THRESHOLD


def _wedge_arguments(t: float, q: OverlapQuery) -> Tuple[float, float, float, float]:
    beta = q.beta
    gamma = 0.5 - beta
    a11 = math.sqrt(gamma / beta)
    a21 = t / beta ** 1.5 - q.h / math.sqrt(2.0 * beta)
    a12 = math.sqrt(beta / gamma)
    a22 = (q.x - t) / gamma ** 1.5 - q.h / math.sqrt(1.0 - 2.0 * beta)
    return a11, a21, a12, a22


def _theta_min(a1: float, a2: float, quad: QuadratureSpec) -> float:
    """Unique minimizer of the convex map theta -> log P(theta, a1, a2)."""
    if a2 <= 0.0:
        raise DomainError(f"log P is unbounded below for a2={a2} <= 0")
    hi = 0.0
    lo = -1.0
    # the stationarity function is positive at theta = 0 and tends to -a2 as theta -> -inf
    while theta_stationarity(lo, a1, a2, quad) > 0.0:
        hi = lo
        lo *= 2.0
        if lo < -1e6:
            raise DomainError(f"theta minimizer escapes to -inf (a1={a1}, a2={a2})")
    return optimize.brentq(theta_stationarity, lo, hi, args=(a1, a2, quad), xtol=1e-13, maxiter=200)


def inner_min(t: float, q: OverlapQuery, quad: QuadratureSpec = DEFAULT_QUAD) -> Tuple[float, float, float]:
    """(theta1*, theta2*, G(t)): both tilts minimized independently at fixed t."""
    t_lo, t_hi = q.t_range()
    if not t_lo < t < t_hi:
        raise DomainError(f"t={t} outside admissible range ({t_lo}, {t_hi})")
    beta = q.beta
    gamma = 0.5 - beta
    a11, a21, a12, a22 = _wedge_arguments(t, q)
    theta1 = _theta_min(a11, a21, quad)
    theta2 = _theta_min(a12, a22, quad)
    G = (
        -t * t / (2.0 * beta * beta)
        - (q.x - t) ** 2 / (2.0 * gamma * gamma)
        + 2.0 * beta * log_pfun(theta1, a11, a21, quad)
        + 2.0 * gamma * log_pfun(theta2, a12, a22, quad)
    )
    return theta1, theta2, G


def overlap_entropy(beta: float) -> float:
    """-2 beta log beta - 2 (1/2 - beta) log(1/2 - beta)."""
    return float(2.0 * (special.entr(beta) + special.entr(0.5 - beta)))


def stationarity_residuals(t: float, theta1: float, theta2: float, q: OverlapQuery,
                           quad: QuadratureSpec = DEFAULT_QUAD) -> Tuple[float, float, float]:
    """Residuals of the t-, theta1- and theta2-stationarity equations."""
    beta = q.beta
    gamma = 0.5 - beta
    a11, a21, a12, a22 = _wedge_arguments(t, q)
    res_t = (
        -t / (beta * beta) + (q.x - t) / (gamma * gamma)
        - 2.0 * theta1 / math.sqrt(beta) + 2.0 * theta2 / math.sqrt(gamma)
    )
    return (
        res_t,
        theta_stationarity(theta1, a11, a21, quad),
        theta_stationarity(theta2, a12, a22, quad),
    )


def bounded_max(f: Callable[[float], float], a: float, b: float,
                tol: float = 1e-10) -> Tuple[float, float]:
    """Maximum of a unimodal f on [a, b] by bounded Brent search; returns (argmax, max)."""
    a, b = min(a, b), max(a, b)
    if b - a <= tol:
        mid = 0.5 * (a + b)
        return mid, f(mid)
    found = optimize.minimize_scalar(lambda t: -f(t), bounds=(a, b), method="bounded",
                                     options={"xatol": tol, "maxiter": 500})
    if not found.success:
        raise SolverError(f"bounded maximization on [{a}, {b}] did not converge: {found.message}")
    return float(found.x), float(-found.fun)


def _newton_polish(start: np.ndarray, q: OverlapQuery,
                   quad: QuadratureSpec) -> Optional[np.ndarray]:
    """Damped Newton on the three stationarity equations; None when it does not converge."""
    t_lo, t_hi = q.t_range()

    def residual(v: np.ndarray) -> np.ndarray:
        if not t_lo < v[0] < t_hi:
            raise DomainError("Newton iterate left the admissible t-range")
        return np.array(stationarity_residuals(v[0], v[1], v[2], q, quad))

    point = start.astype(float)
    current = residual(point)
    for _ in range(NEWTON_MAX_ITER):
        norm = float(np.max(np.abs(current)))
        if norm < 0.01 * RESIDUAL_TOL:
            return point
        jac = np.empty((3, 3))
        for j in range(3):
            shifted = point.copy()
            shifted[j] += NEWTON_STEP
            jac[:, j] = (residual(shifted) - current) / NEWTON_STEP
        try:
            step = np.linalg.solve(jac, -current)
        except np.linalg.LinAlgError:
            return None

        damping = 1.0
        for _ in range(NEWTON_MAX_HALVINGS):
            trial = point + damping * step
            try:
                trial_res = residual(trial)
            except (SolverError, DomainError):
                trial_res = None
            if trial_res is not None and np.max(np.abs(trial_res)) < norm:
                point, current = trial, trial_res
                break
            damping *= 0.5
        else:
            break

    if float(np.max(np.abs(current))) < RESIDUAL_TOL:
        return point
    return None


def w_overlap(q: OverlapQuery, quad: QuadratureSpec = DEFAULT_QUAD, polish: bool = True) -> SecondMomentSaddle:
    """W(x, omega, h) with its saddle (t*, theta1*, theta2*)."""
    t_lo, t_hi = q.t_range()
    if not t_hi > t_lo:
        raise DomainError(f"empty t-interval [{t_lo}, {t_hi}] for {q}")

    width = t_hi - t_lo
    margin = 1e-9 * width

    def profile(t: float) -> float:
        return inner_min(t, q, quad)[2]

    t_star, _ = bounded_max(profile, t_lo + margin, t_hi - margin, tol=1e-10 * max(width, 1e-3))
    theta1, theta2, G = inner_min(t_star, q, quad)
    at_boundary = min(t_star - t_lo, t_hi - t_star) < 1e-6 * width
    method = SaddleMethod.MAX_MIN
    point = np.array([t_star, theta1, theta2])

    if polish:
        try:
            polished = _newton_polish(point, q, quad)
        except (SolverError, DomainError) as e:
            logger.debug(f"Newton polish failed for {q}: {e}")
            polished = None
        if polished is not None:
            point = polished
            method = SaddleMethod.NEWTON
        else:
            logger.warning(f"Newton polish did not converge for {q}, keeping max-min saddle")

    t_star, theta1, theta2 = (float(v) for v in point)
    if method == SaddleMethod.NEWTON:
        # tilts are stationary, so F at the polished point equals G(t*)
        a11, a21, a12, a22 = _wedge_arguments(t_star, q)
        beta, gamma = q.beta, 0.5 - q.beta
        G = (
            -t_star * t_star / (2.0 * beta * beta)
            - (q.x - t_star) ** 2 / (2.0 * gamma * gamma)
            + 2.0 * beta * log_pfun(theta1, a11, a21, quad)
            + 2.0 * gamma * log_pfun(theta2, a12, a22, quad)
        )

    residuals = stationarity_residuals(t_star, theta1, theta2, q, quad)
    return SecondMomentSaddle(
        t_star=t_star,
        theta1_star=theta1,
        theta2_star=theta2,
        value=overlap_entropy(q.beta) + G,
        residuals=tuple(float(r) for r in residuals),
        method=method.value,
        at_boundary=at_boundary,
    )


def _w_or_minus_inf(x: float, omega: float, h: float, quad: QuadratureSpec) -> float:
    try:
        return w_overlap(OverlapQuery(x=x, omega=omega, h=h), quad, polish=False).value
    except DomainError:
        return -math.inf


def scan_overlaps(E: float, h: float, quad: QuadratureSpec = DEFAULT_QUAD,
                  omega_step: float = OMEGA_STEP, refinements: int = 2,
                  first: Sequence[float] = (), stop_when_flipped: bool = False) -> CorrelationScan:
    """
    Maximize W over omega > 0 at energy E: coarse grid, then refinement around the argmax.

    Overlaps in first are tried before the grid. With stop_when_flipped the scan ends
    at the first overlap whose W exceeds W(0), which is all the flip indicator needs.
    """
    x = -E / SQRT2
    limit = 1.0 - OMEGA_CLAMP
    w_zero = w_overlap(OverlapQuery(x=x, omega=0.0, h=h), quad, polish=False).value
    best_omega, best_value = limit, -math.inf

    def visit(omegas) -> bool:
        nonlocal best_omega, best_value
        for w in omegas:
            w = float(w)
            if not 0.0 < w <= limit:
                continue
            value = _w_or_minus_inf(x, w, h, quad)
            if value > best_value:
                best_omega, best_value = w, value
            if stop_when_flipped and best_value - w_zero > ECOR_THRESHOLD:
                return True
        return False

    # W is even in omega, so the scan covers omega > 0 only
    done = visit(first) or visit(np.append(np.arange(omega_step, limit, omega_step), limit))

    step = omega_step
    for _ in range(refinements):
        if done:
            break
        lo = max(best_omega - step, 0.0)
        hi = min(best_omega + step, limit)
        step /= 10.0
        done = visit(np.arange(lo, hi + 0.5 * step, step))

    if w_zero >= best_value:
        best_omega, best_value = 0.0, w_zero
    return CorrelationScan(energy=E, w_zero=w_zero, w_best=best_value, omega_best=best_omega)


def e_cor(h: float, quad: QuadratureSpec = DEFAULT_QUAD, xtol: float = ECOR_XTOL,
          omega_step: float = OMEGA_STEP) -> float:
    """Lowest energy at which sup over omega of W is still attained at omega = 0."""
    threshold = h_star()
    if h >= threshold:
        raise ParameterError(f"e_cor needs h < h*={threshold:.6f}, got {h}")

    lo, hi = E_BRACKET[0], min(E_BRACKET[1], -h / 2.0) - 1e-3
    # the last overlap that beat omega = 0 usually beats it again at the next lower energy
    hint: List[float] = []

    def indicator(E: float) -> float:
        try:
            scan = scan_overlaps(E, h, quad, omega_step, first=hint, stop_when_flipped=True)
        except DomainError as e:
            # no uncorrelated saddle this close to the top of the window
            logger.debug(f"h={h} E={E:.6f}: {e}")
            return -1.0
        logger.debug(f"h={h} E={E:.6f}: W(0)={scan.w_zero:.9g} best={scan.w_best:.9g} at omega={scan.omega_best:.4f}")
        if scan.flipped:
            hint[:] = [scan.omega_best]
            return 1.0
        return -1.0

    f_lo, f_hi = indicator(lo), indicator(hi)
    if not (f_lo > 0.0 and f_hi < 0.0):
        raise NotFoundError(f"correlation indicator does not flip on [{lo}, {hi}] at h={h}",
                            diagnostics={"indicator_lo": f_lo, "indicator_hi": f_hi})
    root = optimize.bisect(indicator, lo, hi, xtol=xtol, maxiter=100)
    logger.info(f"E_cor({h}) = {root:.6f}")
    return float(root)


def h_cor(quad: QuadratureSpec = DEFAULT_QUAD, xtol: float = ECOR_XTOL,
          omega_step: float = OMEGA_STEP) -> float:
    """Threshold where E_cor(h) meets E_min(h)."""
    upper = h_star() - 1e-4

    def gap(h: float) -> float:
        return e_cor(h, quad, xtol=xtol, omega_step=omega_step) - energy_roots(h)[0]

    g_lo, g_hi = gap(0.0), gap(upper)
    if not g_lo > 0.0 > g_hi:
        raise NotFoundError("E_cor - E_min does not change sign on [0, h*)",
                            diagnostics={"gap_lo": g_lo, "gap_hi": g_hi})
    root = optimize.bisect(gap, 0.0, upper, xtol=xtol, maxiter=100)
    logger.info(f"h_cor = {root:.6f}")
    return float(root)


def overlap_profile(x: float, h: float, omegas: List[float],
                    quad: QuadratureSpec = DEFAULT_QUAD) -> List[SecondMomentSaddle]:
    """W along a grid of overlaps at fixed (x, h)."""
    return [w_overlap(OverlapQuery(x=x, omega=float(w), h=h), quad) for w in omegas]
