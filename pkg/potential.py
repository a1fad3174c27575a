"""
Rescaled Perona-Malik potential and its convex envelope.

The potential is

    phi_eps(s) = ln(1 + s^2) / (2 eps |ln eps|) + (eps / 4) s^2

which is convex near 0, concave on a well [a, b] and convex again with quadratic
growth.  Its convex envelope replaces a window [sigma1, sigma2] around the well
by the bitangent segment m*s + q.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from errors import DomainError, StructuralError

logger = logging.getLogger(__name__)

# scipy.optimize.bisect refuses rtol below four machine epsilons
BISECT_RTOL = 4 * np.finfo(float).eps
BISECT_MAXITER = 400
DEFAULT_ENVELOPE_TOL = 1e-8


def _finite(sigma, name="sigma"):
    values = np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{name} must be finite, got {sigma!r}")
    return values


def _like(result, sigma):
    """Return a float for scalar input and an array otherwise."""
    if np.ndim(sigma) == 0:
        return float(result)
    return result


@dataclass(frozen=True)
class ScalarPotential:
    """
    The potential phi_eps for one value of eps.

    energy_scale multiplies the whole potential. A scale of eps*|ln eps| turns
    phi_eps into the unscaled regularized potential 1/2 ln(1+s^2) + delta s^2
    with delta = eps^2 |ln eps| / 4.
    """

    eps: float
    energy_scale: float = 1.0
    log_eps_abs: float = field(init=False, repr=False)

    def __post_init__(self):
        eps = float(self.eps)
        if not math.isfinite(eps) or not 0.0 < eps < 1.0:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps!r}")
        scale = float(self.energy_scale)
        if not math.isfinite(scale) or scale <= 0.0:
            raise DomainError(f"energy_scale must be positive, got {self.energy_scale!r}")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "energy_scale", scale)
        object.__setattr__(self, "log_eps_abs", -math.log(eps))

    @property
    def log_weight(self):
        """Coefficient 1/(eps |ln eps|) of s/(1+s^2) in the derivative."""
        return 1.0 / (self.eps * self.log_eps_abs)

    @property
    def flux_ratio_at_zero(self):
        """Limit of phi'(s)/s as s -> 0."""
        return self.energy_scale * (self.log_weight + 0.5 * self.eps)

    def rescaled(self, factor):
        return ScalarPotential(self.eps, self.energy_scale * factor)

    def second_derivative(self, sigma):
        s = _finite(sigma)
        s2 = s * s
        out = self.energy_scale * (self.log_weight * (1.0 - s2) / (1.0 + s2) ** 2 + 0.5 * self.eps)
        return _like(out, sigma)


def phi_eps(pot, sigma):
    """Evaluate the potential; accepts scalars or arrays."""
    s = _finite(sigma)
    s2 = s * s
    out = pot.energy_scale * (0.5 * pot.log_weight * np.log1p(s2) + 0.25 * pot.eps * s2)
    return _like(out, sigma)


def phi_eps_deriv(pot, sigma):
    """Evaluate the derivative of the potential; odd in sigma."""
    s = _finite(sigma)
    out = pot.energy_scale * (pot.log_weight * s / (1.0 + s * s) + 0.5 * pot.eps * s)
    return _like(out, sigma)


def inflection_points(pot):
    """
    Return (a, b), the ends of the interval where phi_eps is concave.

    With t = s^2 the inflection condition is the quadratic
    (eps/2) t^2 + (eps - A) t + (eps/2 + A) = 0 with A = 1/(eps |ln eps|).
    """
    weight = pot.log_weight
    eps = pot.eps
    disc = weight * (weight - 4.0 * eps)
    if disc <= 0.0:
        raise StructuralError(f"phi_eps is convex for eps={eps}")
    t_upper = ((weight - eps) + math.sqrt(disc)) / eps
    # product of the roots, avoids cancellation in the smaller one
    t_lower = (1.0 + 2.0 * weight / eps) / t_upper
    return math.sqrt(t_lower), math.sqrt(t_upper)


def _bisect(func, lower, upper):
    return optimize.bisect(
        func, lower, upper,
        xtol=np.finfo(float).tiny, rtol=BISECT_RTOL, maxiter=BISECT_MAXITER,
    )


def _tangent_partner(pot, slope, lower):
    """Point s >= lower on the outer convex branch where phi'(s) = slope."""
    if phi_eps_deriv(pot, lower) >= slope:
        return lower
    # phi'(s) >= scale * eps * s / 2, so this bracket always closes
    upper = lower + 2.0 * slope / (pot.energy_scale * pot.eps)
    return _bisect(lambda s: phi_eps_deriv(pot, s) - slope, lower, upper)


@dataclass(frozen=True)
class ConvexEnvelope:
    """
    The convex envelope of phi_eps, extended evenly to negative arguments.

    It coincides with phi_eps outside [sigma1, sigma2] and equals
    slope_m * s + offset_q inside.
    """

    source: ScalarPotential
    sigma1: float
    sigma2: float
    slope_m: float
    offset_q: float

    def _window(self, s):
        return (s > self.sigma1) & (s < self.sigma2)

    def value(self, sigma):
        s = np.abs(_finite(sigma))
        out = np.where(self._window(s), self.slope_m * s + self.offset_q, phi_eps(self.source, s))
        return _like(out, sigma)

    def derivative(self, sigma):
        signed = _finite(sigma)
        s = np.abs(signed)
        out = np.sign(signed) * np.where(self._window(s), self.slope_m, phi_eps_deriv(self.source, s))
        return _like(out, sigma)

    def flux_ratio(self, sigma):
        """derivative(s)/s, continuous at 0 and nonincreasing in |s|."""
        s = np.abs(_finite(sigma))
        pot = self.source
        outside = pot.energy_scale * (pot.log_weight / (1.0 + s * s) + 0.5 * pot.eps)
        inside = self.slope_m / np.where(self._window(s), s, 1.0)
        out = np.where(self._window(s), inside, outside)
        return _like(out, sigma)

    def curvature(self, sigma):
        """Second derivative; zero on the affine window."""
        s = np.abs(_finite(sigma))
        out = np.where(self._window(s), 0.0, self.source.second_derivative(s))
        return _like(out, sigma)


def convex_envelope(pot, tol=DEFAULT_ENVELOPE_TOL):
    """
    Build the convex envelope of phi_eps by the bitangent construction.

    The outer bisection runs over sigma1 on the first convex branch, the inner
    one finds the tangent partner sigma2 on the last branch.  Both tangency
    equations are then checked relative to the segment slope.

    Raises:
        DomainError: tol is not positive
        StructuralError: no bracketed bitangent or residuals above tol
    """
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol!r}")
    a, b = inflection_points(pot)
    floor_slope = phi_eps_deriv(pot, b)
    sigma_lo = _bisect(lambda s: phi_eps_deriv(pot, s) - floor_slope, 0.0, a)

    def tangent_gap(s1):
        slope = phi_eps_deriv(pot, s1)
        s2 = _tangent_partner(pot, slope, b)
        return phi_eps(pot, s2) - phi_eps(pot, s1) - slope * (s2 - s1)

    gap_lo = tangent_gap(sigma_lo)
    gap_hi = tangent_gap(a)
    if not gap_lo > 0.0 > gap_hi:
        raise StructuralError(
            f"Bitangent not bracketed for eps={pot.eps}: gaps {gap_lo:.3e}, {gap_hi:.3e}"
        )
    sigma1 = _bisect(tangent_gap, sigma_lo, a)
    sigma2 = _tangent_partner(pot, phi_eps_deriv(pot, sigma1), b)

    slope = (phi_eps(pot, sigma2) - phi_eps(pot, sigma1)) / (sigma2 - sigma1)
    offset = phi_eps(pot, sigma1) - slope * sigma1
    residual = max(
        abs(phi_eps_deriv(pot, sigma1) - slope),
        abs(phi_eps_deriv(pot, sigma2) - slope),
    ) / slope
    if residual > tol:
        raise StructuralError(
            f"Bitangent residual {residual:.3e} above tolerance {tol:.1e} for eps={pot.eps}"
        )
    logger.debug(
        "Envelope eps=%g: sigma1=%.10g sigma2=%.10g m=%.10g q=%.10g residual=%.2e",
        pot.eps, sigma1, sigma2, slope, offset, residual,
    )
    return ConvexEnvelope(pot, float(sigma1), float(sigma2), float(slope), float(offset))


def envelope_eval(env, sigma):
    """Return (value, derivative) of the envelope at sigma."""
    return env.value(sigma), env.derivative(sigma)
