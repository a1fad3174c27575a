"""
Metric gradient-flow diagnostics.

Checks run on computed traces (metric derivatives, the energy dissipation
inequality, monotonicity, Hoelder and contraction bounds) and on sampled
functionals (proximal slope estimates, the slope cone property, and the
energy/slope implication used to pass to the limit in eps).
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from errors import DomainError, UnsupportedError
from flow import extrapolated_quotient, mm_step, prox_tv
from grid import EnergyKind, Field, energy, slope_field, total_variation

logger = logging.getLogger(__name__)

DEFAULT_SLOPE_TAUS = (1e-4, 5e-5)


def point_distance(x, y):
    """L2 distance: grid-weighted for Fields, Euclidean for plain vectors."""
    if isinstance(x, Field):
        return x.distance(y)
    return float(np.linalg.norm(np.subtract(x, y)))


@dataclass(frozen=True)
class SampledFunctional:
    """
    A functional known through evaluations.

    slope is an optional closed form of the descending slope; prox(x, tau) is
    an optional proximal map.
    """

    evaluator: Callable
    slope: Optional[Callable] = None
    prox: Optional[Callable] = None
    name: str = "F"

    def __call__(self, x):
        return self.evaluator(x)

    def slope_at(self, x, taus=DEFAULT_SLOPE_TAUS):
        if self.slope is not None:
            return float(self.slope(x))
        return slope_prox(self, x, taus).value


def envelope_functional(env, inner_tol=1e-10):
    """Discrete E_eps** with its gradient-norm slope and implicit Euler prox."""
    return SampledFunctional(
        evaluator=lambda u: energy(u, EnergyKind.E_EPS_STAR, env=env),
        slope=lambda u: slope_field(u, env).norm(),
        prox=lambda u, tau: mm_step(u, tau, env, inner_tol),
        name=f"E_eps**(eps={env.source.eps:g})",
    )


def tv_functional(inner_tol=1e-10):
    """Discrete TV; its slope comes from proximal quotients."""
    return SampledFunctional(
        evaluator=total_variation,
        prox=lambda u, tau: prox_tv(u, tau, inner_tol),
        name="TV",
    )


# --------------------------------------------------------------------------
# Slopes and metric derivatives
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeEstimate:
    value: float
    taus: tuple
    quotients: tuple

    def __float__(self):
        return self.value


def slope_prox(F, x, tau_seq=DEFAULT_SLOPE_TAUS):
    """
    Descending slope from proximal quotients d(x, prox_tau(x)) / tau.

    The last two quotients are combined by Richardson extrapolation; the whole
    sequence is returned for inspection.

    Raises:
        UnsupportedError: F has no proximal map
        DomainError: tau_seq is not positive and strictly decreasing
    """
    if F.prox is None:
        raise UnsupportedError(f"{F.name} has no proximal map")
    taus = tuple(float(t) for t in tau_seq)
    if not taus or any(t <= 0 for t in taus) or any(b >= a for a, b in zip(taus, taus[1:])):
        raise DomainError(f"tau_seq must be positive and strictly decreasing, got {tau_seq!r}")
    quotients = tuple(point_distance(x, F.prox(x, t)) / t for t in taus)
    return SlopeEstimate(extrapolated_quotient(taus, quotients), taus, quotients)


def metric_derivative(trace):
    """Per step ||u^{k+1} - u^k|| / (t_{k+1} - t_k)."""
    if len(trace.times) < 2:
        raise DomainError("A metric derivative needs at least two times")
    return trace.step_norms / np.diff(trace.times)


def _pairwise_distances(fields, indices):
    stack = np.stack([fields[i].values.ravel() for i in indices])
    weight = fields[0].cell_volume
    distances = np.zeros((len(indices), len(indices)))
    for row in range(len(indices)):
        distances[row] = np.sqrt(np.sum((stack - stack[row]) ** 2, axis=1) * weight)
    return distances


def metric_derivative_margin(trace):
    """
    Smallest value of sum of step norms minus d(u_s, u_t) over all pairs.

    Nonnegative up to rounding for any curve, by the triangle inequality.
    """
    if not trace.has_fields:
        raise DomainError("Triangle check needs the trace fields")
    indices = list(range(len(trace.times)))
    distances = _pairwise_distances(trace.fields, indices)
    path = np.concatenate([[0.0], np.cumsum(trace.step_norms)])
    lengths = path[None, :] - path[:, None]
    upper = np.triu_indices(len(indices), k=1)
    return float(np.min(lengths[upper] - distances[upper])) if len(indices) > 1 else 0.0


# --------------------------------------------------------------------------
# Energy dissipation inequality
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EdiReport:
    pairs_checked: int
    worst_residual: float
    tolerance_used: float
    passed: bool
    worst_pair: tuple = None

    def to_dict(self):
        data = asdict(self)
        data["pass"] = data.pop("passed")
        data["worst_pair"] = list(self.worst_pair) if self.worst_pair else None
        return data


def check_edi(trace, tol, excluded=()):
    """
    Check psi(s) - psi(t) >= 1/2 sum tau |u'|^2 + 1/2 sum tau |grad F|^2 for all s < t.

    The residual of a pair is averaged over its t - s steps, so a pair passes
    when the residual is at least -tol.  Indices in excluded play the role of
    the exceptional time set and are skipped as pair endpoints.
    """
    energies = trace.energies
    dt = np.diff(trace.times)
    md = metric_derivative(trace)
    dissipation = 0.5 * dt * (md ** 2 + trace.slopes[1:] ** 2)
    drop = energies[:-1] - energies[1:] - dissipation
    cumulative = np.concatenate([[0.0], np.cumsum(drop)])

    excluded = set(excluded)
    allowed = np.array([i for i in range(len(energies)) if i not in excluded], dtype=int)
    worst = math.inf
    worst_pair = None
    pairs = 0
    for pos in range(len(allowed) - 1):
        s = allowed[pos]
        later = allowed[pos + 1:]
        residual = (cumulative[later] - cumulative[s]) / (later - s)
        j = int(np.argmin(residual))
        if residual[j] < worst:
            worst = float(residual[j])
            worst_pair = (int(s), int(later[j]))
        pairs += len(later)
    if pairs == 0:
        worst = 0.0
    report = EdiReport(pairs, worst, float(tol), worst >= -tol, worst_pair)
    logger.info("EDI check: %d pairs, worst residual %.3e (tol %.1e)", pairs, worst, tol)
    return report


@dataclass(frozen=True)
class SlopeMatchReport:
    steps_checked: int
    worst_gap: float
    tolerance_used: float
    passed: bool

    def to_dict(self):
        data = asdict(self)
        data["pass"] = data.pop("passed")
        return data


def check_slope_match(trace, tol=None):
    """|metric_derivative[k] - slopes[k+1]| <= tol, by default 2 inner_tol / tau."""
    tol = 2.0 * trace.inner_tol / trace.tau if tol is None else tol
    gaps = np.abs(metric_derivative(trace) - trace.slopes[1:])
    worst = float(np.max(gaps)) if len(gaps) else 0.0
    return SlopeMatchReport(len(gaps), worst, float(tol), worst <= tol)


# --------------------------------------------------------------------------
# Trace monotonicity, Hoelder and contraction bounds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MonotonicityReport:
    energy_increase: float
    l2_increase: float
    linf_increase: float
    mean_drift: float
    passed: bool

    def to_dict(self):
        data = asdict(self)
        data["pass"] = data.pop("passed")
        return data


def check_monotonicity(trace, step_tol, energy_tol=None, mean_rtol=1e-10):
    """
    Largest per-step increases of energy, L2 norm and sup norm, and the drift of the mean.

    step_tol is per step in the grid L2 norm; the sup-norm tolerance is
    step_tol / sqrt(h^dims).
    """
    if not trace.has_fields:
        raise DomainError("Monotonicity check needs the trace fields")
    energy_tol = step_tol if energy_tol is None else energy_tol
    weight = trace.fields[0].cell_volume
    l2 = np.array([f.norm() for f in trace.fields])
    linf = np.array([f.norm(np.inf) for f in trace.fields])
    means = np.array([f.mean() for f in trace.fields])

    def worst_increase(series):
        return float(np.max(np.diff(series))) if len(series) > 1 else 0.0

    energy_up = worst_increase(trace.energies)
    l2_up = worst_increase(l2)
    linf_up = worst_increase(linf)
    drift = float(np.max(np.abs(means - means[0])))
    passed = (
        energy_up <= energy_tol
        and l2_up <= step_tol
        and linf_up <= step_tol / math.sqrt(weight)
        and drift <= mean_rtol * max(1.0, abs(means[0]))
    )
    return MonotonicityReport(energy_up, l2_up, linf_up, drift, passed)


@dataclass(frozen=True)
class HolderReport:
    pairs_checked: int
    worst_ratio: float
    passed: bool


def check_holder(trace, stride=1):
    """||u(t) - u(s)|| <= |t - s|^(1/2) (2 E(u_0))^(1/2) on every sampled pair."""
    if not trace.has_fields:
        raise DomainError("Hoelder check needs the trace fields")
    indices = list(range(0, len(trace.times), stride))
    distances = _pairwise_distances(trace.fields, indices)
    times = trace.times[indices]
    bound = np.sqrt(np.abs(times[None, :] - times[:, None]) * 2.0 * trace.energies[0])
    upper = np.triu_indices(len(indices), k=1)
    lhs, rhs = distances[upper], bound[upper]
    if len(lhs) == 0:
        return HolderReport(0, 0.0, True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > 1e-12, np.inf, 0.0))
    worst = float(np.max(ratios))
    return HolderReport(len(lhs), worst, worst <= 1.0 + 1e-9)


@dataclass(frozen=True)
class ContractionReport:
    distances: tuple
    worst_increase: float
    passed: bool


def check_contraction(trace_a, trace_b, step_tol):
    """Distance between two traces of the same model may grow by at most step_tol per step."""
    if len(trace_a.fields) != len(trace_b.fields):
        raise DomainError("Traces have different lengths")
    distances = np.array([a.distance(b) for a, b in zip(trace_a.fields, trace_b.fields)])
    worst = float(np.max(np.diff(distances))) if len(distances) > 1 else 0.0
    return ContractionReport(tuple(distances.tolist()), worst, worst <= step_tol)


# --------------------------------------------------------------------------
# Slope cone property and the limit implication
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeConeReport:
    pairs_checked: int
    violations: list = field(default_factory=list)
    worst_margin: float = math.inf
    passed: bool = True

    def to_dict(self):
        return {
            "pairs_checked": self.pairs_checked,
            "violations": [list(v) for v in self.violations],
            "worst_margin": self.worst_margin,
            "pass": self.passed,
        }


def check_slope_cone(F, centers, probes, slopes=None, tol=0.0):
    """
    Check F(y) >= F(x) - |grad F|(x) d(x, y) on centers x probes.

    slopes, when given, are used for the centers; otherwise F.slope_at is
    called.  Pairs with non-finite F(x) or slope are skipped.  Violations are
    (center index, probe index, margin) with margin below -tol.
    """
    violations = []
    worst = math.inf
    pairs = 0
    probe_values = [F(y) for y in probes]
    for i, x in enumerate(centers):
        fx = F(x)
        sx = slopes[i] if slopes is not None else F.slope_at(x)
        if not (math.isfinite(fx) and math.isfinite(sx)):
            continue
        for j, (y, fy) in enumerate(zip(probes, probe_values)):
            margin = fy - fx + sx * point_distance(x, y)
            pairs += 1
            worst = min(worst, margin)
            if margin < -tol:
                violations.append((i, j, float(margin)))
    if pairs == 0:
        worst = 0.0
    return SlopeConeReport(pairs, violations, float(worst), not violations)


@dataclass(frozen=True)
class LimitHypothesisReport:
    status: str  # "holds", "fails" or "not_engaged"
    energies: tuple
    slopes: tuple
    limit_energy: float
    limit_slope: float
    energy_error: float
    slope_liminf: float
    energy_ok: bool
    slope_ok: bool

    def to_dict(self):
        return asdict(self)


def check_limit_hypothesis(F_seq, F_lim, x, approx_seq, energy_tol=1e-2, slope_tol=1e-2, bound=1e12):
    """
    Check that F_n(x_n) -> F(x) and liminf |grad F_n|(x_n) >= |grad F|(x).

    The limit is read off the tail: the energy error is taken at the last
    element and the liminf is the minimum over the last half of the slopes.
    When energies or slopes are not finite or exceed bound the premise is not
    engaged and nothing is concluded.
    """
    if len(F_seq) != len(approx_seq) or not F_seq:
        raise DomainError("F_seq and approx_seq need the same nonzero length")
    energies = np.array([F(xn) for F, xn in zip(F_seq, approx_seq)], dtype=float)
    slopes = np.array([F.slope_at(xn) for F, xn in zip(F_seq, approx_seq)], dtype=float)
    limit_energy = float(F_lim(x))
    limit_slope = float(F_lim.slope_at(x))

    engaged = bool(np.all(np.isfinite(energies)) and np.all(np.isfinite(slopes))
                   and np.max(np.abs(energies) + slopes) <= bound)
    tail = slopes[len(slopes) // 2:]
    energy_error = float(abs(energies[-1] - limit_energy))
    liminf = float(np.min(tail))
    energy_ok = energy_error <= energy_tol
    slope_ok = liminf >= limit_slope - slope_tol
    if not engaged:
        status = "not_engaged"
    elif energy_ok and slope_ok:
        status = "holds"
    else:
        status = "fails"
    logger.info("Limit hypothesis %s: energy error %.3e, slope liminf %.4g vs %.4g",
                status, energy_error, liminf, limit_slope)
    return LimitHypothesisReport(
        status, tuple(energies.tolist()), tuple(slopes.tolist()), limit_energy, limit_slope,
        energy_error, liminf, energy_ok, slope_ok,
    )
