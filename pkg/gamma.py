"""
Quantitative ingredients of the Gamma-convergence of E_eps** to TV.

Lower bound: phi_eps**(s) >= a|s| - b for eps below a threshold eps1(a, b).
Upper bound: phi_eps**(s) <= a_eps s on [0, 2/eps] with a_eps -> 1.
Jump costs: the energy of a rescaled transition profile h(x/eps) and the
optimal half-width of a linear ramp.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from errors import ConfigurationError, DomainError
from grid import EnergyKind, Field, energy, total_variation
from potential import ScalarPotential, convex_envelope

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 10_000
EPS1_RATIO = 2.0 ** 0.25
EPS1_FLOOR = 1e-6
SQRT_E2_MINUS_1 = math.sqrt(math.e ** 2 - 1.0)
PROFILE_KINDS = ("linear", "smoothstep")

REGIONS = {
    1: "[0, b]",
    2: "(b, sqrt(e^2 - 1)]",
    3: "(sqrt(e^2 - 1), 1/(eps |ln eps|)]",
    4: "(1/(eps |ln eps|), sigma_max]",
}


def _unit_interval(name, value):
    if not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")


def region_anchors(eps, b):
    pot = ScalarPotential(eps)
    return (b, SQRT_E2_MINUS_1, pot.log_weight)


def default_sigma_max(eps, b=0.0):
    pot = ScalarPotential(eps)
    return 4.0 * max(pot.log_eps_abs / pot.eps, pot.log_weight, SQRT_E2_MINUS_1, b)


def region_of(sigma, eps, b):
    """Which of the four cases of the lower-bound argument sigma falls in."""
    first, second, third = region_anchors(eps, b)
    if sigma <= first:
        return 1
    if sigma <= max(first, second):
        return 2
    if sigma <= max(first, third):
        return 3
    return 4


def sigma_grid(eps, b, sigma_max, samples=DEFAULT_SAMPLES, env=None):
    """
    Geometric grid on [0, sigma_max], dense near 0, with the region anchors and
    envelope breakpoints inserted.

    Raises:
        ConfigurationError: the grid does not reach past every region anchor
    """
    anchors = region_anchors(eps, b)
    problems = []
    if not sigma_max > max(anchors):
        problems.append(("sigma_max", f"{sigma_max!r} does not extend past {max(anchors):.6g}"))
    if samples < 16:
        problems.append(("samples", f"need at least 16 samples, got {samples!r}"))
    if problems:
        raise ConfigurationError(problems)
    start = 1e-6 * min(a for a in anchors if a > 0)
    extra = list(anchors)
    if env is not None:
        extra += [env.sigma1, env.sigma2]
    grid = np.concatenate([[0.0], np.geomspace(start, sigma_max, samples - 1), extra])
    return np.unique(grid[grid <= sigma_max])


@dataclass(frozen=True)
class BoundReport:
    eps: float
    a: float
    b: float
    sigma_max: float
    samples: int
    min_margin: float
    argmin_sigma: float
    region: int
    passed: bool

    def to_dict(self):
        data = asdict(self)
        data["pass"] = data.pop("passed")
        data["region_name"] = REGIONS[self.region]
        return data


def lower_bound_margin(eps, a, b, sigma_max=None, samples=DEFAULT_SAMPLES, env=None):
    """Minimum over a sigma grid of phi_eps**(s) - a s + b, with its location."""
    _unit_interval("a", a)
    _unit_interval("b", b)
    env = env if env is not None else convex_envelope(ScalarPotential(eps))
    sigma_max = default_sigma_max(eps, b) if sigma_max is None else float(sigma_max)
    grid = sigma_grid(eps, b, sigma_max, samples, env)
    margins = env.value(grid) - a * grid + b
    k = int(np.argmin(margins))
    sigma = float(grid[k])
    return BoundReport(
        eps=float(eps), a=float(a), b=float(b), sigma_max=sigma_max, samples=len(grid),
        min_margin=float(margins[k]), argmin_sigma=sigma, region=region_of(sigma, eps, b),
        passed=bool(margins[k] >= 0.0),
    )


@dataclass(frozen=True)
class Eps1Report:
    a: float
    b: float
    eps1: float
    found: bool
    tested: list = field(default_factory=list)

    def to_dict(self):
        return {
            "a": self.a, "b": self.b, "eps1": self.eps1, "found": self.found,
            "tested": [{"eps": e, "pass": p, "min_margin": m} for e, p, m in self.tested],
        }


def eps_log_grid(ratio=EPS1_RATIO, floor=EPS1_FLOOR):
    """ratio^-k for k = 1, 2, ... down to floor, largest first."""
    count = int(math.floor(math.log(1.0 / floor) / math.log(ratio)))
    return [ratio ** (-k) for k in range(1, count + 1)]


def find_eps1(a, b, samples=DEFAULT_SAMPLES, ratio=EPS1_RATIO, floor=EPS1_FLOOR, progress_callback=None):
    """
    Largest grid eps such that the lower bound passes there and at every smaller grid eps.

    All tested values are reported.  found is False when the smallest grid
    value already fails.
    """
    _unit_interval("a", a)
    _unit_interval("b", b)
    grid = eps_log_grid(ratio, floor)
    tested = []
    for i, eps in enumerate(grid):
        report = lower_bound_margin(eps, a, b, samples=samples)
        tested.append((eps, report.passed, report.min_margin))
        if progress_callback:
            progress_callback(int(100 * (i + 1) / len(grid)))
    eps1 = None
    for eps, passed, _ in reversed(tested):
        if not passed:
            break
        eps1 = eps
    logger.info("eps1(a=%g, b=%g) = %s over %d grid values", a, b, eps1, len(grid))
    return Eps1Report(float(a), float(b), eps1, eps1 is not None, tested)


def limsup_coeff(eps):
    """a_eps = (ln(1 + 4/eps^2) / (2 |ln eps|) + 1) / 2, the slope of the chord to (2/eps, phi_eps(2/eps))."""
    pot = ScalarPotential(eps)
    return 0.5 * (math.log1p(4.0 / (pot.eps * pot.eps)) / (2.0 * pot.log_eps_abs) + 1.0)


@dataclass(frozen=True)
class ChordReport:
    eps: float
    coefficient: float
    worst_excess: float
    passed: bool


def check_chord(eps, samples=DEFAULT_SAMPLES, rtol=1e-12, env=None):
    """phi_eps**(s) <= a_eps s on [0, 2/eps], relative to the chord value."""
    env = env if env is not None else convex_envelope(ScalarPotential(eps))
    coefficient = limsup_coeff(eps)
    grid = np.linspace(0.0, 2.0 / eps, samples)
    chord = coefficient * grid
    excess = (env.value(grid) - chord) / np.maximum(1.0, chord)
    worst = float(np.max(excess))
    return ChordReport(float(eps), coefficient, worst, worst <= rtol)


@dataclass(frozen=True)
class JumpProfile:
    """Monotone transition from -J/2 to J/2 over [-eta, eta], sampled resolution times per unit."""

    J: float
    eta: float
    kind: str = "linear"
    resolution: int = 40_000

    def __post_init__(self):
        problems = []
        if not self.J > 0:
            problems.append(("J", f"must be positive, got {self.J!r}"))
        if not self.eta > 0:
            problems.append(("eta", f"must be positive, got {self.eta!r}"))
        if self.kind not in PROFILE_KINDS:
            problems.append(("kind", f"must be one of {PROFILE_KINDS}, got {self.kind!r}"))
        if not self.resolution > 0:
            problems.append(("resolution", f"must be positive, got {self.resolution!r}"))
        if problems:
            raise ConfigurationError(problems)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "linear":
            return np.clip(0.5 * self.J * y / self.eta, -0.5 * self.J, 0.5 * self.J)
        s = np.clip((y + self.eta) / (2.0 * self.eta), 0.0, 1.0)
        return self.J * (3.0 * s * s - 2.0 * s ** 3) - 0.5 * self.J


def rescaled_profile_field(profile, eps):
    """
    Samples of v_eps(x) = h(x/eps) on the cells around its transition.

    Cells outside carry constant values and add nothing to any of the
    energies, so this field stands for v_eps on the whole interval (-1, 1).
    """
    if eps * profile.eta >= 1.0:
        raise ConfigurationError([("eps", f"support half-width {eps * profile.eta:g} overflows (-1, 1)")])
    half = int(math.ceil(profile.eta * profile.resolution)) + 2
    y = np.arange(-half, half + 1) / profile.resolution
    spacing = eps / profile.resolution
    return Field(profile(y), spacing, (eps * y[0] - 0.5 * spacing,))


def jump_cost(profile, eps):
    """The 1D discrete E_eps of v_eps(x) = h(x/eps)."""
    pot = ScalarPotential(eps)
    return energy(rescaled_profile_field(profile, eps), EnergyKind.E_EPS, pot=pot)


def jump_cost_limit(J, eta):
    """2 eta + J^2/(8 eta), the small-eps limit for the linear ramp."""
    return 2.0 * eta + J * J / (8.0 * eta)


def optimal_eta(J):
    """Minimizer and minimum of 2 eta + J^2/(8 eta): (J/4, J)."""
    if not J > 0:
        raise DomainError(f"J must be positive, got {J!r}")
    return 0.25 * J, float(J)


def h_alpha(jumps, alpha):
    """sum |J|^alpha for alpha in (0, 1], sum ln|J| for alpha = 0."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
    values = np.abs(np.asarray(jumps, dtype=float))
    if values.size and (np.any(values == 0.0) or not np.all(np.isfinite(values))):
        raise DomainError("jumps must be finite and nonzero")
    if alpha == 0.0:
        return float(np.sum(np.log(values)))
    return float(np.sum(values ** alpha))


def jumps_of(u, tol=0.0):
    """Nonzero differences of a 1D field, read as the jumps of a piecewise-constant function."""
    if u.dims != 1:
        raise DomainError("Jumps are read from 1D fields only")
    diffs = np.diff(u.values)
    return diffs[np.abs(diffs) > tol]


@dataclass(frozen=True)
class CompactnessReport:
    lhs: float
    rhs: float
    passed: bool

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "pass": self.passed}


def compactness_bound(u, eps, env=None):
    """E_eps**(u) >= TV(u)/2 - |Omega|/2 on the grid."""
    env = env if env is not None else convex_envelope(ScalarPotential(eps))
    lhs = energy(u, EnergyKind.E_EPS_STAR, env=env)
    rhs = 0.5 * total_variation(u) - 0.5 * u.measure
    return CompactnessReport(lhs, rhs, bool(lhs >= rhs))


def search_optimal_eta(J, lower=1e-3, upper=10.0, samples=200_001):
    """Brute-force minimization of 2 eta + J^2/(8 eta) on a geometric eta grid."""
    if not J > 0:
        raise DomainError(f"J must be positive, got {J!r}")
    etas = np.geomspace(lower, upper, samples)
    costs = jump_cost_limit(J, etas)
    k = int(np.argmin(costs))
    return float(etas[k]), float(costs[k])
