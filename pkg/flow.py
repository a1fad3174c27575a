"""
Minimizing movements for the convexified Perona-Malik flow and the TV flow.

One implicit Euler step minimizes E(v) + ||v - u||^2 / (2 tau).  For the
convexified energy the step is solved by a damped semismooth Newton method on
the sparse difference operators (or by backtracking gradient descent); for the
total variation it is solved through the dual problem with an accelerated
projected gradient method that is warm started from the previous step.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from errors import ConvergenceError, DomainError
from flow_model import FlowModel
from grid import (
    EnergyKind,
    Field,
    backward_divergence,
    difference_matrices,
    energy,
    forward_differences,
    slope_field,
    total_variation,
)
from initial_data import make_initial_field
from potential import ScalarPotential, convex_envelope, phi_eps

logger = logging.getLogger(__name__)

NEWTON_MAX_ITER = 200
DESCENT_MAX_ITER = 200_000
TV_MAX_ITER = 500_000
TV_GAP_CHECK_EVERY = 5
ARMIJO_C = 1e-4
MIN_LINE_STEP = 1e-14


# --------------------------------------------------------------------------
# Time rescaling
# --------------------------------------------------------------------------

def time_factor(eps, power=1.0):
    """Speed-up (eps |ln eps|)^(-power); power=1 is the rescaling that yields the TV flow."""
    pot = ScalarPotential(eps)
    return (pot.eps * pot.log_eps_abs) ** (-power)


def delta_of_eps(eps):
    """delta = eps^2 |ln eps| / 4, the coefficient of the regularizing Laplacian."""
    pot = ScalarPotential(eps)
    return pot.eps * pot.eps * pot.log_eps_abs / 4.0


@dataclass(frozen=True)
class TimeRescaling:
    eps: float
    delta: float
    time_factor: float

    def to_delta_time(self, t):
        return t * self.time_factor

    def to_eps_time(self, s):
        return s / self.time_factor


def rescaling(eps):
    return TimeRescaling(float(eps), delta_of_eps(eps), time_factor(eps))


def delta_problem_potential(eps):
    """1/2 ln(1+s^2) + delta s^2, written as a scaled phi_eps."""
    pot = ScalarPotential(eps)
    return pot.rescaled(pot.eps * pot.log_eps_abs)


# --------------------------------------------------------------------------
# Traces
# --------------------------------------------------------------------------

@dataclass
class FlowTrace:
    """
    Discrete trajectory of a flow.

    times, energies and slopes have one entry per time; step_norms and
    residuals (inner residual or duality gap) one entry per step.  fields is
    either the full list of states or empty for a trace read back from disk.
    """

    model: FlowModel
    eps: float
    tau: float
    inner_tol: float
    times: np.ndarray
    energies: np.ndarray
    step_norms: np.ndarray
    slopes: np.ndarray
    residuals: np.ndarray
    fields: list = field(default_factory=list)
    config_hash: str = None

    def __post_init__(self):
        self.model = FlowModel(self.model)
        for name in ("times", "energies", "step_norms", "slopes", "residuals"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.times)
        if n == 0 or self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise DomainError("Trace times must start at 0 and increase")
        if len(self.energies) != n or len(self.slopes) != n:
            raise DomainError("Trace needs one energy and one slope per time")
        if len(self.step_norms) != n - 1 or len(self.residuals) != n - 1:
            raise DomainError("Trace needs one step norm and one residual per step")
        if self.fields and len(self.fields) != n:
            raise DomainError(f"Trace has {len(self.fields)} fields for {n} times")

    @property
    def n_steps(self):
        return len(self.times) - 1

    @property
    def has_fields(self):
        return bool(self.fields)

    @property
    def energy_kind(self):
        return EnergyKind.TV if self.model is FlowModel.TV else EnergyKind.E_EPS_STAR

    def field_at(self, t):
        """State at the last time not after t."""
        k = int(np.searchsorted(self.times, t + 1e-12 * self.tau, side="right")) - 1
        return self.fields[max(k, 0)]


@dataclass(frozen=True)
class StepResult:
    field: Field
    residual: float
    iterations: int


@dataclass(frozen=True)
class TvStepResult(StepResult):
    dual: tuple = ()
    subgradient_norm: float = 0.0


# --------------------------------------------------------------------------
# Convexified Perona-Malik step
# --------------------------------------------------------------------------

class _ProximalObjective:
    """
    sum psi(|D v|) + ||v - u||^2 / (2 tau) on flattened arrays.

    Sums are unweighted; the residual norm carries the h^dims weight.
    """

    def __init__(self, u, tau, env):
        self.u = u
        self.start = u.values.ravel()
        self.tau = tau
        self.env = env
        self.ops = difference_matrices(u.shape, u.spacing_h)
        self.weight = u.cell_volume

    def differences(self, v):
        return [op @ v for op in self.ops]

    def value(self, v):
        diffs = self.differences(v)
        r = np.sqrt(sum(d * d for d in diffs))
        return float(np.sum(self.env.value(r)) + np.sum((v - self.start) ** 2) / (2.0 * self.tau))

    def gradient(self, v, diffs=None):
        diffs = self.differences(v) if diffs is None else diffs
        ratio = self.env.flux_ratio(np.sqrt(sum(d * d for d in diffs)))
        slope = sum(op.T @ (ratio * d) for op, d in zip(self.ops, diffs))
        return slope + (v - self.start) / self.tau

    def residual_norm(self, grad):
        return math.sqrt(float(np.sum(grad * grad)) * self.weight)

    def hessian(self, v, diffs):
        r = np.sqrt(sum(d * d for d in diffs))
        ratio = self.env.flux_ratio(r)
        curvature = self.env.curvature(r)
        size = v.size
        if len(self.ops) == 1:
            op = self.ops[0]
            body = op.T @ sparse.diags(curvature) @ op
        else:
            safe = np.where(r > 0.0, r, 1.0)
            normals = [np.where(r > 0.0, d / safe, 0.0) for d in diffs]
            body = sparse.csr_matrix((size, size))
            for k, op_k in enumerate(self.ops):
                for l, op_l in enumerate(self.ops):
                    coeff = (curvature - ratio) * normals[k] * normals[l]
                    if k == l:
                        coeff = coeff + ratio
                    body = body + op_k.T @ sparse.diags(coeff) @ op_l
        return (body + sparse.identity(size) / self.tau).tocsc()


def _armijo(objective, v, direction, f0, slope0):
    """Backtrack from the full step; the slack absorbs rounding in f."""
    slack = 64.0 * np.finfo(float).eps * (1.0 + abs(f0))
    step = 1.0
    while step >= MIN_LINE_STEP:
        trial = v + step * direction
        if objective.value(trial) <= f0 + ARMIJO_C * step * slope0 + slack:
            return trial
        step *= 0.5
    return None


def _newton(objective, inner_tol, max_iter):
    v = objective.start.copy()
    residual = math.inf
    for iteration in range(max_iter):
        diffs = objective.differences(v)
        grad = objective.gradient(v, diffs)
        residual = objective.residual_norm(grad)
        if residual <= inner_tol:
            return v, residual, iteration
        direction = sparse_linalg.spsolve(objective.hessian(v, diffs), -grad)
        trial = _armijo(objective, v, direction, objective.value(v), float(grad @ direction))
        if trial is None:
            raise ConvergenceError(
                f"Newton line search stalled at residual {residual:.3e}", residual, iteration
            )
        v = trial
    raise ConvergenceError(
        f"Newton did not reach {inner_tol:.1e} in {max_iter} iterations (residual {residual:.3e})",
        residual, max_iter,
    )


def _descent(objective, inner_tol, max_iter, lipschitz, convexity):
    """
    Gradient descent with backtracking; the trial step doubles after each success.

    Trial steps never exceed 2/(L + mu); every such step contracts towards
    the minimizer, whatever the decrease test accepts at rounding level.
    """
    v = objective.start.copy()
    max_step = 2.0 / (lipschitz + convexity)
    step = max_step
    residual = math.inf
    for iteration in range(max_iter):
        grad = objective.gradient(v)
        residual = objective.residual_norm(grad)
        if residual <= inner_tol:
            return v, residual, iteration
        f0 = objective.value(v)
        slack = 64.0 * np.finfo(float).eps * (1.0 + abs(f0))
        grad_sq = float(grad @ grad)
        step = min(2.0 * step, max_step)
        while objective.value(v - step * grad) > f0 - 0.5 * step * grad_sq + slack:
            step *= 0.5
            if step < MIN_LINE_STEP / lipschitz:
                raise ConvergenceError(
                    f"Descent line search stalled at residual {residual:.3e}", residual, iteration
                )
        v = v - step * grad
    raise ConvergenceError(
        f"Descent did not reach {inner_tol:.1e} in {max_iter} iterations (residual {residual:.3e})",
        residual, max_iter,
    )


def solve_mm_step(u, tau, env, inner_tol, method="newton", max_iter=None):
    """
    One minimizing-movement step of the convexified energy, with diagnostics.

    Raises:
        DomainError: tau or inner_tol not positive, unknown method
        ConvergenceError: the inner solver stopped above inner_tol
    """
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau!r}")
    if not inner_tol > 0:
        raise DomainError(f"inner_tol must be positive, got {inner_tol!r}")
    objective = _ProximalObjective(u, tau, env)
    if method == "newton":
        values, residual, iterations = _newton(objective, inner_tol, max_iter or NEWTON_MAX_ITER)
    elif method == "descent":
        lipschitz = 1.0 / tau + env.source.flux_ratio_at_zero * 4.0 * u.dims / u.spacing_h ** 2
        values, residual, iterations = _descent(
            objective, inner_tol, max_iter or DESCENT_MAX_ITER, lipschitz, 1.0 / tau
        )
    else:
        raise DomainError(f"Unknown inner method {method!r}")
    return StepResult(u.with_values(values.reshape(u.shape)), residual, iterations)


def mm_step(u, tau, env, inner_tol, method="newton", max_iter=None):
    """Approximate minimizer of E_eps**(v) + ||v - u||^2 / (2 tau)."""
    return solve_mm_step(u, tau, env, inner_tol, method, max_iter).field


# --------------------------------------------------------------------------
# Total variation step
# --------------------------------------------------------------------------

def _project_unit_ball(components):
    scale = np.maximum(1.0, np.sqrt(sum(c * c for c in components)))
    return [c / scale for c in components]


class TvProxSolver:
    """
    Proximal map of the discrete TV through its dual problem.

    The dual field p has per-cell norm at most 1 and zero boundary flux; the
    primal point is v = u + tau * div p.  Iterations are accelerated projected
    gradient ascent with step 1/(tau * 4 dims / h^2) and gradient restarts, and
    stop on the duality gap TV(v) - <grad v, p>.  The last dual field is kept
    and used as the starting point of the next call.
    """

    def __init__(self, max_iter=TV_MAX_ITER):
        self.max_iter = max_iter
        self.dual = None

    def reset(self):
        self.dual = None

    def _gap(self, u_values, p, tau, h, weight):
        v = u_values + tau * backward_divergence(p, h)
        diffs = forward_differences(v, h)
        r = np.sqrt(sum(d * d for d in diffs))
        pairing = sum(d * c for d, c in zip(diffs, p))
        return v, float(np.sum(r - pairing) * weight)

    def step(self, u, tau, inner_tol):
        if not tau > 0:
            raise DomainError(f"tau must be positive, got {tau!r}")
        if not inner_tol > 0:
            raise DomainError(f"inner_tol must be positive, got {inner_tol!r}")
        h = u.spacing_h
        weight = u.cell_volume
        values = u.values
        if self.dual is not None and self.dual[0].shape == u.shape:
            p = [c.copy() for c in self.dual]
        else:
            p = [np.zeros(u.shape) for _ in range(u.dims)]
        ascent = 1.0 / (tau * 4.0 * u.dims / h ** 2)

        v, gap = self._gap(values, p, tau, h, weight)
        iteration = 0
        q = [c.copy() for c in p]
        momentum = 1.0
        while gap > inner_tol:
            if iteration >= self.max_iter:
                raise ConvergenceError(
                    f"TV dual iteration cap {self.max_iter} reached with gap {gap:.3e}", gap, iteration
                )
            iteration += 1
            v_q = values + tau * backward_divergence(q, h)
            ascent_dir = forward_differences(v_q, h)
            p_new = _project_unit_ball([c + ascent * d for c, d in zip(q, ascent_dir)])
            restart = sum(float(np.sum((a - b) * (b - c))) for a, b, c in zip(q, p_new, p)) > 0.0
            if restart:
                momentum = 1.0
                q = [c.copy() for c in p_new]
            else:
                next_momentum = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
                beta = (momentum - 1.0) / next_momentum
                q = [b + beta * (b - c) for b, c in zip(p_new, p)]
                momentum = next_momentum
            p = p_new
            if iteration % TV_GAP_CHECK_EVERY == 0:
                v, gap = self._gap(values, p, tau, h, weight)

        self.dual = tuple(p)
        div_norm = math.sqrt(float(np.sum(backward_divergence(p, h) ** 2)) * weight)
        return TvStepResult(u.with_values(v), gap, iteration, tuple(p), div_norm)


def prox_tv(u, tau, inner_tol):
    """Approximate minimizer of TV(v) + ||v - u||^2 / (2 tau)."""
    return TvProxSolver().step(u, tau, inner_tol).field


def extrapolated_quotient(taus, quotients):
    """
    Richardson combination of the last two difference quotients.

    For a halved step this is 2 q(tau/2) - q(tau).  Negative results are
    clipped to 0.
    """
    if len(quotients) == 1:
        return max(float(quotients[0]), 0.0)
    t0, t1 = taus[-2], taus[-1]
    q0, q1 = quotients[-2], quotients[-1]
    return max(float((t0 * q1 - t1 * q0) / (t0 - t1)), 0.0)


def tv_slope_estimate(u, tau, inner_tol):
    """Slope of the discrete TV at u from proximal quotients at tau and tau/2."""
    taus = (tau, 0.5 * tau)
    quotients = [u.distance(TvProxSolver().step(u, t, inner_tol).field) / t for t in taus]
    return extrapolated_quotient(taus, quotients)


# --------------------------------------------------------------------------
# Evolution
# --------------------------------------------------------------------------

def steady_mean(u0):
    """The constant every trace started at u0 converges to."""
    return u0.mean()


def evolve(cfg, initial=None, progress_callback=None):
    """
    Run the minimizing-movement scheme described by an ExperimentConfig.

    Args:
        cfg: ExperimentConfig
        initial: optional Field replacing the configured initial datum
        progress_callback: optional callable receiving an int percentage

    Raises:
        ConvergenceError: a step failed; step_index tells which
    """
    u = initial if initial is not None else make_initial_field(cfg.init, cfg.shape, cfg.h, seed=cfg.seed)
    n_steps = cfg.n_steps
    started = time.perf_counter()

    if cfg.model is FlowModel.PM:
        env = convex_envelope(ScalarPotential(cfg.eps))

        def measure(f):
            return energy(f, EnergyKind.E_EPS_STAR, env=env)

        first_slope = slope_field(u, env).norm()
        tv_solver = None
    else:
        env = None
        measure = total_variation
        first_slope = tv_slope_estimate(u, cfg.tau, cfg.inner_tol)
        tv_solver = TvProxSolver(max_iter=cfg.max_inner_iter or TV_MAX_ITER)

    fields = [u]
    energies = [measure(u)]
    slopes = [first_slope]
    step_norms = []
    residuals = []
    report_every = max(1, n_steps // 10)
    logger.info(
        "Evolving %s model (eps=%s) on grid %s, %d steps of tau=%g",
        cfg.model.value, cfg.eps, cfg.shape, n_steps, cfg.tau,
    )

    for k in range(n_steps):
        try:
            if tv_solver is None:
                result = solve_mm_step(u, cfg.tau, env, cfg.inner_tol, cfg.inner_method, cfg.max_inner_iter)
                next_slope = slope_field(result.field, env).norm()
            else:
                result = tv_solver.step(u, cfg.tau, cfg.inner_tol)
                next_slope = result.subgradient_norm
        except ConvergenceError as e:
            logger.error("Step %d failed: %s", k, str(e))
            raise e.at_step(k)
        v = result.field
        step_norms.append(v.distance(u))
        residuals.append(result.residual)
        energies.append(measure(v))
        slopes.append(next_slope)
        fields.append(v)
        u = v
        if (k + 1) % report_every == 0:
            logger.debug("Step %d/%d: energy %.6g, inner iterations %d", k + 1, n_steps, energies[-1], result.iterations)
            if progress_callback:
                progress_callback(int(100 * (k + 1) / n_steps))

    logger.info("Evolution finished in %.2f s, final energy %.6g", time.perf_counter() - started, energies[-1])
    return FlowTrace(
        model=cfg.model,
        eps=cfg.eps if cfg.model is FlowModel.PM else None,
        tau=cfg.tau,
        inner_tol=cfg.inner_tol,
        times=cfg.tau * np.arange(n_steps + 1),
        energies=energies,
        step_norms=step_norms,
        slopes=slopes,
        residuals=residuals,
        fields=fields,
        config_hash=cfg.config_hash(),
    )


# --------------------------------------------------------------------------
# Experimental: nonconvex step against the convexified one
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProxAgreement:
    distance: float
    window_fraction: float
    nonconvex_value: float
    convex_value: float
    converged: bool


def check_prox_agreement(u, tau, env, inner_tol, max_iter=20_000):
    """
    Compare one E_eps** step with a local minimizer of the nonconvex E_eps step.

    The nonconvex problem is descended from the E_eps** minimizer.  When no
    gradient of that minimizer lies in the affine window the two agree; the
    window fraction is reported so a disagreement can be read against it.
    Results are reported, never asserted.
    """
    convex = solve_mm_step(u, tau, env, inner_tol)
    pot = env.source
    ops = difference_matrices(u.shape, u.spacing_h)
    start = u.values.ravel()
    weight = u.cell_volume

    def value(v):
        r = np.sqrt(sum((op @ v) ** 2 for op in ops))
        return float(np.sum(phi_eps(pot, r)) + np.sum((v - start) ** 2) / (2.0 * tau))

    def grad(v):
        diffs = [op @ v for op in ops]
        r = np.sqrt(sum(d * d for d in diffs))
        ratio = pot.energy_scale * (pot.log_weight / (1.0 + r * r) + 0.5 * pot.eps)
        return sum(op.T @ (ratio * d) for op, d in zip(ops, diffs)) + (v - start) / tau

    v = convex.field.values.ravel().copy()
    step = 1.0 / (1.0 / tau + pot.flux_ratio_at_zero * 4.0 * u.dims / u.spacing_h ** 2)
    converged = False
    for _ in range(max_iter):
        g = grad(v)
        if math.sqrt(float(g @ g) * weight) <= inner_tol:
            converged = True
            break
        v = v - step * g
    nonconvex = u.with_values(v.reshape(u.shape))
    r = np.sqrt(sum((op @ convex.field.values.ravel()) ** 2 for op in ops))
    window = float(np.mean((r > env.sigma1) & (r < env.sigma2)))
    return ProxAgreement(
        distance=nonconvex.distance(convex.field),
        window_fraction=window,
        nonconvex_value=value(v),
        convex_value=value(convex.field.values.ravel()),
        converged=converged,
    )
