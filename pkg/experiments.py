"""
Experiment orchestration: single runs with their checks, the eps-sweep
comparison against the TV flow, and the rescaling-speed sweep.
"""

import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from errors import ConfigurationError, ConvergenceError, LabError
from flow import evolve, time_factor
from flow_model import FlowModel
from initial_data import step_extinction_time
from slope import check_edi, check_monotonicity, check_slope_match
from sweep_worker import SweepWorker
from trace_exporter import MANIFEST_FILE, REPORT_FILE, export_trace, write_json

logger = logging.getLogger(__name__)

__version__ = "1.0.0"

EDI_TOL_FACTOR = 10.0
COMPARE_CSV = "compare.csv"
COMPARE_JSON = "compare.json"


def monotonicity_tolerances(trace):
    """
    Per-step tolerances (L2 step, energy) certified by the inner solvers.

    Newton steps are within tau * inner_tol of the exact step; TV steps are
    within sqrt(2 tau gap) and their energy within the gap.
    """
    if trace.model is FlowModel.PM:
        return trace.inner_tol * trace.tau, trace.inner_tol * trace.tau
    return math.sqrt(2.0 * trace.tau * trace.inner_tol), trace.inner_tol


@dataclass
class ExperimentResult:
    out_dir: str
    status: str
    trace: object = None
    reports: dict = field(default_factory=dict)
    error: str = None

    @property
    def exit_code(self):
        return 0 if self.status == "ok" else 1


def _manifest(cfg, status, error=None, step_index=None):
    return {
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "status": status,
        "error": error,
        "failed_step": step_index,
    }


def run_experiment(cfg, out_dir=None, progress_callback=None):
    """
    Evolve one configuration, check it and write trace, report and manifest.

    Solver errors are written into the manifest instead of being raised.
    """
    out_dir = out_dir or cfg.out_dir or os.path.join("runs", cfg.config_hash())
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, MANIFEST_FILE)

    try:
        trace = evolve(cfg, progress_callback=progress_callback)
    except LabError as e:
        logger.error("Run %s failed: %s", cfg.config_hash(), str(e))
        step = e.step_index if isinstance(e, ConvergenceError) else None
        write_json(_manifest(cfg, "failed", str(e), step), manifest_path)
        return ExperimentResult(out_dir, "failed", error=str(e))

    step_tol, energy_tol = monotonicity_tolerances(trace)
    edi = check_edi(trace, EDI_TOL_FACTOR * cfg.inner_tol)
    monotone = check_monotonicity(trace, step_tol, energy_tol)
    slope_match = check_slope_match(trace)
    reports = {
        "edi": edi.to_dict(),
        "monotonicity": monotone.to_dict(),
        "slope_match": slope_match.to_dict(),
        "final_energy": float(trace.energies[-1]),
        "steady_mean": trace.fields[0].mean(),
    }
    export_trace(trace, out_dir, cfg.snapshot_stride)
    write_json(reports, os.path.join(out_dir, REPORT_FILE))

    status = "ok" if edi.passed and monotone.passed else "failed"
    error = None if status == "ok" else "trace checks failed"
    write_json(_manifest(cfg, status, error), manifest_path)
    logger.info("Run %s finished with status %s in %s", cfg.config_hash(), status, out_dir)
    return ExperimentResult(out_dir, status, trace, reports, error)


@dataclass(frozen=True)
class SinePerturbation:
    """u0 + amplitude * eps * sin(k pi x / half_length): data converging to u0 as eps -> 0."""

    k: int = 1
    amplitude: float = 1.0

    def apply(self, u0, eps):
        x = u0.mesh()[0] - (u0.origin[0] + 0.5 * u0.domain_lengths[0])
        half = 0.5 * u0.domain_lengths[0]
        return u0.with_values(u0.values + self.amplitude * eps * np.sin(self.k * np.pi * x / half))


@dataclass
class CompareResult:
    eps_list: list
    sup_errors: list
    runtimes: list
    config: dict
    t_end: float
    tail_bound: float
    global_bounds: list
    edi_passed: list
    reference_runtime: float = 0.0

    def __post_init__(self):
        n = len(self.eps_list)
        if not (len(self.sup_errors) == len(self.runtimes) == len(self.global_bounds) == n):
            raise ConfigurationError([("eps_list", "result lengths do not match")])

    def to_frame(self):
        return pd.DataFrame({"eps": self.eps_list, "sup_error": self.sup_errors, "runtime_s": self.runtimes})

    def to_dict(self):
        return {
            "eps_list": list(self.eps_list),
            "sup_errors": list(self.sup_errors),
            "runtimes": list(self.runtimes),
            "config": self.config,
            "t_end": self.t_end,
            "tail_bound": self.tail_bound,
            "global_bounds": list(self.global_bounds),
            "edi_passed": list(self.edi_passed),
            "reference_runtime": self.reference_runtime,
        }


def _validate_eps_list(eps_list):
    eps_list = [float(e) for e in eps_list]
    problems = []
    if not eps_list:
        problems.append(("eps_list", "needs at least one value"))
    if any(not 0.0 < e < 1.0 for e in eps_list):
        problems.append(("eps_list", f"values must lie in (0, 1), got {eps_list}"))
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        problems.append(("eps_list", f"must be strictly decreasing, got {eps_list}"))
    if problems:
        raise ConfigurationError(problems)
    return eps_list


def _default_t_end(base_cfg):
    lengths = tuple(n * base_cfg.h for n in base_cfg.shape)
    extinction = step_extinction_time(base_cfg.init, lengths)
    if extinction is None:
        raise ConfigurationError([("t_end", "required when the initial datum is not a step")])
    return 1.5 * extinction


def compare_convergence(base_cfg, eps_list, t_end=None, sample_stride=1, perturbation=None,
                        max_workers=None, progress_callback=None):
    """
    Sup over sampled times of ||u_eps(t) - u_TV(t)|| for each eps.

    The TV reference is computed first; the Perona-Malik runs share its grid,
    tau and time samples and run concurrently.  The tail bound
    2 ||u_TV(t_end) - mean|| controls the error after t_end.
    """
    eps_list = _validate_eps_list(eps_list)
    t_end = _default_t_end(base_cfg) if t_end is None else float(t_end)
    if not isinstance(sample_stride, int) or sample_stride < 1:
        raise ConfigurationError([("sample_stride", f"must be a positive integer, got {sample_stride!r}")])

    reference_cfg = base_cfg.replace(model=FlowModel.TV, eps=None, t_end=t_end)
    started = time.perf_counter()
    reference = evolve(reference_cfg)
    reference_runtime = time.perf_counter() - started
    u0 = reference.fields[0]

    jobs = []
    for eps in eps_list:
        cfg = base_cfg.replace(model=FlowModel.PM, eps=eps, t_end=t_end)
        initial = perturbation.apply(u0, eps) if perturbation is not None else None
        if initial is not None and not initial.same_grid(u0):
            raise ConfigurationError([("perturbation", "perturbed datum is on a different grid")])
        jobs.append((cfg, initial))
    results = SweepWorker(jobs, max_workers).run(progress_callback)

    n = len(reference.times)
    samples = sorted(set(range(0, n, sample_stride)) | {n - 1})
    sup_errors, runtimes, edi_passed = [], [], []
    for eps, (trace, runtime) in zip(eps_list, results):
        if len(trace.times) != n or trace.tau != reference.tau:
            raise ConfigurationError([("tau", f"time grid of eps={eps} differs from the reference")])
        errors = [trace.fields[k].distance(reference.fields[k]) for k in samples]
        sup_errors.append(float(max(errors)))
        runtimes.append(float(runtime))
        edi_passed.append(check_edi(trace, EDI_TOL_FACTOR * trace.inner_tol).passed)

    final = reference.fields[-1]
    mean_field = final.with_values(np.full(final.shape, u0.mean()))
    tail_bound = 2.0 * final.distance(mean_field)
    logger.info("Comparison over eps %s: sup errors %s, tail bound %.3e", eps_list, sup_errors, tail_bound)
    return CompareResult(
        eps_list=eps_list,
        sup_errors=sup_errors,
        runtimes=runtimes,
        config=reference_cfg.to_dict(),
        t_end=t_end,
        tail_bound=tail_bound,
        global_bounds=[e + tail_bound for e in sup_errors],
        edi_passed=edi_passed,
        reference_runtime=reference_runtime,
    )


def export_compare(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, COMPARE_CSV)
    result.to_frame().to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
    write_json(result.to_dict(), os.path.join(out_dir, COMPARE_JSON))
    return csv_path


def rescaling_sweep(base_cfg, eps_list, t_probe, powers, max_time=None, max_workers=None):
    """
    Distances to the datum and to the mean under speed-ups (eps |ln eps|)^(-power).

    In the eps time of the rescaled flow a speed-up with exponent power is the
    time t_probe * (eps |ln eps|)^(1 - power); power 1 is the rescaling that
    yields the TV flow.  Times above max_time (default 10 t_probe) are clipped
    and flagged.
    """
    eps_list = _validate_eps_list(eps_list)
    max_time = 10.0 * t_probe if max_time is None else max_time
    plan = []
    for eps in eps_list:
        times = []
        for power in powers:
            target = t_probe * time_factor(eps, power) / time_factor(eps, 1.0)
            times.append((power, min(target, max_time), target > max_time))
        plan.append((eps, times))

    jobs = []
    for eps, times in plan:
        horizon = max(base_cfg.tau, max(t for _, t, _ in times))
        jobs.append((base_cfg.replace(model=FlowModel.PM, eps=eps, t_end=horizon), None))
    results = SweepWorker(jobs, max_workers).run()

    rows = []
    for (eps, times), (trace, _) in zip(plan, results):
        u0 = trace.fields[0]
        mean_field = u0.with_values(np.full(u0.shape, u0.mean()))
        for power, t, clipped in times:
            state = trace.field_at(t)
            rows.append({
                "eps": eps,
                "power": float(power),
                "time": float(t),
                "clipped": bool(clipped),
                "dist_initial": state.distance(u0),
                "dist_mean": state.distance(mean_field),
            })
    return pd.DataFrame(rows)
