"""
Command line entry point of the flow lab.

Subcommands: envelope, evolve, verify, gamma, compare.  Every subcommand
writes JSON or CSV; a failed check or run exits with status 1 and an invalid
configuration with status 2.
"""

import logging
import os
import sys

import click
import numpy as np
import pandas as pd

from errors import ConfigurationError, LabError
from experiment_config import INNER_METHODS, ExperimentConfig
from experiments import (
    SinePerturbation,
    __version__,
    compare_convergence,
    export_compare,
    rescaling_sweep,
    run_experiment,
)
from field_exporter import FLOAT_FORMAT
from flow_model import FlowModel
from gamma import (
    DEFAULT_SAMPLES,
    JumpProfile,
    check_chord,
    compactness_bound,
    find_eps1,
    jump_cost,
    jump_cost_limit,
    limsup_coeff,
    lower_bound_margin,
    optimal_eta,
    search_optimal_eta,
)
from initial_data import make_initial_field
from potential import ScalarPotential, convex_envelope, phi_eps
from slope import check_edi, check_slope_cone, check_slope_match, envelope_functional, tv_functional
from trace_exporter import load_trace, write_json

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
MAX_SCP_CENTERS = 20


def _fail_config(e):
    for name, message in e.problems:
        click.echo(f"invalid {name or 'configuration'}: {message}", err=True)
    sys.exit(2)


def _echo_progress(percent):
    logger.info("Progress: %d%%", percent)


def _base_config(ctx, **overrides):
    """The --config file (or the defaults) with every explicitly given flag applied."""
    obj = ctx.obj
    try:
        cfg = ExperimentConfig.from_json_file(obj["config"]) if obj["config"] else ExperimentConfig()
        changes = {k: v for k, v in overrides.items() if v is not None}
        if obj["seed"] is not None:
            changes["seed"] = obj["seed"]
        if "dims" in changes and "n" not in changes:
            changes["n"] = cfg.n[0]
        return cfg.replace(**changes)
    except ConfigurationError as e:
        _fail_config(e)


def _out_path(ctx, out, default_name):
    if out:
        return out
    return os.path.join(ctx.obj["out"] or ".", default_name)


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON experiment configuration")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Default output directory")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), help="Seed for random initial data")
@click.option("--quiet", is_flag=True, help="Only log warnings and errors")
@click.pass_context
def cli(ctx, config_path, out_dir, seed, quiet):
    """Regularized Perona-Malik and total variation flow lab."""
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj.update(config=config_path, out=out_dir, seed=seed)


@cli.command()
@click.option("--eps", type=float, required=True)
@click.option("--sigma-max", type=float, default=None, help="Default: 1.5 times the second breakpoint")
@click.option("--samples", type=click.IntRange(2), default=1000)
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
def envelope(ctx, eps, sigma_max, samples, out):
    """Tabulate phi_eps and its convex envelope."""
    try:
        pot = ScalarPotential(eps)
        env = convex_envelope(pot)
    except LabError as e:
        raise click.ClickException(str(e))
    sigma_max = 1.5 * env.sigma2 if sigma_max is None else sigma_max
    sigma = np.linspace(0.0, sigma_max, samples)
    table = pd.DataFrame({
        "sigma": sigma,
        "phi": phi_eps(pot, sigma),
        "phi_env": env.value(sigma),
        "phi_env_deriv": env.derivative(sigma),
    })
    path = _out_path(ctx, out, f"envelope_eps{eps:g}.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Envelope eps=%g: sigma1=%.8g sigma2=%.8g m=%.8g, written to %s",
                eps, env.sigma1, env.sigma2, env.slope_m, path)


def _evolve_options(func):
    options = [
        click.option("--model", type=click.Choice([m.value for m in FlowModel])),
        click.option("--eps", type=float),
        click.option("--dims", type=click.Choice(["1", "2"])),
        click.option("--n", type=click.IntRange(2)),
        click.option("--h", type=float),
        click.option("--init", type=str),
        click.option("--tau", type=float),
        click.option("--t-end", type=float),
        click.option("--inner-tol", type=float),
        click.option("--method", type=click.Choice(INNER_METHODS)),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _overrides(model, eps, dims, n, h, init, tau, t_end, inner_tol, method):
    return dict(
        model=model, eps=eps, dims=int(dims) if dims else None, n=n, h=h, init=init,
        tau=tau, t_end=t_end, inner_tol=inner_tol, inner_method=method,
    )


@cli.command()
@_evolve_options
@click.option("--stride", type=click.IntRange(1), help="Snapshot stride")
@click.option("--out", type=click.Path(file_okay=False))
@click.pass_context
def evolve(ctx, model, eps, dims, n, h, init, tau, t_end, inner_tol, method, stride, out):
    """Run one evolution and write its trace, report and manifest."""
    cfg = _base_config(
        ctx, snapshot_stride=stride, **_overrides(model, eps, dims, n, h, init, tau, t_end, inner_tol, method)
    )
    out_dir = out or cfg.out_dir or (os.path.join(ctx.obj["out"], cfg.config_hash()) if ctx.obj["out"] else None)
    result = run_experiment(cfg, out_dir, progress_callback=_echo_progress)
    click.echo(result.out_dir)
    sys.exit(result.exit_code)


def _scp_report(trace, tol):
    if not trace.has_fields:
        raise click.ClickException("The slope cone check needs a snapshot for every time (stride 1)")
    if trace.model is FlowModel.PM:
        F = envelope_functional(convex_envelope(ScalarPotential(trace.eps)), trace.inner_tol)
    else:
        F = tv_functional(trace.inner_tol)
    stride = max(1, len(trace.fields) // MAX_SCP_CENTERS)
    picked = list(range(0, len(trace.fields), stride))
    centers = [trace.fields[k] for k in picked]
    slopes = [float(trace.slopes[k]) for k in picked]
    return check_slope_cone(F, centers, trace.fields, slopes=slopes, tol=tol)


@cli.command()
@click.option("--trace", "trace_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--check", type=click.Choice(["edi", "slope-match", "scp"]), required=True)
@click.option("--tol", type=float, default=None, help="Default: 10 inner_tol (edi), 2 inner_tol/tau (slope-match), inner_tol (scp)")
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
def verify(ctx, trace_path, check, tol, out):
    """Check a stored trace."""
    try:
        trace = load_trace(trace_path, with_fields=check == "scp")
    except ConfigurationError as e:
        _fail_config(e)
    if check == "edi":
        report = check_edi(trace, 10.0 * trace.inner_tol if tol is None else tol)
    elif check == "slope-match":
        report = check_slope_match(trace, tol)
    else:
        report = _scp_report(trace, trace.inner_tol if tol is None else tol)
    data = report.to_dict()
    path = write_json(data, _out_path(ctx, out, f"verify_{check}.json"))
    click.echo(path)
    sys.exit(0 if data["pass"] else 1)


def _gamma_report(check, eps, a, b, sigma_max, samples, J, eta, resolution, n, init):
    if check == "lower-bound":
        report = lower_bound_margin(eps, a, b, sigma_max, samples)
        return report.to_dict(), report.passed, None
    if check == "eps1":
        report = find_eps1(a, b, samples, progress_callback=_echo_progress)
        table = pd.DataFrame(report.to_dict()["tested"])
        return report.to_dict(), report.found, table
    if check == "limsup":
        eps_values = [eps] if eps is not None else [0.1, 0.05, 0.01, 0.005, 0.001]
        rows = []
        for value in eps_values:
            chord = check_chord(value, samples)
            rows.append({"eps": value, "a_eps": limsup_coeff(value), "worst_excess": chord.worst_excess, "pass": chord.passed})
        table = pd.DataFrame(rows)
        return {"rows": rows, "pass": bool(table["pass"].all())}, bool(table["pass"].all()), table
    if check == "jump-cost":
        profile = JumpProfile(J, eta, resolution=resolution)
        eps_values = [eps] if eps is not None else [1e-1, 1e-2, 1e-3]
        rows = [{"eps": value, "cost": jump_cost(profile, value)} for value in eps_values]
        best_eta, best_cost = search_optimal_eta(J)
        data = {
            "J": J, "eta": eta, "limit": jump_cost_limit(J, eta),
            "optimal": list(optimal_eta(J)), "searched": [best_eta, best_cost], "rows": rows,
        }
        return data, True, pd.DataFrame(rows)
    u = make_initial_field(init, (n,), 2.0 / n)
    report = compactness_bound(u, eps)
    return report.to_dict(), report.passed, None


@cli.command()
@click.option("--check", type=click.Choice(["lower-bound", "eps1", "limsup", "jump-cost", "compactness"]), required=True)
@click.option("--eps", type=float)
@click.option("--a", type=float, default=0.5)
@click.option("--b", type=float, default=0.5)
@click.option("--sigma-max", type=float)
@click.option("--samples", type=click.IntRange(16), default=DEFAULT_SAMPLES)
@click.option("--J", "J", type=float, default=1.0)
@click.option("--eta", type=float, default=0.25)
@click.option("--resolution", type=click.IntRange(1), default=40_000)
@click.option("--n", type=click.IntRange(2), default=400)
@click.option("--init", type=str, default="step(1.0)")
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
def gamma(ctx, check, eps, a, b, sigma_max, samples, J, eta, resolution, n, init, out):
    """Numeric checks of the Gamma-convergence bounds."""
    if eps is None and check in ("lower-bound", "compactness"):
        raise click.UsageError(f"--eps is required for --check {check}")
    try:
        data, passed, table = _gamma_report(check, eps, a, b, sigma_max, samples, J, eta, resolution, n, init)
    except ConfigurationError as e:
        _fail_config(e)
    except LabError as e:
        raise click.ClickException(str(e))
    path = write_json(data, _out_path(ctx, out, f"gamma_{check}.json"))
    if table is not None:
        table.to_csv(os.path.splitext(path)[0] + ".csv", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    click.echo(path)
    sys.exit(0 if passed else 1)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma separated numbers, got {text!r}")


@cli.command()
@_evolve_options
@click.option("--eps-list", default="0.3,0.2,0.1,0.05", show_default=True)
@click.option("--stride", type=click.IntRange(1), default=1, help="Time sampling stride of the sup error")
@click.option("--workers", type=click.IntRange(1))
@click.option("--perturb-sine", type=click.IntRange(1), help="Add eps * sin(k pi x) to the datum of each run")
@click.option("--rescaling-powers", default=None, help="Also sweep speed-up exponents, e.g. 0.5,1,1.5")
@click.option("--out", type=click.Path(file_okay=False))
@click.pass_context
def compare(ctx, model, eps, dims, n, h, init, tau, t_end, inner_tol, method, eps_list, stride, workers,
            perturb_sine, rescaling_powers, out):
    """Sup-in-time distance of the Perona-Malik runs to the TV flow."""
    cfg = _base_config(ctx, **_overrides(None, None, dims, n, h, init, tau, None, inner_tol, method))
    out_dir = out or ctx.obj["out"] or "compare"
    perturbation = SinePerturbation(perturb_sine) if perturb_sine else None
    try:
        result = compare_convergence(
            cfg, _float_list(eps_list), t_end=t_end, sample_stride=stride, perturbation=perturbation,
            max_workers=workers, progress_callback=_echo_progress,
        )
        path = export_compare(result, out_dir)
        if rescaling_powers:
            sweep = rescaling_sweep(cfg, result.eps_list, result.t_end / 3.0, _float_list(rescaling_powers),
                                    max_workers=workers)
            sweep.to_csv(os.path.join(out_dir, "rescaling.csv"), index=False, float_format=FLOAT_FORMAT,
                         lineterminator="\n")
    except ConfigurationError as e:
        _fail_config(e)
    except LabError as e:
        raise click.ClickException(str(e))
    click.echo(path)
    sys.exit(0 if all(result.edi_passed) else 1)


if __name__ == "__main__":
    cli(obj={})
