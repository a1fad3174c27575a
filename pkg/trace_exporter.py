"""
Writing and reading run artifacts: trace.json, snapshot CSVs, reports and manifests.

Outputs are deterministic: JSON keys are sorted and floats are written in
their shortest round-trip form, so identical runs give identical bytes.
"""

import json
import logging
import os

from errors import ConfigurationError
from field_exporter import export_field_csv, load_field_csv
from flow import FlowTrace

logger = logging.getLogger(__name__)

TRACE_FILE = "trace.json"
REPORT_FILE = "report.json"
MANIFEST_FILE = "manifest.json"


def write_json(data, file_name):
    if not file_name.lower().endswith(".json"):
        file_name += ".json"
    with open(file_name, "w") as handle:
        json.dump(data, handle, indent=1, sort_keys=True)
        handle.write("\n")
    return file_name


def snapshot_indices(n_times, stride):
    indices = list(range(0, n_times, stride))
    if indices[-1] != n_times - 1:
        indices.append(n_times - 1)
    return indices


def snapshot_name(index):
    return f"field_{index:06d}.csv"


def trace_to_dict(trace, snapshots=()):
    return {
        "model": trace.model.value,
        "eps": trace.eps,
        "tau": trace.tau,
        "inner_tol": trace.inner_tol,
        "config_hash": trace.config_hash,
        "times": trace.times.tolist(),
        "energies": trace.energies.tolist(),
        "step_norms": trace.step_norms.tolist(),
        "slopes": trace.slopes.tolist(),
        "residuals": trace.residuals.tolist(),
        "snapshots": [{"index": k, "file": snapshot_name(k)} for k in snapshots],
    }


def export_trace(trace, out_dir, stride=1):
    """
    Write trace.json and the snapshot CSVs into out_dir.

    Returns:
        path of trace.json
    """
    os.makedirs(out_dir, exist_ok=True)
    snapshots = snapshot_indices(len(trace.times), stride) if trace.has_fields else []
    for k in snapshots:
        export_field_csv(trace.fields[k], os.path.join(out_dir, snapshot_name(k)))
    path = write_json(trace_to_dict(trace, snapshots), os.path.join(out_dir, TRACE_FILE))
    logger.info("Wrote %s with %d snapshots", path, len(snapshots))
    return path


def load_trace(file_name, with_fields=True):
    """
    Read a trace.json back.

    Fields are attached only when every time has a snapshot; use
    load_snapshots for strided runs.
    """
    try:
        with open(file_name) as handle:
            data = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError([("trace", f"Error reading {file_name}: {str(e)}")])
    fields = []
    if with_fields:
        snapshots = load_snapshots(file_name, data)
        if len(snapshots) == len(data["times"]):
            fields = [snapshots[k] for k in range(len(data["times"]))]
    try:
        return FlowTrace(
            model=data["model"],
            eps=data.get("eps"),
            tau=data["tau"],
            inner_tol=data["inner_tol"],
            times=data["times"],
            energies=data["energies"],
            step_norms=data["step_norms"],
            slopes=data["slopes"],
            residuals=data["residuals"],
            fields=fields,
            config_hash=data.get("config_hash"),
        )
    except (KeyError, ValueError) as e:
        raise ConfigurationError([("trace", f"Bad trace file {file_name}: {str(e)}")])


def load_snapshots(file_name, data=None):
    """Map of time index to Field for the snapshots listed in a trace.json."""
    if data is None:
        with open(file_name) as handle:
            data = json.load(handle)
    base = os.path.dirname(os.path.abspath(file_name))
    snapshots = {}
    for entry in data.get("snapshots", []):
        path = os.path.join(base, entry["file"])
        if os.path.exists(path):
            snapshots[int(entry["index"])] = load_field_csv(path)
    return snapshots
