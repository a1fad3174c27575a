"""
Reading and writing Fields.

CSV layout: 1D fields are two columns `x,value`; 2D fields are a row-major
matrix preceded by a `# nx=..,ny=..,h=..` comment line.  The JSON container
stores shape, spacing, origin and the nested value lists.
"""

import json
import logging

import numpy as np
import pandas as pd

from errors import ConfigurationError
from grid import Field

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def export_field_csv(field, file_name):
    """
    Write a Field to CSV and return the file name actually used.

    Args:
        field: the Field to write
        file_name: target path; `.csv` is appended when missing
    """
    if not file_name.lower().endswith(".csv"):
        file_name += ".csv"
    if field.dims == 1:
        frame = pd.DataFrame({"x": field.coordinates(0), "value": field.values})
        frame.to_csv(file_name, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    else:
        nx, ny = field.shape
        with open(file_name, "w", newline="") as handle:
            handle.write(f"# nx={nx},ny={ny},h={field.spacing_h!r}\n")
            pd.DataFrame(field.values).to_csv(
                handle, header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
            )
    return file_name


def _parse_header(line):
    try:
        meta = dict(item.split("=", 1) for item in line.lstrip("#").strip().split(","))
        return int(meta["nx"]), int(meta["ny"]), float(meta["h"])
    except (KeyError, ValueError) as e:
        raise ConfigurationError([("file", f"Bad 2D field header {line.strip()!r}: {str(e)}")])


def load_field_csv(file_name):
    with open(file_name) as handle:
        first = handle.readline()
    if first.startswith("#"):
        nx, ny, h = _parse_header(first)
        values = pd.read_csv(
            file_name, comment="#", header=None, float_precision="round_trip"
        ).to_numpy(dtype=float)
        if values.shape != (nx, ny):
            raise ConfigurationError(
                [("file", f"{file_name}: header says {(nx, ny)}, data is {values.shape}")]
            )
        return Field(values, h)
    frame = pd.read_csv(file_name, float_precision="round_trip")
    if list(frame.columns) != ["x", "value"]:
        raise ConfigurationError([("file", f"{file_name}: expected columns x,value")])
    x = frame["x"].to_numpy(dtype=float)
    h = float(np.mean(np.diff(x)))
    return Field(frame["value"].to_numpy(dtype=float), h, (x[0] - 0.5 * h,))


def field_to_dict(field):
    return {
        "shape": list(field.shape),
        "spacing_h": field.spacing_h,
        "origin": list(field.origin),
        "values": field.values.tolist(),
    }


def field_from_dict(data):
    try:
        values = np.asarray(data["values"], dtype=float)
        if list(values.shape) != list(data["shape"]):
            raise ValueError(f"values have shape {values.shape}, declared {data['shape']}")
        return Field(values, data["spacing_h"], data.get("origin"))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError([("file", f"Bad field container: {str(e)}")])


def export_field_json(field, file_name):
    if not file_name.lower().endswith(".json"):
        file_name += ".json"
    with open(file_name, "w") as handle:
        json.dump(field_to_dict(field), handle)
    return file_name


def load_field_json(file_name):
    with open(file_name) as handle:
        return field_from_dict(json.load(handle))


def load_field(file_name):
    """Load a Field from a .csv or .json file."""
    lowered = file_name.lower()
    if lowered.endswith(".json"):
        return load_field_json(file_name)
    if lowered.endswith(".csv"):
        return load_field_csv(file_name)
    raise ConfigurationError([("file", f"Unsupported field file {file_name!r}")])
