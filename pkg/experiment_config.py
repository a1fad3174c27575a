"""
Declarative description of one evolution run.

Configurations are JSON objects carrying a `schema_version`.  Unknown keys are
rejected and validation reports every offending field at once.
"""

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

from errors import ConfigurationError
from flow_model import FlowModel
from initial_data import parse_init_spec

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_TAU = 1e-3
DEFAULT_INNER_TOL = 1e-8
INNER_METHODS = ("newton", "descent")


def _positive(value):
    try:
        value = float(value)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) and value > 0 else None


@dataclass(frozen=True)
class ExperimentConfig:
    model: FlowModel = FlowModel.TV
    eps: float = None
    dims: int = 1
    n: tuple = (400,)
    h: float = 0.005
    init: str = "step(1.0)"
    tau: float = DEFAULT_TAU
    t_end: float = 0.6
    inner_tol: float = DEFAULT_INNER_TOL
    inner_method: str = "newton"
    max_inner_iter: int = None
    snapshot_stride: int = 1
    seed: int = None
    out_dir: str = field(default=None, compare=False)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        problems = []
        setattr_ = lambda name, value: object.__setattr__(self, name, value)

        if self.schema_version != SCHEMA_VERSION:
            problems.append(("schema_version", f"expected {SCHEMA_VERSION}, got {self.schema_version!r}"))

        try:
            setattr_("model", FlowModel(self.model))
        except ValueError:
            problems.append(("model", f"must be one of {[m.value for m in FlowModel]}, got {self.model!r}"))

        if self.dims not in (1, 2):
            problems.append(("dims", f"must be 1 or 2, got {self.dims!r}"))
        else:
            n = self.n
            if isinstance(n, int):
                n = (n,) * self.dims
            try:
                n = tuple(int(k) for k in n)
            except (TypeError, ValueError):
                n = ()
            if len(n) != self.dims or any(k < 2 for k in n):
                problems.append(("n", f"needs {self.dims} axis sizes of at least 2, got {self.n!r}"))
            else:
                setattr_("n", n)

        for name in ("h", "tau", "inner_tol"):
            value = _positive(getattr(self, name))
            if value is None:
                problems.append((name, f"must be a positive number, got {getattr(self, name)!r}"))
            else:
                setattr_(name, value)

        t_end = _positive(self.t_end)
        if t_end is None or (isinstance(self.tau, float) and t_end < self.tau):
            problems.append(("t_end", f"must be at least tau, got {self.t_end!r}"))
        else:
            setattr_("t_end", t_end)

        if self.model is FlowModel.PM:
            eps = _positive(self.eps)
            if eps is None or eps >= 1.0:
                problems.append(("eps", f"must lie in (0, 1) for the pm model, got {self.eps!r}"))
            else:
                setattr_("eps", eps)

        if self.inner_method not in INNER_METHODS:
            problems.append(("inner_method", f"must be one of {INNER_METHODS}, got {self.inner_method!r}"))
        if self.max_inner_iter is not None and (not isinstance(self.max_inner_iter, int) or self.max_inner_iter < 1):
            problems.append(("max_inner_iter", f"must be a positive integer, got {self.max_inner_iter!r}"))
        if not isinstance(self.snapshot_stride, int) or self.snapshot_stride < 1:
            problems.append(("snapshot_stride", f"must be a positive integer, got {self.snapshot_stride!r}"))
        if self.seed is not None and (not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64):
            problems.append(("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}"))

        try:
            parse_init_spec(self.init)
        except ConfigurationError as e:
            problems.extend(e.problems)

        if problems:
            raise ConfigurationError(problems)

    @property
    def shape(self):
        return self.n

    @property
    def n_steps(self):
        return int(round(self.t_end / self.tau))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        data = dataclasses.asdict(self)
        data["model"] = self.model.value
        data["n"] = list(self.n)
        return data

    def config_hash(self):
        """Hash of the run-defining fields; the output directory is excluded."""
        data = self.to_dict()
        data.pop("out_dir")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError([("", "configuration must be a JSON object")])
        known = {f.name for f in dataclasses.fields(cls)}
        problems = [(key, "unknown key") for key in sorted(set(data) - known)]
        try:
            config = cls(**{k: v for k, v in data.items() if k in known})
        except ConfigurationError as e:
            problems.extend(e.problems)
            config = None
        if problems:
            raise ConfigurationError(problems)
        return config

    @classmethod
    def from_json_file(cls, file_name):
        try:
            with open(file_name) as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError([("config", f"Error reading {file_name}: {str(e)}")])
        logger.info("Loaded configuration from %s", file_name)
        return cls.from_dict(data)
