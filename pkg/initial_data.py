"""
Named generators for initial data.

A datum is described by a short string: `step(J)`, `ramp`, `sine(k)`,
`random(seed, amplitude)` or `file(path)`.  Coordinates are taken along the
first axis, measured from the center of the domain.
"""

import logging
import re
from dataclasses import dataclass

import numpy as np

from errors import ConfigurationError
from field_exporter import load_field
from grid import Field

logger = logging.getLogger(__name__)

_SPEC_PATTERN = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")
_ARITY = {"step": (0, 1), "ramp": (0, 0), "sine": (0, 1), "random": (0, 2), "file": (1, 1)}


@dataclass(frozen=True)
class InitSpec:
    name: str
    args: tuple = ()

    def __str__(self):
        if not self.args:
            return self.name
        return f"{self.name}({','.join(str(a) for a in self.args)})"


def parse_init_spec(text):
    """Parse a datum string such as `random(42,0.5)`."""
    match = _SPEC_PATTERN.match(str(text))
    if not match or match.group(1) not in _ARITY:
        raise ConfigurationError([("init", f"Unknown initial datum {text!r}")])
    name, raw = match.group(1), match.group(2)
    args = tuple(a.strip() for a in raw.split(",")) if raw and raw.strip() else ()
    low, high = _ARITY[name]
    if not low <= len(args) <= high:
        raise ConfigurationError([("init", f"{name} takes {low} to {high} arguments, got {len(args)}")])
    if name == "file":
        return InitSpec(name, args)
    try:
        if name == "random":
            converted = tuple(int(a) if i == 0 else float(a) for i, a in enumerate(args))
        elif name == "sine":
            converted = tuple(int(a) for a in args)
        else:
            converted = tuple(float(a) for a in args)
    except ValueError as e:
        raise ConfigurationError([("init", f"Bad argument in {text!r}: {str(e)}")])
    return InitSpec(name, converted)


def _centered_x(field):
    x = field.mesh()[0]
    return x - (field.origin[0] + 0.5 * field.domain_lengths[0])


def make_initial_field(spec, shape, spacing_h, seed=None):
    """
    Build the initial Field for a datum spec on a centered grid.

    Args:
        spec: datum string or InitSpec
        shape: cells per axis
        spacing_h: cell side
        seed: overrides the seed of a `random` datum when given
    """
    if not isinstance(spec, InitSpec):
        spec = parse_init_spec(spec)
    template = Field(np.zeros(tuple(shape)), spacing_h)
    half = 0.5 * template.domain_lengths[0]
    x = _centered_x(template)
    if spec.name == "step":
        jump = spec.args[0] if spec.args else 1.0
        values = 0.5 * jump * np.sign(x)
    elif spec.name == "ramp":
        values = x
    elif spec.name == "sine":
        k = spec.args[0] if spec.args else 1
        values = np.sin(k * np.pi * x / half)
    elif spec.name == "random":
        spec_seed = spec.args[0] if spec.args else 0
        amplitude = spec.args[1] if len(spec.args) > 1 else 1.0
        rng = np.random.default_rng(spec_seed if seed is None else seed)
        values = rng.uniform(-amplitude, amplitude, size=template.shape)
    else:
        loaded = load_field(spec.args[0])
        if loaded.shape != template.shape or not np.isclose(loaded.spacing_h, spacing_h):
            raise ConfigurationError([
                ("init", f"{spec.args[0]} has grid {loaded.shape}/{loaded.spacing_h}, "
                         f"config asks for {template.shape}/{spacing_h}")
            ])
        return Field(loaded.values, spacing_h)
    logger.debug("Initial datum %s on grid %s, h=%g", spec, shape, spacing_h)
    return template.with_values(values)


def step_extinction_time(spec, domain_lengths):
    """
    Time at which the TV flow of a step datum reaches its mean, or None.

    Each plateau covers half the domain and loses height at rate 2/Lx.
    """
    if not isinstance(spec, InitSpec):
        spec = parse_init_spec(spec)
    if spec.name != "step":
        return None
    jump = spec.args[0] if spec.args else 1.0
    return abs(jump) * domain_lengths[0] / 4.0
