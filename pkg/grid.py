"""
Fields on uniform rectangular grids with homogeneous Neumann boundary conditions.

Values live at cell centers.  Gradients are forward differences stored on the
face to the right of each cell; the last face along every axis is a boundary
face and carries zero flux.  The divergence is the exact negative adjoint of
the gradient for the h^dims weighted inner products.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse

from errors import ConfigurationError, DomainError
from potential import phi_eps

logger = logging.getLogger(__name__)


class EnergyKind(Enum):
    E_EPS = "E_eps"            # nonconvex Perona-Malik energy
    E_EPS_STAR = "E_eps_star"  # its convexification
    TV = "TV"                  # total variation


def _centered_origin(shape, spacing_h):
    return tuple(-0.5 * n * spacing_h for n in shape)


def _check_spacing(spacing_h):
    h = float(spacing_h)
    if not math.isfinite(h) or h <= 0.0:
        raise DomainError(f"spacing_h must be positive, got {spacing_h!r}")
    return h


def _check_origin(origin, shape, spacing_h):
    if origin is None:
        return _centered_origin(shape, spacing_h)
    origin = tuple(float(o) for o in np.atleast_1d(origin))
    if len(origin) != len(shape):
        raise DomainError(f"origin needs {len(shape)} coordinates, got {len(origin)}")
    return origin


@dataclass(frozen=True, eq=False)
class Field:
    """
    A scalar function on a 1D or 2D grid of cells of side spacing_h.

    The domain is the rectangle starting at origin with side lengths
    shape * spacing_h; by default it is centered at 0.
    """

    values: np.ndarray
    spacing_h: float
    origin: tuple = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim not in (1, 2):
            raise DomainError(f"Fields are 1D or 2D, got {values.ndim} dimensions")
        if min(values.shape) < 2:
            raise DomainError(f"Every axis needs at least 2 cells, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("Field values must be finite")
        h = _check_spacing(self.spacing_h)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing_h", h)
        object.__setattr__(self, "origin", _check_origin(self.origin, values.shape, h))

    @property
    def dims(self):
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def cell_volume(self):
        return self.spacing_h ** self.dims

    @property
    def domain_lengths(self):
        return tuple(n * self.spacing_h for n in self.shape)

    @property
    def measure(self):
        return float(np.prod(self.domain_lengths))

    def coordinates(self, axis=0):
        """Cell-center coordinates along one axis."""
        n = self.shape[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing_h

    def mesh(self):
        return np.meshgrid(*(self.coordinates(k) for k in range(self.dims)), indexing="ij")

    def with_values(self, values):
        return Field(values, self.spacing_h, self.origin)

    def same_grid(self, other):
        return self.shape == other.shape and self.spacing_h == other.spacing_h

    def _require_same_grid(self, other):
        if not self.same_grid(other):
            raise DomainError(
                f"Grid mismatch: {self.shape}/{self.spacing_h} vs {other.shape}/{other.spacing_h}"
            )

    def mean(self):
        return float(np.mean(self.values))

    def norm(self, p=2):
        if p == np.inf:
            return float(np.max(np.abs(self.values)))
        return float((np.sum(np.abs(self.values) ** p) * self.cell_volume) ** (1.0 / p))

    def inner(self, other):
        self._require_same_grid(other)
        return float(np.sum(self.values * other.values) * self.cell_volume)

    def distance(self, other, p=2):
        self._require_same_grid(other)
        return self.with_values(self.values - other.values).norm(p)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Face-centered vector field; component k lives on the faces normal to axis k."""

    components: tuple
    spacing_h: float
    origin: tuple = None

    def __post_init__(self):
        comps = tuple(np.array(c, dtype=float) for c in self.components)
        if not comps:
            raise DomainError("VectorField needs at least one component")
        shape = comps[0].shape
        if len(comps) != len(shape) or any(c.shape != shape for c in comps):
            raise DomainError("VectorField needs one component per axis, all of the grid shape")
        h = _check_spacing(self.spacing_h)
        for axis, comp in enumerate(comps):
            if np.any(comp[_boundary_faces(axis, len(shape))] != 0.0):
                raise DomainError(f"Component {axis} has nonzero flux through the boundary")
            comp.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "spacing_h", h)
        object.__setattr__(self, "origin", _check_origin(self.origin, shape, h))

    @classmethod
    def admissible(cls, components, spacing_h, origin=None):
        """Build a field after clearing the boundary faces."""
        comps = [np.array(c, dtype=float) for c in components]
        for axis, comp in enumerate(comps):
            comp[_boundary_faces(axis, comp.ndim)] = 0.0
        return cls(tuple(comps), spacing_h, origin)

    @property
    def dims(self):
        return len(self.components)

    @property
    def shape(self):
        return self.components[0].shape

    @property
    def cell_volume(self):
        return self.spacing_h ** self.dims

    def cell_norm(self):
        return np.sqrt(sum(c * c for c in self.components))

    def inner(self, other):
        return float(sum(np.sum(a * b) for a, b in zip(self.components, other.components)) * self.cell_volume)


def _interior_faces(axis, dims):
    return tuple(slice(0, -1) if k == axis else slice(None) for k in range(dims))


def _boundary_faces(axis, dims):
    return tuple(slice(-1, None) if k == axis else slice(None) for k in range(dims))


def forward_differences(values, spacing_h):
    """Array form of the gradient: one face array per axis, last face 0."""
    comps = []
    for axis in range(values.ndim):
        comp = np.zeros(values.shape)
        comp[_interior_faces(axis, values.ndim)] = np.diff(values, axis=axis) / spacing_h
        comps.append(comp)
    return comps


def backward_divergence(components, spacing_h):
    """Array form of the divergence; boundary faces are read as zero."""
    dims = len(components)
    out = np.zeros(components[0].shape)
    for axis, comp in enumerate(components):
        pad = [(0, 0)] * dims
        pad[axis] = (1, 1)
        out += np.diff(np.pad(comp[_interior_faces(axis, dims)], pad), axis=axis)
    return out / spacing_h


def gradient(u):
    """Forward differences over h; the last face on every axis is 0."""
    return VectorField(tuple(forward_differences(u.values, u.spacing_h)), u.spacing_h, u.origin)


def divergence(p):
    """Backward differences of the interior faces, padded with zero boundary flux."""
    return Field(backward_divergence(p.components, p.spacing_h), p.spacing_h, p.origin)


def gradient_magnitude(u):
    """Euclidean norm of the forward gradient gathered per cell."""
    return gradient(u).cell_norm()


def energy(u, kind, pot=None, env=None):
    """
    Discrete energy h^dims * sum over cells of g(|grad u|).

    g is phi_eps for E_EPS, the envelope for E_EPS_STAR and the identity for TV.
    """
    kind = EnergyKind(kind)
    r = gradient_magnitude(u)
    if kind is EnergyKind.TV:
        density = r
    elif kind is EnergyKind.E_EPS:
        if pot is None and env is None:
            raise ConfigurationError([("pot", "E_eps needs a ScalarPotential")])
        density = phi_eps(pot if pot is not None else env.source, r)
    else:
        if env is None:
            raise ConfigurationError([("env", "E_eps_star needs a ConvexEnvelope")])
        density = env.value(r)
    return float(np.sum(density) * u.cell_volume)


def total_variation(u):
    return energy(u, EnergyKind.TV)


def flux(u, env):
    """g(|grad u|) * grad u with g the envelope flux ratio."""
    grad = gradient(u)
    ratio = env.flux_ratio(grad.cell_norm())
    return VectorField(tuple(ratio * c for c in grad.components), u.spacing_h, u.origin)


def slope_field(u, env):
    """
    L2 gradient of the discrete convexified energy, -div(flux).

    Its discrete L2 norm is the slope of E_eps** at u, and
    u - tau * slope_field(u) is one explicit Euler step of the flow.
    """
    div = divergence(flux(u, env))
    return div.with_values(-div.values)


def _difference_1d(n, spacing_h):
    main = -np.ones(n)
    main[-1] = 0.0
    return sparse.diags([main, np.ones(n - 1)], [0, 1], shape=(n, n), format="csr") / spacing_h


def difference_matrices(shape, spacing_h):
    """
    Sparse matrices D_k with D_k @ u.ravel() equal to gradient component k.

    Flattening is C order; divergence(p) equals -sum_k D_k.T @ p_k.
    """
    if len(shape) == 1:
        return [_difference_1d(shape[0], spacing_h)]
    nx, ny = shape
    return [
        sparse.kron(_difference_1d(nx, spacing_h), sparse.identity(ny), format="csr"),
        sparse.kron(sparse.identity(nx), _difference_1d(ny, spacing_h), format="csr"),
    ]
