"""
Independent convex-envelope oracle for the tests: the lower convex hull of a
dense sample of phi_eps, computed by shapely and interpolated linearly.
"""

import numpy as np
from shapely.geometry import MultiPoint

from potential import phi_eps


def lower_hull(sigma, values):
    """Vertices (x, y) of the lower convex hull of the points, sorted by x."""
    hull = MultiPoint(np.column_stack([sigma, values])).convex_hull
    ring = np.asarray(hull.exterior.coords)[:-1]
    start = int(np.lexsort((ring[:, 1], ring[:, 0]))[0])
    ring = np.roll(ring, -start, axis=0)
    # counterclockwise from the leftmost vertex is the lower chain
    if not hull.exterior.is_ccw:
        ring = np.concatenate([ring[:1], ring[:0:-1]])
    stop = int(np.argmax(ring[:, 0]))
    chain = ring[: stop + 1]
    return chain[:, 0], chain[:, 1]


def dense_envelope(pot, sigma_max, samples=200_001):
    """Return a callable evaluating the sampled lower hull of phi_eps on [0, sigma_max]."""
    sigma = np.linspace(0.0, sigma_max, samples)
    x, y = lower_hull(sigma, phi_eps(pot, sigma))
    return lambda s: np.interp(np.abs(s), x, y)
