"""
Unit tests for the potential phi_eps and its convex envelope.

The envelope is compared against an independent oracle, the lower convex
hull of a dense sample of phi_eps (hull_oracle.py).

Requirements:
    - numpy, scipy and shapely must be installed (included in requirements.txt)
    - Run tests from the project root directory with: python -m unittest test_potential.py
"""

import math
import sys
import unittest

try:
    import numpy as np

    from errors import DomainError
    from hull_oracle import dense_envelope
    from potential import (
        ScalarPotential,
        convex_envelope,
        envelope_eval,
        inflection_points,
        phi_eps,
        phi_eps_deriv,
    )
except ImportError as e:
    print(f"Error importing dependencies: {e}")
    print("Please install dependencies: pip install -r requirements.txt")
    sys.exit(1)


class TestScalarPotential(unittest.TestCase):
    """Evaluation of phi_eps and its derivative."""

    def setUp(self):
        self.pot = ScalarPotential(0.1)

    def test_log_eps_abs_is_natural_log(self):
        self.assertAlmostEqual(self.pot.log_eps_abs, 2.302585, places=6)

    def test_phi_values(self):
        """phi(0) = 0, phi(1) from the closed form, evenness."""
        self.assertEqual(phi_eps(self.pot, 0.0), 0.0)
        self.assertAlmostEqual(phi_eps(self.pot, 1.0), 1.53015, delta=1e-5)
        self.assertEqual(phi_eps(self.pot, -1.0), phi_eps(self.pot, 1.0))

    def test_phi_deriv_values(self):
        self.assertEqual(phi_eps_deriv(self.pot, 0.0), 0.0)
        self.assertAlmostEqual(phi_eps_deriv(self.pot, 1.0), 2.22150, delta=1e-4)
        self.assertEqual(phi_eps_deriv(self.pot, -1.0), -phi_eps_deriv(self.pot, 1.0))

    def test_phi_deriv_matches_finite_difference(self):
        step = 1e-6
        for sigma in (0.3, 1.0, 2.5, 17.0):
            fd = (phi_eps(self.pot, sigma + step) - phi_eps(self.pot, sigma - step)) / (2 * step)
            self.assertAlmostEqual(phi_eps_deriv(self.pot, sigma), fd, delta=1e-6)

    def test_deriv_grows_like_half_eps_sigma(self):
        sigma = 1e8
        self.assertAlmostEqual(phi_eps_deriv(self.pot, sigma) / sigma, 0.5 * self.pot.eps, places=9)

    def test_array_arguments(self):
        sigma = np.array([-2.0, 0.0, 2.0])
        values = phi_eps(self.pot, sigma)
        self.assertIsInstance(values, np.ndarray)
        self.assertEqual(values[0], values[2])
        self.assertTrue(np.all(np.diff(phi_eps(self.pot, np.linspace(0, 50, 500))) > 0))

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            phi_eps(self.pot, math.inf)
        with self.assertRaises(DomainError):
            phi_eps_deriv(self.pot, np.array([1.0, math.nan]))
        for eps in (0.0, 1.0, -0.5, math.nan):
            with self.assertRaises(DomainError):
                ScalarPotential(eps)

    def test_inflection_points_bracket_the_concave_well(self):
        for eps in (0.5, 0.1, 0.01):
            pot = ScalarPotential(eps)
            a, b = inflection_points(pot)
            self.assertLess(a, b)
            self.assertAlmostEqual(pot.second_derivative(a), 0.0, delta=1e-9 * pot.log_weight)
            self.assertAlmostEqual(pot.second_derivative(b), 0.0, delta=1e-9 * pot.log_weight)
            self.assertLess(pot.second_derivative(0.5 * (a + b)), 0.0)


class TestConvexEnvelope(unittest.TestCase):
    """Bitangent construction of the convex envelope."""

    def setUp(self):
        self.pot = ScalarPotential(0.1)
        self.env = convex_envelope(self.pot)

    def test_breakpoints_straddle_sqrt3(self):
        env = convex_envelope(ScalarPotential(0.5))
        self.assertGreater(env.sigma1, 0.0)
        self.assertLess(env.sigma1, math.sqrt(3.0))
        self.assertGreater(env.sigma2, math.sqrt(3.0))

    def test_tangency_at_both_breakpoints(self):
        for eps in (0.3, 0.1, 0.01, 1e-3):
            pot = ScalarPotential(eps)
            env = convex_envelope(pot)
            for sigma in (env.sigma1, env.sigma2):
                self.assertLessEqual(abs(phi_eps_deriv(pot, sigma) - env.slope_m), 1e-8 * env.slope_m)
                self.assertAlmostEqual(env.slope_m * sigma + env.offset_q, phi_eps(pot, sigma),
                                       delta=1e-9 * max(1.0, phi_eps(pot, sigma)))

    def test_known_breakpoints(self):
        self.assertAlmostEqual(self.env.sigma2, 18.3, delta=0.2)
        self.assertAlmostEqual(self.env.slope_m, 1.15, delta=0.02)

    def test_matches_dense_hull_oracle(self):
        """Values on a grid of step 1e-3 up to 200 agree with the sampled lower hull."""
        sigma = np.linspace(0.0, 200.0, 200_001)
        oracle = dense_envelope(self.pot, 200.0, samples=200_001)
        np.testing.assert_allclose(self.env.value(sigma), oracle(sigma), rtol=0, atol=1e-6)

    def test_below_phi_and_convex(self):
        sigma = np.linspace(0.0, 60.0, 60_001)
        values = self.env.value(sigma)
        self.assertTrue(np.all(values <= phi_eps(self.pot, sigma) + 1e-12))
        midpoints = 0.5 * (values[:-2] + values[2:]) - values[1:-1]
        self.assertTrue(np.all(midpoints >= -1e-12))

    def test_envelope_eval(self):
        self.assertEqual(envelope_eval(self.env, 0.0), (0.0, 0.0))
        outside = 2.0 * self.env.sigma2
        value, deriv = envelope_eval(self.env, outside)
        self.assertEqual(value, phi_eps(self.pot, outside))
        self.assertEqual(deriv, phi_eps_deriv(self.pot, outside))
        middle = 0.5 * (self.env.sigma1 + self.env.sigma2)
        value, deriv = envelope_eval(self.env, middle)
        self.assertLess(value, phi_eps(self.pot, middle))
        self.assertEqual(deriv, self.env.slope_m)
        self.assertEqual(envelope_eval(self.env, -middle)[1], -self.env.slope_m)

    def test_flux_ratio_continuous_at_zero(self):
        self.assertAlmostEqual(self.env.flux_ratio(0.0), self.pot.flux_ratio_at_zero, places=12)
        self.assertAlmostEqual(self.env.flux_ratio(1e-8), self.pot.flux_ratio_at_zero, places=6)
        ratios = self.env.flux_ratio(np.linspace(0.0, 100.0, 1001))
        self.assertTrue(np.all(np.diff(ratios) <= 1e-12))

    def test_curvature_zero_in_window(self):
        middle = 0.5 * (self.env.sigma1 + self.env.sigma2)
        self.assertEqual(self.env.curvature(middle), 0.0)
        self.assertGreater(self.env.curvature(0.0), 0.0)

    def test_scaled_potential_keeps_breakpoints(self):
        scaled = convex_envelope(self.pot.rescaled(self.pot.eps * self.pot.log_eps_abs))
        self.assertAlmostEqual(scaled.sigma1, self.env.sigma1, delta=1e-10)
        self.assertAlmostEqual(scaled.sigma2, self.env.sigma2, delta=1e-8)

    def test_bad_tolerance(self):
        with self.assertRaises(DomainError):
            convex_envelope(self.pot, tol=0.0)


if __name__ == '__main__':
    unittest.main()
