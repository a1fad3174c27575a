"""
Unit tests for the metric gradient-flow diagnostics.

Requirements:
    - numpy and scipy must be installed (included in requirements.txt)
    - Run tests from the project root directory with: python -m unittest test_slope.py
"""

import math
import sys
import unittest

try:
    import numpy as np

    from errors import DomainError, UnsupportedError
    from experiment_config import ExperimentConfig
    from experiments import monotonicity_tolerances
    from flow import FlowTrace, evolve
    from gamma import JumpProfile, rescaled_profile_field
    from grid import Field
    from initial_data import make_initial_field
    from potential import ScalarPotential, convex_envelope
    from slope import (
        SampledFunctional,
        check_contraction,
        check_edi,
        check_holder,
        check_limit_hypothesis,
        check_monotonicity,
        check_slope_cone,
        check_slope_match,
        envelope_functional,
        metric_derivative,
        metric_derivative_margin,
        slope_prox,
        tv_functional,
    )
except ImportError as e:
    print(f"Error importing dependencies: {e}")
    print("Please install dependencies: pip install -r requirements.txt")
    sys.exit(1)


def _straight_line_trace(n=11, tau=0.1):
    w = np.zeros(8)
    w[0] = 1.0 / math.sqrt(0.25)
    fields = [Field(t * w, 0.25) for t in tau * np.arange(n)]
    return FlowTrace(
        model="tv", eps=None, tau=tau, inner_tol=1e-8,
        times=tau * np.arange(n),
        energies=np.zeros(n),
        step_norms=[b.distance(a) for a, b in zip(fields, fields[1:])],
        slopes=np.zeros(n),
        residuals=np.zeros(n - 1),
        fields=fields,
    )


class TestSlopeEstimates(unittest.TestCase):
    """Proximal slope estimates and metric derivatives."""

    def test_quadratic(self):
        x = np.array([3.0, 0.0])
        F = SampledFunctional(lambda y: 0.5 * float(y @ y), prox=lambda y, tau: y / (1.0 + tau))
        estimate = slope_prox(F, x)
        self.assertAlmostEqual(estimate.value, 3.0, places=6)
        self.assertEqual(len(estimate.quotients), 2)

    def test_absolute_value(self):
        def shrink(y, tau):
            return np.sign(y) * max(abs(y) - tau, 0.0)

        F = SampledFunctional(abs, prox=shrink)
        self.assertAlmostEqual(slope_prox(F, 2.0).value, 1.0, places=9)
        self.assertEqual(slope_prox(F, 0.0).value, 0.0)

    def test_unsupported_and_bad_taus(self):
        F = SampledFunctional(abs)
        with self.assertRaises(UnsupportedError):
            slope_prox(F, 1.0)
        G = SampledFunctional(abs, prox=lambda y, tau: y)
        with self.assertRaises(DomainError):
            slope_prox(G, 1.0, (1e-4, 1e-3))

    def test_proximal_and_gradient_slopes_agree(self):
        """Proximal quotients and the norm of slope_field on smooth fields."""
        F = envelope_functional(convex_envelope(ScalarPotential(0.1)))
        line = Field(np.zeros(40), 0.05)
        x = line.coordinates(0)
        plane = Field(np.zeros((12, 12)), 1.0 / 6)
        px, py = plane.mesh()
        for u in (line.with_values(0.3 * np.sin(np.pi * x)),
                  plane.with_values(0.3 * np.sin(np.pi * px) * np.cos(0.5 * np.pi * py))):
            reference = F.slope_at(u)
            self.assertGreater(reference, 0.0)
            self.assertAlmostEqual(slope_prox(F, u).value, reference, delta=1e-2 * reference)

    def test_metric_derivative_of_line(self):
        trace = _straight_line_trace()
        np.testing.assert_allclose(metric_derivative(trace), 1.0, rtol=1e-12)
        self.assertGreaterEqual(metric_derivative_margin(trace), -1e-12)

    def test_metric_derivative_of_constant(self):
        trace = _straight_line_trace(tau=0.1)
        still = FlowTrace("tv", None, 0.1, 1e-8, trace.times, trace.energies, np.zeros(10),
                          trace.slopes, trace.residuals)
        self.assertTrue(np.all(metric_derivative(still) == 0.0))


class TestTraceChecks(unittest.TestCase):
    """EDI, slope match, monotonicity, Hoelder and contraction on computed traces."""

    @classmethod
    def setUpClass(cls):
        cls.pm_trace = evolve(ExperimentConfig(model="pm", eps=0.1, n=(100,), h=0.02, tau=1e-3, t_end=0.2))

    def test_edi_passes_on_pm_trace(self):
        report = check_edi(self.pm_trace, 10 * self.pm_trace.inner_tol)
        self.assertTrue(report.passed)
        self.assertEqual(report.pairs_checked, 201 * 200 // 2)

    def test_edi_constant_trace(self):
        n = 6
        trace = FlowTrace("pm", 0.1, 0.1, 1e-8, 0.1 * np.arange(n), np.full(n, 2.0),
                          np.zeros(n - 1), np.zeros(n), np.zeros(n - 1))
        report = check_edi(trace, 0.0)
        self.assertTrue(report.passed)
        self.assertEqual(report.worst_residual, 0.0)

    def test_edi_detects_corruption(self):
        energies = self.pm_trace.energies.copy()
        energies[100] += 1.0
        corrupted = FlowTrace("pm", 0.1, self.pm_trace.tau, self.pm_trace.inner_tol, self.pm_trace.times,
                              energies, self.pm_trace.step_norms, self.pm_trace.slopes,
                              self.pm_trace.residuals)
        report = check_edi(corrupted, 10 * corrupted.inner_tol)
        self.assertFalse(report.passed)
        self.assertLess(report.worst_residual, -0.5)
        self.assertIn(100, report.worst_pair)
        excluded = check_edi(corrupted, 10 * corrupted.inner_tol, excluded={100})
        self.assertTrue(excluded.passed)
        self.assertEqual(report.to_dict()["pass"], False)

    def test_slope_match(self):
        report = check_slope_match(self.pm_trace)
        self.assertTrue(report.passed)
        self.assertEqual(report.steps_checked, 200)

    def test_monotonicity_and_holder_on_random_instances(self):
        """Energy and norms decrease and the Hoelder-1/2 bound holds on 20 random data."""
        rng = np.random.default_rng(2024)
        for i in range(20):
            dims = 1 if i % 2 == 0 else 2
            model = "pm" if i % 4 < 2 else "tv"
            cfg = ExperimentConfig(
                model=model, eps=0.1 if model == "pm" else None, dims=dims,
                n=(24,) if dims == 1 else (8, 8), h=1.0 / 12 if dims == 1 else 0.25,
                init=f"random({int(rng.integers(1 << 30))},1.0)", tau=1e-3, t_end=0.02,
            )
            trace = evolve(cfg)
            step_tol, energy_tol = monotonicity_tolerances(trace)
            report = check_monotonicity(trace, step_tol, energy_tol)
            self.assertTrue(report.passed, f"instance {i}: {report}")
            self.assertTrue(check_holder(trace).passed, f"instance {i}")

    def test_contraction_between_two_solutions(self):
        for model in ("pm", "tv"):
            traces = [
                evolve(ExperimentConfig(model=model, eps=0.1 if model == "pm" else None, n=(24,), h=1.0 / 12,
                                        init=f"random({seed},1.0)", tau=1e-3, t_end=0.02))
                for seed in (1, 2)
            ]
            step_tol, _ = monotonicity_tolerances(traces[0])
            report = check_contraction(traces[0], traces[1], 2 * step_tol)
            self.assertTrue(report.passed, f"{model}: {report.worst_increase}")

    def test_monotonicity_needs_fields(self):
        trace = FlowTrace("tv", None, 0.1, 1e-8, [0.0, 0.1], [1.0, 0.5], [0.1], [0.0, 0.0], [0.0])
        with self.assertRaises(DomainError):
            check_monotonicity(trace, 1e-8)


class TestSlopeCone(unittest.TestCase):
    """The slope cone property on sampled functionals."""

    def setUp(self):
        self.rng = np.random.default_rng(9)

    def test_convex_quadratic(self):
        F = SampledFunctional(lambda x: x * x, slope=lambda x: 2 * abs(x))
        points = list(self.rng.uniform(-3, 3, size=20))
        self.assertTrue(check_slope_cone(F, points, points).passed)

    def test_negative_absolute_value_passes(self):
        F = SampledFunctional(lambda x: -abs(x), slope=lambda x: 1.0)
        points = [0.0] + list(self.rng.uniform(-3, 3, size=20))
        self.assertTrue(check_slope_cone(F, points, points).passed)

    def test_negative_square_fails(self):
        F = SampledFunctional(lambda x: -x * x, slope=lambda x: 2 * abs(x))
        report = check_slope_cone(F, [0.0], [1.0])
        self.assertFalse(report.passed)
        self.assertEqual(report.violations, [(0, 0, -1.0)])
        self.assertEqual(report.worst_margin, -1.0)

    def test_discrete_envelope_energy(self):
        F = envelope_functional(convex_envelope(ScalarPotential(0.1)))
        centers = [Field(self.rng.normal(size=12), 1.0 / 6) for _ in range(50)]
        probes = [Field(self.rng.normal(size=12), 1.0 / 6) for _ in range(50)]
        pairs = [check_slope_cone(F, [x], [y], tol=1e-9) for x, y in zip(centers, probes)]
        self.assertTrue(all(report.passed for report in pairs))

    def test_discrete_total_variation(self):
        F = tv_functional()
        centers = [Field(self.rng.normal(size=12), 1.0 / 6) for _ in range(50)]
        probes = [Field(self.rng.normal(size=12), 1.0 / 6) for _ in range(50)]
        pairs = [check_slope_cone(F, [x], [y], tol=1e-6) for x, y in zip(centers, probes)]
        self.assertTrue(all(report.passed for report in pairs))


class TestLimitHypothesis(unittest.TestCase):
    """Energy convergence and slope lower semicontinuity along a sequence."""

    def setUp(self):
        self.F = SampledFunctional(lambda x: 0.5 * x * x, slope=abs, name="half square")

    def test_constant_sequence_holds(self):
        report = check_limit_hypothesis([self.F] * 4, self.F, 2.0, [2.0] * 4)
        self.assertEqual(report.status, "holds")
        self.assertEqual(report.energy_error, 0.0)
        self.assertEqual(report.slope_liminf, report.limit_slope)

    def test_energy_offset_fails(self):
        shifted = SampledFunctional(lambda x: 0.5 * x * x + 1.0, slope=abs)
        report = check_limit_hypothesis([shifted] * 4, self.F, 2.0, [2.0] * 4)
        self.assertEqual(report.status, "fails")
        self.assertFalse(report.energy_ok)

    def test_unbounded_premise_not_engaged(self):
        huge = SampledFunctional(lambda x: 1e20, slope=abs)
        report = check_limit_hypothesis([huge] * 2, self.F, 2.0, [2.0] * 2)
        self.assertEqual(report.status, "not_engaged")

    def test_envelope_energies_on_optimal_ramps(self):
        """
        E_eps** at the optimal ramps of a unit step, eps = 2^-n, against TV at the step.

        The energy excess decays like 1/|ln eps| (about 0.045 at eps = 2^-11),
        so the energy tolerance is 0.1 rather than the default.
        """
        profile = JumpProfile(1.0, 0.25, resolution=2000)
        eps_seq = [2.0 ** -n for n in range(4, 12)]
        F_seq = [envelope_functional(convex_envelope(ScalarPotential(eps))) for eps in eps_seq]
        approx = [rescaled_profile_field(profile, eps) for eps in eps_seq]
        step = make_initial_field("step(1.0)", (40,), 0.05)
        report = check_limit_hypothesis(F_seq, tv_functional(), step, approx, energy_tol=0.1)
        self.assertEqual(report.status, "holds")
        self.assertAlmostEqual(report.limit_energy, 1.0, delta=1e-12)
        self.assertLessEqual(report.energy_error, 0.05)
        self.assertLess(report.energies[-1], report.energies[0])
        self.assertTrue(report.slope_ok)

    def test_length_mismatch(self):
        with self.assertRaises(DomainError):
            check_limit_hypothesis([self.F], self.F, 1.0, [1.0, 2.0])


if __name__ == '__main__':
    unittest.main()
