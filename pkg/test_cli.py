"""
Tests for the command line subcommands.

Requirements:
    - click, numpy, scipy and pandas must be installed (included in requirements.txt)
    - Run tests from the project root directory with: python -m unittest test_cli.py
"""

import json
import os
import sys
import tempfile
import unittest

try:
    import pandas as pd
    from click.testing import CliRunner

    from app import cli
    from trace_exporter import MANIFEST_FILE, TRACE_FILE
except ImportError as e:
    print(f"Error importing dependencies: {e}")
    print("Please install dependencies: pip install -r requirements.txt")
    sys.exit(1)


class TestCli(unittest.TestCase):
    """Exit codes and outputs of every subcommand."""

    def setUp(self):
        self.runner = CliRunner()
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def invoke(self, *args):
        return self.runner.invoke(cli, ["--quiet", *args], obj={})

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_envelope_table(self):
        out = self.path("env.csv")
        result = self.invoke("envelope", "--eps", "0.1", "--samples", "50", "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        table = pd.read_csv(out, float_precision="round_trip")
        self.assertEqual(list(table.columns), ["sigma", "phi", "phi_env", "phi_env_deriv"])
        self.assertEqual(len(table), 50)
        self.assertTrue((table.phi_env <= table.phi + 1e-12).all())

    def test_gamma_limsup(self):
        out = self.path("limsup.json")
        result = self.invoke("gamma", "--check", "limsup", "--eps", "0.1", "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(out) as handle:
            data = json.load(handle)
        self.assertTrue(data["pass"])
        self.assertAlmostEqual(data["rows"][0]["a_eps"], 1.15078, delta=1e-3)
        self.assertTrue(os.path.exists(self.path("limsup.csv")))

    def test_gamma_jump_cost(self):
        out = self.path("jump.json")
        result = self.invoke("gamma", "--check", "jump-cost", "--eps", "1e-3", "--resolution", "20000", "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(out) as handle:
            data = json.load(handle)
        self.assertEqual(data["optimal"], [0.25, 1.0])
        self.assertAlmostEqual(data["rows"][0]["cost"], 1.0, delta=0.1)

    def test_gamma_needs_eps(self):
        result = self.invoke("gamma", "--check", "lower-bound", "--out", self.path("lb.json"))
        self.assertEqual(result.exit_code, 2)

    def test_evolve_then_verify(self):
        run_dir = self.path("run")
        result = self.invoke("evolve", "--model", "tv", "--n", "40", "--h", "0.05", "--tau", "0.01",
                             "--t-end", "0.1", "--out", run_dir)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn(run_dir, result.output)
        self.assertTrue(os.path.exists(os.path.join(run_dir, MANIFEST_FILE)))

        report = self.path("edi.json")
        result = self.invoke("verify", "--trace", os.path.join(run_dir, TRACE_FILE), "--check", "edi", "--out", report)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(report) as handle:
            self.assertTrue(json.load(handle)["pass"])

        result = self.invoke("verify", "--trace", os.path.join(run_dir, TRACE_FILE), "--check", "scp",
                             "--tol", "1e-3", "--out", self.path("scp.json"))
        self.assertEqual(result.exit_code, 0, result.output)

    def test_invalid_tau_exits_2(self):
        result = self.invoke("evolve", "--model", "tv", "--tau", "-1", "--out", self.path("bad"))
        self.assertEqual(result.exit_code, 2)
        self.assertIn("tau", result.output)
        self.assertFalse(os.path.exists(self.path("bad")))

    def test_pm_needs_eps(self):
        result = self.invoke("evolve", "--model", "pm", "--out", self.path("bad"))
        self.assertEqual(result.exit_code, 2)
        self.assertIn("eps", result.output)

    def test_config_file(self):
        config = self.path("config.json")
        with open(config, "w") as handle:
            json.dump({"model": "pm", "eps": 0.2, "n": [20], "h": 0.1, "tau": 0.01, "t_end": 0.05}, handle)
        run_dir = self.path("from_file")
        result = self.invoke("--config", config, "evolve", "--out", run_dir)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(os.path.join(run_dir, MANIFEST_FILE)) as handle:
            self.assertEqual(json.load(handle)["config"]["eps"], 0.2)

    def test_small_compare(self):
        out = self.path("cmp")
        result = self.invoke("compare", "--n", "40", "--h", "0.05", "--tau", "0.01", "--t-end", "0.2",
                             "--eps-list", "0.3,0.2", "--workers", "1", "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        table = pd.read_csv(os.path.join(out, "compare.csv"), float_precision="round_trip")
        self.assertEqual(list(table.eps), [0.3, 0.2])

    def test_compare_rejects_increasing_list(self):
        result = self.invoke("compare", "--n", "40", "--h", "0.05", "--tau", "0.01", "--t-end", "0.2",
                             "--eps-list", "0.1,0.2", "--out", self.path("cmp"))
        self.assertEqual(result.exit_code, 2)
        self.assertIn("eps_list", result.output)


if __name__ == '__main__':
    unittest.main()
