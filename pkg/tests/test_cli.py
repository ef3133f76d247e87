import io
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

from muonpp.cli.__main__ import main
from muonpp.cli.config import COMMANDS, Param, RunConfig, format_value, parse_config, read_config_file
from muonpp.cli.exceptions import ConfigError
from muonpp.cli.runner import EXIT_FAIL, EXIT_OK, EXIT_USAGE, CommandDispatcher
from muonpp.services.linalg.matrix import read_mat1, write_mat1
from muonpp.services.rmt.dto import ExperimentReport, Verdict

BUDGET_ARGS = ["budget", "--eta", "0.001", "--n", "10000", "--init-range", "0.02", "--base-width", "2"]


class ParseConfigTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_budget_flags(self):
        config = parse_config(BUDGET_ARGS)
        self.assertEqual(config.command, "budget")
        self.assertEqual(config.parameters["eta"], 0.001)
        self.assertEqual(config.parameters["n"], 10000)
        self.assertEqual(config.parameters["batch_size"], 1)
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.log_level, "WARNING")

    def test_flags_override_the_file(self):
        path = self.root / "run.conf"
        path.write_text("# budget run\nseed = 7\neta = 0.002\ninit-range = 0.02\n", encoding="utf-8")
        config = parse_config(["budget", "--config", str(path), "--n", "64", "--base-width", "4", "--seed", "9"])
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.parameters["eta"], 0.002)
        self.assertEqual(config.parameters["init_range"], 0.02)
        from_file = parse_config(["budget", "--n", "64", "--base-width", "4"], file=path)
        self.assertEqual(from_file.seed, 7)

    def test_rho_outside_the_interval(self):
        with self.assertRaises(ConfigError) as caught:
            parse_config(["corr-sample", "--m", "2", "--n", "2", "--rho", "2.0"])
        self.assertEqual(caught.exception.key, "rho")
        self.assertIn("-0.333333", str(caught.exception))

    def test_negative_rho_inside_the_interval(self):
        config = parse_config(["corr-sample", "--m", "2", "--n", "2", "--rho=-0.25"])
        self.assertEqual(config.parameters["rho"], -0.25)

    def test_unknown_flag(self):
        with self.assertRaises(ConfigError) as caught:
            parse_config(BUDGET_ARGS + ["--bogus", "1"])
        self.assertEqual(caught.exception.key, "bogus")

    def test_unknown_file_key(self):
        path = self.root / "run.conf"
        path.write_text("trials = 3\n", encoding="utf-8")
        with self.assertRaises(ConfigError) as caught:
            parse_config(BUDGET_ARGS + ["--config", str(path)])
        self.assertEqual(caught.exception.key, "trials")

    def test_missing_required_key(self):
        with self.assertRaises(ConfigError) as caught:
            parse_config(["budget", "--eta", "0.001"])
        self.assertEqual(caught.exception.key, "n")

    def test_rescale_needs_its_constants(self):
        with self.assertRaises(ConfigError) as caught:
            parse_config(["corr-estimate", "--weight", "w.mat1", "--rescale", "true", "--rho-prev", "0.1"])
        self.assertEqual(caught.exception.key, "C")

    def test_bad_values(self):
        for argv, key in (
            (BUDGET_ARGS + ["--batch-size", "two"], "batch_size"),
            (["rmt-gap", "--ns", ","], "ns"),
            (["rmt-gap", "--method", "qr"], "method"),
            (["rmt-msign", "--trials", "10", "--seed", "-1"], "seed"),
            (BUDGET_ARGS + ["--log-level", "LOUD"], "log_level"),
            (BUDGET_ARGS + ["--eta", "nan"], "eta"),
        ):
            with self.subTest(argv=argv), self.assertRaises(ConfigError) as caught:
                parse_config(argv)
            self.assertEqual(caught.exception.key, key)

    def test_unknown_or_missing_command(self):
        for argv in ([], ["--seed", "1"], ["fly"]):
            with self.subTest(argv=argv), self.assertRaises(ConfigError) as caught:
                parse_config(argv)
            self.assertEqual(caught.exception.key, "command")

    def test_unreadable_config_file(self):
        with self.assertRaises(ConfigError) as caught:
            read_config_file(self.root / "missing.conf")
        self.assertEqual(caught.exception.key, "config")

    def test_typed_lists(self):
        config = parse_config(["rmt-preserve", "--dims", "8x8, 24x16", "--trials", "20"])
        self.assertEqual(config.parameters["dims"], ((8, 8), (24, 16)))
        config = parse_config(["sweep", "--widths", "4,8,2", "--etas", "0.01,0.1"])
        self.assertEqual(config.parameters["widths"], (4, 8, 2))
        self.assertEqual(config.parameters["multipliers"], (1, 2, 4, 8))

    def test_format_value(self):
        self.assertEqual(format_value(True), "true")
        self.assertEqual(format_value(((8, 8), (24, 16))), "8x8,24x16")
        self.assertEqual(format_value((1, 2)), "1,2")
        self.assertEqual(Param("k", "bool").parse("yes"), True)

    def test_every_command_has_a_description(self):
        for name, command in COMMANDS.items():
            self.assertEqual(command.name, name)
            self.assertTrue(command.description)


class DispatchTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.stdout = io.StringIO()

    def run_command(self, argv, **services):
        config = parse_config(argv + ["--output-dir", str(self.root / "run")])
        return config, CommandDispatcher(stdout=self.stdout, **services).dispatch(config)

    def test_budget(self):
        config, code = self.run_command(BUDGET_ARGS)
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(self.stdout.getvalue().strip(), "T_threshold=2000 tokens=2000")
        self.assertTrue((config.output_dir / "budget.csv").exists())

    def test_manifest_is_a_config_file(self):
        config, _ = self.run_command(BUDGET_ARGS + ["--seed", "5"])
        manifest = config.output_dir / "manifest.txt"
        self.assertTrue(manifest.read_text(encoding="utf-8").startswith("# muonpp"))
        again = parse_config(["budget", "--config", str(manifest)])
        self.assertEqual(again.parameters, config.parameters)
        self.assertEqual(again.seed, 5)
        self.assertEqual(again.output_dir, config.output_dir)

    def test_counterexample_pass(self):
        config, code = self.run_command(["rmt-counterexample"])
        self.assertEqual(code, EXIT_OK)
        verdict = (config.output_dir / "rmt-counterexample.verdict.txt").read_text(encoding="utf-8")
        self.assertEqual(verdict, "pass tolerance=1e-12\n")
        summary = (config.output_dir / "rmt-counterexample.summary.txt").read_text(encoding="utf-8")
        self.assertIn("parameter.delta = 0.1", summary)
        rows = pd.read_csv(config.output_dir / "rmt-counterexample.csv")
        self.assertEqual(list(rows["case"]), ["inside", "edge", "beyond"])

    def test_fail_verdict_exits_one(self):
        lab = mock.Mock()
        lab.run_counterexample.return_value = ExperimentReport(
            name="rmt-counterexample", parameters={"delta": 0.1}, rows=[{"case": "beyond"}],
            verdict=Verdict.FAIL, tolerance_used=1e-12,
        )
        with self.assertLogs("muonpp.cli", level="ERROR"):
            _, code = self.run_command(["rmt-counterexample"], lab=lab)
        self.assertEqual(code, EXIT_FAIL)
        lab.run_counterexample.assert_called_once_with(delta=0.1)

    def test_inconclusive_exits_zero(self):
        lab = mock.Mock()
        lab.run_msign_experiment.return_value = ExperimentReport(
            name="rmt-msign", parameters={}, rows=[{"trial": 0}], verdict=Verdict.INCONCLUSIVE, tolerance_used=1e-6,
        )
        with self.assertLogs("muonpp.cli", level="WARNING"):
            _, code = self.run_command(["rmt-msign", "--trials", "2"], lab=lab)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("rmt-msign inconclusive", self.stdout.getvalue())

    def test_missing_fixture_exits_two(self):
        argv = ["step", "--weight", str(self.root / "absent.mat1"), "--grad", str(self.root / "absent.mat1")]
        with self.assertLogs("muonpp.cli", level="ERROR"):
            _, code = self.run_command(argv + ["--eta", "0.1"])
        self.assertEqual(code, EXIT_USAGE)

    def test_step(self):
        weight = write_mat1(self.root / "w.mat1", np.diag([1.0, 0.2]))
        grad = write_mat1(self.root / "g.mat1", np.diag([0.0, -1.0]))
        argv = ["step", "--weight", str(weight), "--grad", str(grad), "--eta", "0.5", "--msign-mode", "exact"]
        config, code = self.run_command(argv)
        self.assertEqual(code, EXIT_OK)
        updated = read_mat1(config.output_dir / "step.weight.mat1")
        np.testing.assert_allclose(updated, np.diag([1.0, 0.7]), atol=1e-12)
        self.assertIn("spectral_norm_after=1", self.stdout.getvalue())

    def test_corr_sample(self):
        config, code = self.run_command(["corr-sample", "--m", "4", "--n", "4", "--rho", "0.1", "--seed", "3"])
        self.assertEqual(code, EXIT_OK)
        row = pd.read_csv(config.output_dir / "corr-sample.csv").iloc[0]
        self.assertEqual(row["seed"], 3)
        self.assertEqual(read_mat1(config.output_dir / "corr-sample.mat1").shape, (4, 4))

    def test_corr_estimate_with_rescale(self):
        weight = write_mat1(self.root / "w.mat1", np.ones((2, 2)))
        argv = ["corr-estimate", "--weight", str(weight), "--rescale", "true", "--C", "0.5", "--rho-prev", "0.25"]
        config, code = self.run_command(argv)
        self.assertEqual(code, EXIT_OK)
        row = pd.read_csv(config.output_dir / "corr-estimate.csv").iloc[0]
        self.assertAlmostEqual(row["rho_hat"], 1.0)
        self.assertTrue(row["fired"])
        self.assertAlmostEqual(row["factor"], 0.5)
        rescaled = read_mat1(config.output_dir / "corr-estimate.weight.mat1")
        np.testing.assert_allclose(rescaled, 0.5 * np.ones((2, 2)))


class MainTests(unittest.TestCase):
    def test_unknown_command(self):
        with self.assertLogs("muonpp.cli", level="ERROR"), mock.patch("sys.stderr", new_callable=io.StringIO):
            self.assertEqual(main(["fly"]), EXIT_USAGE)

    def test_help(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            self.assertEqual(main(["--help"]), EXIT_OK)
        self.assertIn("rmt-counterexample", buffer.getvalue())

    def test_runs_a_command(self):
        with tempfile.TemporaryDirectory() as tmp, redirect_stdout(io.StringIO()):
            code = main(["rmt-counterexample", "--output-dir", tmp])
            self.assertTrue((Path(tmp) / "manifest.txt").exists())
        self.assertEqual(code, EXIT_OK)

    def test_run_config_defaults(self):
        config = RunConfig(command="budget", parameters={"eta": 0.1, "trigger": None})
        lines = config.manifest_lines("2024-01-01T00:00:00+00:00")
        self.assertIn("eta = 0.1", lines)
        self.assertFalse(any(line.startswith("trigger") for line in lines))
