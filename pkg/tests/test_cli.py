import json
import os
import shutil
import tempfile
import unittest

from model.config.model_config import EstimatorKind, FitnessVariant
from model.config.run_config import SNAPSHOT_NAME, ConfigError, parse_config
from model.scripts.ecs_cli import main


class TestRunConfig(unittest.TestCase):
    def setUp(self):
        """Set up test environment"""
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def write(self, text):
        path = os.path.join(self.test_dir, "run.ini")
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_defaults(self):
        """Test an empty file resolves to the built-in defaults"""
        config = parse_config("compress", self.write(""))
        ga = config.ga_config()
        self.assertEqual((ga.population_size, ga.max_iterations), (1000, 100))
        self.assertEqual((ga.s1, ga.s2, ga.s3), (0.2, 0.7, 0.1))
        fitness = config.fitness_config()
        self.assertEqual(fitness.lam, 0.9)
        self.assertIs(fitness.variant, FitnessVariant.COUPLED)
        self.assertIs(fitness.estimator, EstimatorKind.FINE_TUNE)
        self.assertEqual(config.data.finetune_size, 10000)
        self.assertEqual(config, parse_config("compress"))

    def test_lambda_from_file(self):
        """Test the fitness weight is read under its own name"""
        config = parse_config("compress", self.write("[fitness]\nlambda = 0.5\n"))
        self.assertEqual(config.fitness_config().lam, 0.5)

    def test_rates_must_sum_to_one(self):
        """Test operator rates that do not sum to 1 are rejected"""
        with self.assertRaises(ConfigError) as ctx:
            parse_config("compress", overrides={"ga": {"s1": 0.5}})
        self.assertEqual(ctx.exception.key, "ga.s1+s2+s3")
        self.assertIn("must equal 1", ctx.exception.message)

    def test_constraint_names_field(self):
        """Test a violated bound is reported under its section and field"""
        with self.assertRaises(ConfigError) as ctx:
            parse_config("compress", self.write("[train]\nmomentum = 1.5\n"))
        self.assertEqual(ctx.exception.key, "train.momentum")
        with self.assertRaises(ConfigError) as ctx:
            parse_config("compress", overrides={"fitness": {"lambda": -1.0}})
        self.assertEqual(ctx.exception.key, "fitness.lambda")

    def test_unknown_key(self):
        """Test an unknown key is reported by section and name"""
        with self.assertRaises(ConfigError) as ctx:
            parse_config("compress", self.write("[ga]\nbogus = 1\n"))
        self.assertEqual(ctx.exception.key, "ga.bogus")

    def test_unknown_section(self):
        """Test an unknown section is rejected"""
        with self.assertRaises(ConfigError) as ctx:
            parse_config("compress", self.write("[extra]\nkey = 1\n"))
        self.assertEqual(ctx.exception.key, "extra")

    def test_precedence(self):
        """Test preset < file < command-line override"""
        path = self.write("[run]\npreset = desk\n[ga]\nmax_iterations = 7\n")
        config = parse_config("compress", path)
        self.assertEqual(config.ga.population_size, 50)
        self.assertEqual(config.ga.max_iterations, 7)
        self.assertEqual(config.data.finetune_size, 2000)
        config = parse_config(
            "compress", path, overrides={"ga": {"max_iterations": 3, "s1": None}}
        )
        self.assertEqual(config.ga.max_iterations, 3)
        self.assertEqual(config.ga.s1, 0.2)

    def test_seeds_are_derived(self):
        """Test every concern gets its own seed from the master seed"""
        config = parse_config("train", overrides={"run": {"seed": 3}})
        seeds = {
            config.train_config().seed,
            config.ga_config().seed,
            config.fitness_config().seed,
        }
        self.assertEqual(len(seeds), 3)
        again = parse_config("train", overrides={"run": {"seed": 3}})
        self.assertEqual(config.train_config(), again.train_config())

    def test_snapshot_round_trip(self):
        """Test the written snapshot parses back to the same configuration"""
        config = parse_config(
            "compress",
            overrides={
                "fitness": {"lambda": 0.4, "variant": "v2-sized"},
                "run": {"preset": "desk", "seed": 9},
            },
        )
        path = config.write_snapshot(self.test_dir)
        self.assertEqual(path.name, SNAPSHOT_NAME)
        self.assertEqual(parse_config("compress", path), config)


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        """Set up an output directory and a trained synthetic network"""
        self.test_dir = tempfile.mkdtemp()
        self.common = ["--dataset", "synthetic", "--seed", "1"]
        self.train_dir = self.path("train")
        code = main(["train", *self.common, "--epochs", "10", "--out", self.train_dir])
        self.assertEqual(code, 0)
        self.checkpoint = os.path.join(self.train_dir, "network.ckpt")

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def path(self, *parts):
        return os.path.join(self.test_dir, *parts)

    def read_json(self, *parts):
        with open(self.path(*parts)) as f:
            return json.load(f)

    def compress(self, name):
        return main(
            [
                "compress",
                *self.common,
                "--checkpoint",
                self.checkpoint,
                "--estimator",
                "surrogate",
                "--population",
                "6",
                "--iterations",
                "3",
                "--out",
                self.path(name),
            ]
        )

    def test_train_writes_artifacts(self):
        """Test training writes a checkpoint, a summary and the config snapshot"""
        self.assertTrue(os.path.exists(self.checkpoint))
        self.assertTrue(os.path.exists(self.path("train", SNAPSHOT_NAME)))
        summary = self.read_json("train", "train_summary.json")
        self.assertLess(summary["error"], 0.9)

    def test_evaluate_matches_training_summary(self):
        """Test evaluating the checkpoint reproduces the training error"""
        code = main(
            [
                "evaluate",
                *self.common,
                "--checkpoint",
                self.checkpoint,
                "--out",
                self.path("eval"),
            ]
        )
        self.assertEqual(code, 0)
        evaluation = self.read_json("eval", "evaluation.json")
        summary = self.read_json("train", "train_summary.json")
        self.assertEqual(evaluation["error"], summary["error"])

    def test_compress_then_report(self):
        """Test compression is reproducible and its artifacts feed the report"""
        self.assertEqual(self.compress("first"), 0)
        self.assertEqual(self.compress("second"), 0)
        with open(self.path("first", "best_individual.txt")) as f:
            first = f.read()
        with open(self.path("second", "best_individual.txt")) as f:
            second = f.read()
        self.assertEqual(first, second)
        summary = self.read_json("first", "compress_summary.json")
        self.assertTrue(summary["best_fitness_monotone"])
        self.assertEqual(summary["generations"], 3)

        code = main(
            [
                "report",
                *self.common,
                "--checkpoint",
                self.checkpoint,
                "--individual",
                self.path("first", "best_individual.txt"),
                "--compressed",
                self.path("first", "compressed.ckpt"),
                "--log",
                self.path("first", "evolution_log.jsonl"),
                "--out",
                self.path("report"),
            ]
        )
        self.assertEqual(code, 0)
        with open(self.path("report", "report.txt")) as f:
            table = f.read()
        self.assertIn("Total", table)
        self.assertIn("r_c =", table)
        self.assertTrue(os.path.exists(self.path("report", "evolution.png")))
        image = self.path("report", "filters", "original", "layer_1_filter_0.pgm")
        self.assertTrue(os.path.exists(image))

    def test_baseline(self):
        """Test the control comparison runs from an individual file"""
        self.assertEqual(self.compress("search"), 0)
        code = main(
            [
                "baseline",
                *self.common,
                "--checkpoint",
                self.checkpoint,
                "--individual",
                self.path("search", "best_individual.ckpt"),
                "--epochs",
                "1",
                "--tau",
                "0.5",
                "--out",
                self.path("baseline"),
            ]
        )
        self.assertEqual(code, 0)
        summary = self.read_json("baseline", "baseline.json")
        self.assertEqual(len(summary["controls"]), 5)
        self.assertEqual(summary["tau"], 0.5)

    def test_missing_checkpoint(self):
        """Test a missing input file fails with exit code 1"""
        code = main(
            [
                "evaluate",
                *self.common,
                "--checkpoint",
                self.path("missing.ckpt"),
                "--out",
                self.path("eval"),
            ]
        )
        self.assertEqual(code, 1)

    def test_invalid_configuration(self):
        """Test a configuration error fails with exit code 1"""
        code = main(["train", *self.common, "--s1", "0.5", "--out", self.path("bad")])
        self.assertEqual(code, 1)


if __name__ == "__main__":
    unittest.main()
