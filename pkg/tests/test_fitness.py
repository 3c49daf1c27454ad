import unittest

import numpy as np
import torch

from data.datasets import DatasetBundle, LabeledDataset, synthetic_blobs
from model.compression.fitness import (
    FitnessEvaluator,
    evaluate_fitness,
    fitness_value,
    individual_seed,
    sparsity_term,
)
from model.compression.genome import Individual, MaskLayout, compact_network
from model.config.model_config import (
    EstimatorKind,
    FitnessConfig,
    FitnessVariant,
    TrainConfig,
)
from model.core.errors import LayoutMismatchError
from model.core.network import evaluate_error, init_network
from model.core.spec import lenet_spec, tiny_spec
from model.core.training import train
from model.fine_tuning.base import BaseErrorEstimator, ErrorEstimate
from model.fine_tuning.factory import ErrorEstimatorFactory
from model.fine_tuning.sgd_tuner import FineTuneErrorEstimator, fine_tune
from model.fine_tuning.surrogate import SurrogateErrorEstimator


def lenet_reported_mask(layout: MaskLayout) -> Individual:
    bits = np.zeros(layout.bit_length, dtype=np.uint8)
    for window, count in zip(layout.layer_slices(), [9, 17, 84]):
        bits[window.start : window.start + count] = 1
    return Individual(layout, bits)


def blob_bundle(seed: int = 0) -> DatasetBundle:
    blobs = synthetic_blobs(3, 60, seed=seed)
    return DatasetBundle(
        train=blobs.subset(range(150), "train"),
        finetune=blobs.subset(range(100), "finetune"),
        evaluation=blobs.subset(range(150, 180), "eval"),
    )


class TestSparsityTerm(unittest.TestCase):
    def setUp(self):
        """Set up the LeNet layout and its reported mask"""
        self.layout = MaskLayout.from_spec(lenet_spec())
        self.ind = lenet_reported_mask(self.layout)

    def test_uniform(self):
        """Test the filter-count variant"""
        value = sparsity_term(self.layout, self.ind, FitnessVariant.UNIFORM)
        self.assertAlmostEqual(value, (11 + 33 + 416) / 580)

    def test_sized(self):
        """Test the filter-size weighted variant"""
        value = sparsity_term(self.layout, self.ind, FitnessVariant.SIZED)
        self.assertAlmostEqual(value, 0.81202, delta=1e-5)

    def test_coupled_literal(self):
        """Test the product-of-dropped-counts variant"""
        value = sparsity_term(self.layout, self.ind, FitnessVariant.COUPLED_LITERAL)
        self.assertAlmostEqual(value, 0.53130, delta=1e-5)

    def test_coupled(self):
        """Test the exact discarded-weight fraction"""
        value = sparsity_term(self.layout, self.ind, FitnessVariant.COUPLED)
        self.assertAlmostEqual(value, 402762 / 430500)
        self.assertAlmostEqual(value, 0.93556, delta=1e-5)

    def test_all_ones_is_zero(self):
        """Test nothing discarded gives zero for every variant"""
        ind = Individual.all_ones(self.layout)
        for variant in FitnessVariant:
            self.assertEqual(sparsity_term(self.layout, ind, variant), 0.0)

    def test_dropping_filters_never_lowers_sparsity(self):
        """Test clearing a bit never decreases the coupled term"""
        layout = MaskLayout.from_spec(tiny_spec(3))
        rng = np.random.default_rng(0)
        for _ in range(50):
            bits = np.ones(layout.bit_length, dtype=np.uint8)
            bits[rng.integers(layout.bit_length)] = 0
            before = Individual(layout, bits)
            if not before.is_valid():
                continue
            for position in np.flatnonzero(bits):
                cleared = bits.copy()
                cleared[position] = 0
                after = Individual(layout, cleared)
                if not after.is_valid():
                    continue
                for variant in FitnessVariant:
                    self.assertGreaterEqual(
                        sparsity_term(layout, after, variant),
                        sparsity_term(layout, before, variant),
                    )

    def test_layout_mismatch(self):
        """Test an individual from another layout is rejected"""
        other = Individual.all_ones(MaskLayout.from_spec(tiny_spec(3)))
        with self.assertRaises(LayoutMismatchError):
            sparsity_term(self.layout, other, FitnessVariant.COUPLED)


class TestFitnessValue(unittest.TestCase):
    def test_formula(self):
        """Test f = 1 - E + lambda * S"""
        self.assertAlmostEqual(fitness_value(0.1, 0.5, 0.9), 1.35)
        self.assertEqual(fitness_value(1.0, 0.0, 0.9), 0.0)

    def test_individual_seed(self):
        """Test seeds depend on the bit string and the master seed only"""
        layout = MaskLayout.from_spec(tiny_spec(3))
        ind = Individual.all_ones(layout)
        same = Individual.all_ones(layout)
        self.assertEqual(individual_seed(0, ind), individual_seed(0, same))
        self.assertNotEqual(individual_seed(0, ind), individual_seed(1, ind))


class TestSurrogateEvaluator(unittest.TestCase):
    def setUp(self):
        """Set up a surrogate-backed evaluator on the small layout"""
        self.layout = MaskLayout.from_spec(tiny_spec(3))
        self.config = FitnessConfig(estimator=EstimatorKind.SURROGATE, seed=4)
        self.evaluator = FitnessEvaluator.create(self.layout, self.config)

    def test_factory_selects_surrogate(self):
        """Test the factory builds the estimator named in the config"""
        self.assertIsInstance(self.evaluator.estimator, SurrogateErrorEstimator)

    def test_all_ones_scores_base_error(self):
        """Test keeping everything costs only the base error"""
        report = self.evaluator.evaluate(Individual.all_ones(self.layout))
        self.assertAlmostEqual(report.error, 0.01)
        self.assertEqual(report.sparsity, 0.0)
        self.assertAlmostEqual(report.fitness, 0.99)
        self.assertEqual(report.kept_fraction, 1.0)

    def test_cache(self):
        """Test a second evaluation of the same bits is served from the cache"""
        ind = Individual.from_text("0110|100001", self.layout)
        first = self.evaluator.evaluate(ind)
        again = Individual.from_text("0110|100001", self.layout)
        second = self.evaluator.evaluate(again)
        self.assertIs(first, second)
        self.assertEqual(self.evaluator.evaluations, 1)
        self.assertEqual(self.evaluator.cache_size, 1)

    def test_evaluate_many_matches_across_workers(self):
        """Test threaded evaluation gives the same reports in input order"""
        rng = np.random.default_rng(2)
        individuals = []
        for _ in range(12):
            bits = (rng.random(self.layout.bit_length) < 0.6).astype(np.uint8)
            bits[0] = bits[4] = 1
            individuals.append(Individual(self.layout, bits))
        individuals.append(individuals[0])
        serial = self.evaluator.evaluate_many(individuals, workers=1)
        other = FitnessEvaluator.create(self.layout, self.config)
        threaded = other.evaluate_many(individuals, workers=4)
        self.assertEqual(
            [r.to_dict() for r in serial], [r.to_dict() for r in threaded]
        )
        self.assertEqual(self.evaluator.evaluations, other.evaluations)

    def test_rejects_invalid_individual(self):
        """Test an individual with an empty layer is not scored"""
        bits = np.zeros(self.layout.bit_length, dtype=np.uint8)
        bits[0] = 1
        with self.assertRaises(ValueError):
            self.evaluator.evaluate(Individual(self.layout, bits))

    def test_failed_estimate_scores_worst_case(self):
        """Test an estimator failure is recorded as error 1"""

        class Exploding(BaseErrorEstimator):
            def estimate(self, ind, seed):
                raise RuntimeError("boom")

        evaluator = FitnessEvaluator(
            self.layout, self.config, Exploding(self.config, self.layout)
        )
        report = evaluator.evaluate(Individual.all_ones(self.layout))
        self.assertEqual(report.error, 1.0)
        self.assertTrue(report.diverged)
        self.assertEqual(report.fitness, 0.0)

    def test_register_estimator(self):
        """Test a registered estimator class is picked up by the factory"""

        class Perfect(BaseErrorEstimator):
            def estimate(self, ind, seed):
                return ErrorEstimate(0.0)

        original = ErrorEstimatorFactory._estimators[EstimatorKind.SURROGATE]
        try:
            ErrorEstimatorFactory.register_estimator(EstimatorKind.SURROGATE, Perfect)
            evaluator = FitnessEvaluator.create(self.layout, self.config)
            report = evaluator.evaluate(Individual.all_ones(self.layout))
            self.assertEqual(report.error, 0.0)
        finally:
            ErrorEstimatorFactory.register_estimator(EstimatorKind.SURROGATE, original)


class TestFineTuneEstimator(unittest.TestCase):
    def setUp(self):
        """Set up a trained small network and blob datasets"""
        self.data = blob_bundle()
        net = init_network(tiny_spec(3), seed=0)
        config = TrainConfig(epochs=5, batch_size=16, learning_rate=0.05)
        self.net = train(net, self.data.train, config)
        self.layout = MaskLayout.from_spec(self.net.spec)

    def test_zero_steps_scores_unmodified_network(self):
        """Test lambda 0 without fine-tuning gives f = 1 - E of the original"""
        config = FitnessConfig(lam=0.0, finetune_steps=0)
        report = evaluate_fitness(
            self.net, Individual.all_ones(self.layout), self.data, config
        )
        expected = evaluate_error(self.net, self.data.evaluation)
        self.assertAlmostEqual(report.fitness, 1.0 - expected)
        self.assertFalse(report.fine_tuned)

    def test_fine_tune_zero_steps_is_identity(self):
        """Test fine-tuning for zero steps returns the same parameters"""
        tuned = fine_tune(self.net, self.data.finetune, 0, seed=1)
        for key, value in self.net.parameters.items():
            self.assertTrue(torch.equal(value, tuned.parameters[key]))
        with self.assertRaises(ValueError):
            fine_tune(self.net, self.data.finetune, -1, seed=1)

    def test_fine_tune_does_not_hurt(self):
        """Test fine-tuning a compacted network keeps or lowers its error"""
        ind = Individual.from_text("1101|110110", self.layout)
        compact = compact_network(self.net, ind)
        before = evaluate_error(compact, self.data.evaluation)
        config = FitnessConfig(finetune_learning_rate=0.01)
        tuned = fine_tune(compact, self.data.finetune, 200, seed=3, config=config)
        after = evaluate_error(tuned, self.data.evaluation)
        self.assertLessEqual(after, before + 0.02)

    def test_default_steps_cover_subset_once(self):
        """Test the default step count is one pass over the fine-tune subset"""
        estimator = FineTuneErrorEstimator(
            FitnessConfig(finetune_batch_size=64), self.layout, self.net, self.data
        )
        self.assertEqual(estimator.steps, 2)

    def test_needs_network_and_data(self):
        """Test fine-tune estimation without inputs is rejected"""
        with self.assertRaises(ValueError):
            FineTuneErrorEstimator(FitnessConfig(), self.layout)

    def test_divergence_scores_worst_case(self):
        """Test a diverging fine-tune scores error 1"""
        images = self.data.finetune.images.clone()
        images[:] = float("nan")
        poisoned = DatasetBundle(
            train=self.data.train,
            finetune=LabeledDataset(images, self.data.finetune.labels, "nan"),
            evaluation=self.data.evaluation,
        )
        config = FitnessConfig(lam=0.9, finetune_steps=2)
        ind = Individual.from_text("1101|110110", self.layout)
        report = evaluate_fitness(self.net, ind, poisoned, config)
        self.assertEqual(report.error, 1.0)
        self.assertTrue(report.diverged)
        self.assertAlmostEqual(report.fitness, 0.9 * report.sparsity)

    def test_single_example_subset_scores_worst_case(self):
        """Test a fine-tune subset too small for batchnorm scores error 1"""
        tiny = DatasetBundle(
            train=self.data.train,
            finetune=self.data.finetune.subset([0], "single"),
            evaluation=self.data.evaluation,
        )
        config = FitnessConfig(lam=0.9, finetune_steps=2, finetune_batch_size=1)
        ind = Individual.from_text("1101|110110", self.layout)
        report = evaluate_fitness(self.net, ind, tiny, config)
        self.assertEqual(report.error, 1.0)
        self.assertTrue(report.diverged)

    def test_batch_size_one_fine_tune(self):
        """Test fine-tuning with single-example batches completes"""
        config = FitnessConfig(lam=0.9, finetune_steps=3, finetune_batch_size=1)
        ind = Individual.from_text("1101|110110", self.layout)
        report = evaluate_fitness(self.net, ind, self.data, config)
        self.assertFalse(report.diverged)
        self.assertLessEqual(report.error, 1.0)


if __name__ == "__main__":
    unittest.main()
