import unittest

import numpy as np
import torch

from data.datasets import DatasetBundle, synthetic_blobs
from model.compression.baselines import (
    compare_controls,
    filter_norm_bits,
    filter_norm_mask,
    filter_norm_topk,
    filter_norms,
    random_architecture_control,
    random_budget_individual,
    scratch_train_control,
    weight_sparsity_stats,
    weight_threshold_mask,
)
from model.compression.genome import (
    Individual,
    MaskLayout,
    compact_network,
    surviving_counts,
)
from model.config.model_config import TrainConfig, derive_seed
from model.core.network import init_network
from model.core.spec import lenet_spec, tiny_spec
from model.core.training import train


def blob_bundle() -> DatasetBundle:
    blobs = synthetic_blobs(3, 40, seed=1)
    return DatasetBundle(
        train=blobs.subset(range(90), "train"),
        finetune=blobs.subset(range(30), "finetune"),
        evaluation=blobs.subset(range(90, 120), "eval"),
    )


class TestThresholdRules(unittest.TestCase):
    def test_weight_threshold(self):
        """Test weights at or below tau in magnitude are masked"""
        mask = weight_threshold_mask(torch.tensor([0.1, -0.5, 0.0]), 0.2)
        self.assertEqual(mask.tolist(), [0, 1, 0])
        weights = torch.tensor([0.3, -0.2, 0.1])
        self.assertEqual(weight_threshold_mask(weights, -1.0).tolist(), [1, 1, 1])
        self.assertEqual(weight_threshold_mask(weights, 0.5).tolist(), [0, 0, 0])

    def test_weight_sparsity_grows_with_tau(self):
        """Test raising tau never lowers the zero count"""
        net = init_network(tiny_spec(3), seed=0)
        previous = [0, 0, 0]
        for tau in (0.0, 0.1, 0.3, 0.6, 1.0):
            stats = weight_sparsity_stats(net, tau)
            self.assertEqual(len(stats), 3)
            zeros = [s.zeros for s in stats]
            self.assertTrue(all(z >= p for z, p in zip(zeros, previous)))
            previous = zeros
        self.assertEqual(stats[0].total, 36)

    def test_filter_norms(self):
        """Test filters are kept when their squared norm exceeds tau"""
        weight = torch.tensor([np.sqrt(0.5), np.sqrt(2.0), 0.0]).reshape(3, 1, 1, 1)
        np.testing.assert_allclose(filter_norms(weight), [0.5, 2.0, 0.0], rtol=1e-6)
        self.assertEqual(filter_norm_bits(weight, 0.6).tolist(), [0, 1, 0])

    def test_filter_norm_mask_extremes(self):
        """Test tau extremes keep everything or one filter per layer"""
        net = init_network(tiny_spec(3), seed=0)
        layout = MaskLayout.from_spec(net.spec)
        self.assertEqual(filter_norm_mask(net, -1.0), Individual.all_ones(layout))
        sparse = filter_norm_mask(net, 1e9)
        self.assertEqual(surviving_counts(sparse), [1, 1, 1, 3])

    def test_filter_norm_mask_drops_smallest(self):
        """Test tau between the two smallest norms drops exactly the smallest"""
        net = init_network(tiny_spec(3), seed=0)
        norms = np.concatenate(
            [filter_norms(net.conv_weight(0)), filter_norms(net.conv_weight(1))]
        )
        ordered = np.sort(norms)
        ind = filter_norm_mask(net, (ordered[0] + ordered[1]) / 2)
        dropped = np.flatnonzero(ind.bits == 0).tolist()
        self.assertEqual(dropped, [int(np.argmin(norms))])

    def test_filter_norm_topk(self):
        """Test the largest-norm filters are kept per layer"""
        net = init_network(tiny_spec(3), seed=0)
        ind = filter_norm_topk(net, [2, 3])
        self.assertEqual(surviving_counts(ind), [1, 2, 3, 3])
        norms = filter_norms(net.conv_weight(0))
        kept = np.flatnonzero(ind.layer_bits(0))
        self.assertEqual(set(kept), set(np.argsort(-norms)[:2]))
        with self.assertRaises(ValueError):
            filter_norm_topk(net, [0, 3])


class TestRandomBudget(unittest.TestCase):
    def test_budget_is_met(self):
        """Test random architectures hold exactly the requested filter total"""
        layout = MaskLayout.from_spec(lenet_spec())
        rng = np.random.default_rng(0)
        for target in (13, 120, 580):
            ind = random_budget_individual(layout, target, rng)
            counts = surviving_counts(ind)
            self.assertEqual(sum(counts[1:]), target)
            self.assertTrue(ind.is_valid())

    def test_per_layer_counts_are_uniform(self):
        """Test layer counts are uniform over the vectors meeting the budget"""
        layout = MaskLayout.from_spec(lenet_spec())
        rng = np.random.default_rng(4)
        draws = np.array(
            [
                surviving_counts(random_budget_individual(layout, 120, rng))[1:4]
                for _ in range(2000)
            ]
        )
        # 110 filters over caps 20/50/500: the first two layers are independent
        # and uniform, the third takes the rest
        means = draws.mean(axis=0)
        np.testing.assert_allclose(means, [10.5, 25.5, 74.0], atol=1.0)
        self.assertEqual(draws[:, 0].min(), 1)
        self.assertEqual(draws[:, 0].max(), 20)

    def test_full_budget_is_all_ones(self):
        """Test the full filter count gives the uncompressed network"""
        layout = MaskLayout.from_spec(tiny_spec(3))
        ind = random_budget_individual(layout, 13, np.random.default_rng(0))
        self.assertEqual(ind, Individual.all_ones(layout))

    def test_infeasible_budget(self):
        """Test budgets outside the feasible range are rejected"""
        layout = MaskLayout.from_spec(tiny_spec(3))
        rng = np.random.default_rng(0)
        with self.assertRaises(ValueError):
            random_budget_individual(layout, 4, rng)
        with self.assertRaises(ValueError):
            random_budget_individual(layout, 14, rng)


class TestControls(unittest.TestCase):
    def setUp(self):
        """Set up a trained small network and blob datasets"""
        self.data = blob_bundle()
        self.config = TrainConfig(epochs=2, batch_size=16, learning_rate=0.05)
        net = init_network(tiny_spec(3), seed=0)
        self.net = train(net, self.data.train, self.config)
        self.layout = MaskLayout.from_spec(self.net.spec)

    def test_scratch_control_is_seeded(self):
        """Test scratch training starts from a seeded initialisation"""
        spec = self.net.spec.with_filter_counts([2, 3, 3])
        zero_epochs = TrainConfig(epochs=0, seed=5)
        result = scratch_train_control(spec, self.data.train, zero_epochs)
        expected = init_network(spec, derive_seed(5, "scratch-init"))
        for key, value in expected.parameters.items():
            self.assertTrue(torch.equal(value, result.network.parameters[key]))
        self.assertIsNone(result.error)
        self.assertEqual(result.method, "scratch")

    def test_random_architecture_control(self):
        """Test the random control trains an architecture of the given size"""
        result = random_architecture_control(
            self.net.spec, 8, 0, self.data.train, self.config, self.data.evaluation
        )
        filters = [layer.out_filters for layer in result.network.spec.conv_layers]
        self.assertEqual(sum(filters), 8)
        self.assertEqual(filters[-1], 3)
        self.assertEqual(result.method, "random-architecture")
        self.assertIsNotNone(result.error)

    def test_compare_controls(self):
        """Test every control reports against the same weight total"""
        ind = Individual.from_text("0110|101001", self.layout)
        ecs_network = compact_network(self.net, ind)
        rows = compare_controls(
            self.net, self.data, ecs_network, self.config, self.config, tau=0.5
        )
        self.assertEqual(
            [row["method"] for row in rows],
            [
                "ecs",
                "filter-norm-budget",
                "filter-norm-threshold",
                "scratch",
                "random-architecture",
            ],
        )
        for row in rows:
            self.assertEqual(row["total_weights"], self.net.weight_count())
            self.assertGreaterEqual(row["r_c"], 1.0)
            self.assertAlmostEqual(row["accuracy"], 1.0 - row["error"])
        self.assertEqual(rows[1]["filter_counts"], [2, 3, 3])
        self.assertEqual(rows[3]["filter_counts"], [2, 3, 3])
        self.assertEqual(sum(rows[4]["filter_counts"]), 8)


if __name__ == "__main__":
    unittest.main()
