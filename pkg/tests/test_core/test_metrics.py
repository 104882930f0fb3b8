"""熵与准确率统计测试。"""

import math

import pytest
import torch

from src.core.errors import InvalidArgumentError, StateError
from src.core.metrics import (
    accuracy,
    beta_entropy,
    discretized_accuracy,
    mean_edge_entropy,
    predict,
    supernet_accuracy,
)
from src.core.space import SuperNet, discretize, enumerate_genotypes

D = torch.float64


class TestBetaEntropy:
    def test_uniform(self):
        assert beta_entropy(torch.full((5,), 0.2, dtype=D)) == pytest.approx(math.log(5), abs=1e-12)

    def test_one_hot_is_zero(self):
        assert beta_entropy(torch.tensor([0.0, 1.0, 0.0], dtype=D)) == 0.0

    def test_two_way_split(self):
        assert beta_entropy(torch.tensor([0.5, 0.5], dtype=D)) == pytest.approx(math.log(2), abs=1e-15)

    @pytest.mark.parametrize(
        "beta",
        [[0.5, 0.6], [1.2, -0.2], [], [math.nan, 1.0]],
    )
    def test_rejects_non_distributions(self, beta):
        with pytest.raises(InvalidArgumentError):
            beta_entropy(torch.tensor(beta, dtype=D))

    def test_tolerates_rounding(self):
        assert beta_entropy(torch.tensor([0.5, 0.5 + 1e-9], dtype=D)) == pytest.approx(math.log(2), abs=1e-8)


class TestMeanEdgeEntropy:
    def test_fresh_network_is_near_uniform(self, small_net):
        small_net.cache_distributions(1.0)
        report = mean_edge_entropy(small_net)
        assert [edge_id for edge_id, _ in report.per_edge] == ["0_1", "0_2", "1_2"]
        assert report.mean == pytest.approx(math.log(5), abs=1e-5)

    def test_mean_is_arithmetic_average(self, small_net):
        small_net.cache_distributions(1e-4)
        report = mean_edge_entropy(small_net)
        assert report.mean == pytest.approx(sum(h for _, h in report.per_edge) / 3, rel=1e-15)
        assert report.as_dict()["per_edge"]["1_2"] == report.per_edge[2][1]

    def test_requires_cache(self, small_net):
        with pytest.raises(StateError):
            mean_edge_entropy(small_net)


class TestAccuracy:
    def test_ties_go_to_lowest_class(self):
        logits = torch.tensor([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0], [0.0, 0.0, 0.0]], dtype=D)
        assert predict(logits).tolist() == [0, 1, 0]

    def test_fraction_correct(self):
        logits = torch.tensor([[2.0, 0.0], [0.0, 1.0], [3.0, 1.0], [0.0, 5.0]], dtype=D)
        assert accuracy(logits, torch.tensor([0, 1, 1, 0])) == 0.5

    def test_empty_split(self):
        with pytest.raises(InvalidArgumentError):
            accuracy(torch.zeros(0, 3, dtype=D), torch.zeros(0, dtype=torch.int64))

    @pytest.mark.parametrize("seed", range(20))
    def test_random_weight_net_stays_in_chance_band(self, seed):
        g = torch.Generator().manual_seed(seed)
        net = SuperNet(num_nodes=3, dim=8, n_classes=4, generator=g)
        x = torch.randn(2000, 8, generator=g, dtype=D)
        y = torch.randint(0, 4, (2000,), generator=g)
        net.cache_distributions(1.0)
        assert 0.15 <= supernet_accuracy(net, x, y) <= 0.40
        assert 0.15 <= discretized_accuracy(net, discretize(net), x, y) <= 0.40


class TestNetworkAccuracy:
    def test_all_zero_genotype_predicts_class_zero(self, small_net, generator):
        x = torch.randn(30, 4, generator=generator, dtype=D)
        y = torch.randint(0, 3, (30,), generator=generator)
        genotype = next(enumerate_genotypes(small_net))
        expected = float((y == 0).to(D).mean())
        assert discretized_accuracy(small_net, genotype, x, y) == expected

    def test_supernet_accuracy_uses_cached_distribution(self, small_net, generator):
        x = torch.randn(20, 4, generator=generator, dtype=D)
        y = torch.randint(0, 3, (20,), generator=generator)
        small_net.cache_distributions(0.5)
        expected = accuracy(small_net(x, 0.5), y)
        small_net.cache_distributions(0.5)
        assert supernet_accuracy(small_net, x, y) == expected

    def test_supernet_accuracy_requires_cache(self, small_net):
        with pytest.raises(StateError):
            supernet_accuracy(small_net, torch.zeros(2, 4, dtype=D), torch.tensor([0, 1]))

    def test_one_hot_supernet_matches_discretized(self, small_net, generator):
        with torch.no_grad():
            for i, edge in enumerate(small_net.edges):
                logits = torch.full((5,), -1000.0, dtype=D)
                logits[(i + 1) % 5] = 1000.0
                edge.alpha.copy_(logits)
        small_net.cache_distributions(1.0)
        x = torch.randn(50, 4, generator=generator, dtype=D)
        y = torch.randint(0, 3, (50,), generator=generator)
        assert supernet_accuracy(small_net, x, y) == discretized_accuracy(small_net, discretize(small_net), x, y)
