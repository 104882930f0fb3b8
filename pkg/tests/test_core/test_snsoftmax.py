"""带温度 softmax 与 sn 反向的测试。"""

import math

import pytest
import torch

from src.core.errors import InvalidArgumentError
from src.core.metrics import beta_entropy
from src.core.snsoftmax import (
    ScalePolicy,
    SparseNoisySoftmax,
    grad_norm_probe,
    log_temperature_grid,
    plain_backward,
    plain_forward,
    probe_direction,
    sn_backward,
    sn_forward,
    softmax_jacobian,
    softmax_t,
    tempered_softmax,
)

D = torch.float64


def _fd_jacobian(logits: torch.Tensor, t: float) -> torch.Tensor:
    m = logits.shape[0]
    h = 1e-5 * t
    cols = []
    for j in range(m):
        e = torch.zeros(m, dtype=D)
        e[j] = h
        cols.append((softmax_t(logits + e, t) - softmax_t(logits - e, t)) / (2 * h))
    return torch.stack(cols, dim=1)


class TestSoftmaxT:
    def test_sums_to_one_and_positive(self):
        beta = softmax_t([3.0, 1.0, -2.0], 0.5)
        assert float(beta.sum()) == pytest.approx(1.0, abs=1e-15)
        assert bool((beta > 0).all())

    def test_large_logits_small_temperature_stay_finite(self):
        beta = softmax_t([1000.0, 0.0, -1000.0], 1e-3)
        assert bool(torch.isfinite(beta).all())
        assert beta.tolist() == [1.0, 0.0, 0.0]

    def test_uniform_logits_give_uniform_beta(self):
        beta = softmax_t([0.7] * 5, 0.01)
        torch.testing.assert_close(beta, torch.full((5,), 0.2, dtype=D), rtol=0, atol=1e-15)

    @pytest.mark.parametrize("t", [0.0, -1.0, math.nan, math.inf])
    def test_rejects_invalid_temperature(self, t):
        with pytest.raises(InvalidArgumentError):
            softmax_t([1.0, 2.0], t)

    def test_rejects_nan_logits(self):
        with pytest.raises(InvalidArgumentError):
            softmax_t([1.0, math.nan], 1.0)

    def test_max_probability_falls_with_temperature(self):
        logits = torch.tensor([2.0, 0.5, -1.0, 0.0], dtype=D)
        maxima = [float(softmax_t(logits, t).max()) for t in (0.1, 0.5, 1.0, 5.0)]
        assert maxima == sorted(maxima, reverse=True)


class TestJacobian:
    def test_matches_finite_differences_on_random_cases(self):
        g = torch.Generator().manual_seed(0)
        worst = 0.0
        for case in range(1000):
            m = (2, 5, 8)[case % 3]
            t = 0.05 + float(torch.rand(1, generator=g, dtype=D)) * (10.0 - 0.05)
            logits = torch.randn(m, generator=g, dtype=D)
            analytic = softmax_jacobian(softmax_t(logits, t), t)
            numeric = _fd_jacobian(logits, t)
            # 相对 Jacobian 的尺度上界 1/t
            worst = max(worst, float((analytic - numeric).abs().max()) * t)
        assert worst < 1e-6

    def test_symmetric_with_zero_row_sums(self):
        jac = softmax_jacobian(softmax_t([0.3, -0.2, 1.1, 0.0], 0.7), 0.7)
        torch.testing.assert_close(jac, jac.T, rtol=0, atol=0)
        torch.testing.assert_close(jac.sum(dim=1), torch.zeros(4, dtype=D), rtol=0, atol=1e-15)


class TestSnBackward:
    def test_is_sum_of_two_jacobian_terms(self):
        logits = torch.tensor([0.4, -0.3, 1.2, 0.0, 0.1], dtype=D)
        upstream = torch.tensor([0.5, -1.0, 0.25, 2.0, -0.75], dtype=D)
        dist = sn_forward(logits, 0.05, 20.0)
        expected = plain_backward(dist, upstream) + softmax_jacobian(dist.beta_noisy, 1.0) @ upstream
        torch.testing.assert_close(sn_backward(dist, upstream), expected, rtol=1e-14, atol=1e-14)

    def test_zero_noise_weight_equals_plain_bitwise(self):
        dist = sn_forward([0.4, -0.3, 1.2], 0.1, 100.0)
        upstream = torch.tensor([1.0, 2.0, -3.0], dtype=D)
        assert torch.equal(sn_backward(dist, upstream, noise_weight=0.0), plain_backward(dist, upstream))

    def test_plain_distribution_falls_back_to_plain_backward(self):
        dist = plain_forward([0.4, -0.3, 1.2], 0.1)
        upstream = torch.tensor([1.0, 2.0, -3.0], dtype=D)
        assert torch.equal(sn_backward(dist, upstream), plain_backward(dist, upstream))

    def test_saturated_logits_still_get_gradient(self):
        logits = torch.tensor([1.0, 0.0, 0.0, 0.0, 0.0], dtype=D)
        upstream = probe_direction(5)
        t = 0.01
        policy = ScalePolicy("st_const", 1.0)
        plain = plain_forward(logits, t)
        assert float(plain.beta.max()) > 1 - 1e-12
        assert float(torch.linalg.vector_norm(plain_backward(plain, upstream))) < 1e-12
        noisy = sn_forward(logits, t, policy.resolve(t))
        assert float(torch.linalg.vector_norm(sn_backward(noisy, upstream))) > 1e-6

    def test_high_entropy_direction_is_preserved(self):
        g = torch.Generator().manual_seed(7)
        checked = 0
        while checked < 100:
            logits = 0.3 * torch.randn(5, generator=g, dtype=D)
            if float(softmax_t(logits, 1.0).max()) > 0.5:
                continue
            upstream = torch.randn(5, generator=g, dtype=D)
            plain = plain_backward(plain_forward(logits, 1.0), upstream)
            noisy = sn_backward(sn_forward(logits, 1.0, 100.0), upstream)
            cosine = float(torch.dot(plain, noisy) / (torch.linalg.vector_norm(plain) * torch.linalg.vector_norm(noisy)))
            assert cosine >= 0.99
            checked += 1

    def test_upstream_shape_mismatch(self):
        dist = sn_forward([0.1, 0.2, 0.3], 0.5, 10.0)
        with pytest.raises(InvalidArgumentError):
            sn_backward(dist, [1.0, 2.0])

    def test_upstream_nan(self):
        dist = sn_forward([0.1, 0.2, 0.3], 0.5, 10.0)
        with pytest.raises(InvalidArgumentError):
            sn_backward(dist, [1.0, math.nan, 0.0])

    @pytest.mark.parametrize("s", [1.0, 0.5, math.nan])
    def test_forward_requires_s_above_one(self, s):
        with pytest.raises(InvalidArgumentError):
            sn_forward([0.1, 0.2], 0.5, s)


class TestScalePolicy:
    def test_st_const_gives_s_over_t(self):
        assert ScalePolicy("st_const", 1.0).resolve(0.01) == pytest.approx(100.0)

    def test_st_const_disables_noise_when_t_large(self):
        assert ScalePolicy("st_const", 1.0).resolve(2.0) is None

    def test_fixed_is_clamped(self):
        assert ScalePolicy("fixed", 1e7).resolve(1.0) == 1e6

    def test_labels(self):
        assert ScalePolicy("fixed", 100.0).label == "s100"
        assert ScalePolicy("st_const", 1.0).label == "st1"

    def test_rejects_unknown_kind(self):
        with pytest.raises(InvalidArgumentError):
            ScalePolicy("adaptive", 1.0)


class TestAutograd:
    def test_plain_path_passes_gradcheck(self):
        logits = torch.tensor([0.3, -0.1, 0.8, 0.0], dtype=D, requires_grad=True)
        assert torch.autograd.gradcheck(lambda a: tempered_softmax(a, 0.7)[0], (logits,))

    def test_sn_path_routes_through_sn_backward(self):
        logits = torch.tensor([0.3, -0.1, 0.8, 0.0], dtype=D, requires_grad=True)
        upstream = torch.tensor([1.0, -2.0, 0.5, 0.25], dtype=D)
        beta, dist = tempered_softmax(logits, 0.05, ScalePolicy("fixed", 100.0))
        (beta * upstream).sum().backward()
        assert dist.is_noisy
        torch.testing.assert_close(logits.grad, sn_backward(dist, upstream), rtol=0, atol=1e-15)

    def test_forward_output_is_cached_beta(self):
        logits = torch.tensor([0.3, -0.1], dtype=D, requires_grad=True)
        dist = plain_forward(logits.detach(), 0.2)
        assert torch.equal(SparseNoisySoftmax.apply(logits, dist), dist.beta)


class TestGradNormProbe:
    def test_saturated_example(self):
        (row,) = grad_norm_probe([1.0, 0.0, 0.0, 0.0, 0.0], [0.01], ScalePolicy("st_const", 1.0))
        assert row.plain_norm < 1e-12
        assert row.sn_norms[0] > 1e-3

    def test_uniform_logits_ratio(self):
        rows = grad_norm_probe([0.0] * 5, [1.0, 0.1, 0.01], ScalePolicy("fixed", 100.0))
        for row in rows:
            assert row.sn_norms[0] / row.plain_norm == pytest.approx(1.0 + 1.0 / 100.0, rel=1e-12)

    def test_one_column_per_policy(self):
        policies = [ScalePolicy("fixed", s) for s in (50.0, 100.0, 1000.0)]
        rows = grad_norm_probe([1.0, 0.0, 0.0], [0.5, 0.05], policies)
        assert all(len(row.sn_norms) == 3 for row in rows)

    def test_empty_grid(self):
        with pytest.raises(InvalidArgumentError):
            grad_norm_probe([1.0, 0.0], [], ScalePolicy())

    def test_default_grid(self):
        grid = log_temperature_grid(1.0, 1e-3, 50)
        assert len(grid) == 50
        assert grid[0] == pytest.approx(1.0)
        assert grid[-1] == pytest.approx(1e-3)
        assert grid == sorted(grid, reverse=True)


class TestEntropyInTemperature:
    def test_entropy_strictly_increases_with_t(self):
        logits = torch.tensor([0.9, 0.3, -0.2, 0.05, -0.7], dtype=D)
        grid = sorted(log_temperature_grid(10.0, 5e-2, 40))
        entropies = [beta_entropy(softmax_t(logits, t)) for t in grid]
        assert all(b > a for a, b in zip(entropies, entropies[1:]))
        assert entropies[-1] < math.log(5)
