"""温度调度测试。"""

import math

import pytest
import torch

from src.config import settings
from src.config.run_config import ScheduleConfig
from src.core.errors import InvalidArgumentError, ScheduleError
from src.core.metrics import beta_entropy
from src.core.schedules import (
    ScheduleKind,
    TemperatureScheduler,
    edd_temperature,
    edd_update_decay,
    estimate_e_a,
    ets_build,
    from_exp_space,
    lpcd_build,
    lts_build,
    pcd_build,
    to_exp_space,
)
from src.core.snsoftmax import softmax_t

EXAMPLE_E_A = 4e-4


class TestExpSpace:
    @pytest.mark.parametrize("t", [1.0, 0.1, 0.001])
    def test_round_trip_example_e_a(self, t):
        assert from_exp_space(EXAMPLE_E_A, to_exp_space(EXAMPLE_E_A, t)) == pytest.approx(t, rel=1e-12)

    def test_round_trip_over_wide_range(self):
        e_a = 0.04
        for t in torch.logspace(-4, 1, 50, dtype=torch.float64).tolist():
            assert from_exp_space(e_a, to_exp_space(e_a, t)) == pytest.approx(t, rel=1e-12)

    def test_inverse_requires_t_exp_above_one(self):
        with pytest.raises(InvalidArgumentError):
            from_exp_space(EXAMPLE_E_A, 1.0)

    def test_overflow_is_reported(self):
        with pytest.raises(InvalidArgumentError):
            to_exp_space(1.0, 1e-3)

    def test_non_positive_e_a(self):
        with pytest.raises(InvalidArgumentError):
            to_exp_space(0.0, 1.0)


class TestStaticLists:
    def test_ets_worked_example(self):
        built = ets_build(EXAMPLE_E_A, 1.0, 1e-3, 4)
        for point, expected in zip(built.points_exp, [1.0, 1.123, 1.246, 1.369, 1.492]):
            assert point == pytest.approx(expected, rel=1e-3)
        # 打印表格将 t0^exp 取整为 1，精确计算与其相差不超过 1.5 %
        for t, expected in zip(built.temps, [1.0, 0.00345, 0.0018, 0.00127, 0.001]):
            assert t == pytest.approx(expected, rel=0.015)
        assert built.temps[0] == 1.0
        assert built.temps[-1] == 1e-3

    def test_ets_points_are_equidistant(self):
        built = ets_build(EXAMPLE_E_A, 1.0, 1e-3, 4)
        steps = [b - a for a, b in zip(built.points_exp, built.points_exp[1:])]
        for step in steps:
            assert step == pytest.approx(steps[0], rel=1e-12)

    def test_ets_single_interval(self):
        built = ets_build(EXAMPLE_E_A, 1.0, 1e-3, 1)
        assert built.temps == (1.0, 1e-3)

    def test_lts_arithmetic(self):
        built = lts_build(1.0, 1e-3, 4)
        for t, expected in zip(built.temps, [1.0, 0.75025, 0.5005, 0.25075, 0.001]):
            assert t == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize(
        "t0, t_n, n",
        [(1e-3, 1.0, 4), (1.0, 1.0, 4), (1.0, 1e-3, 0), (-1.0, 1e-3, 4)],
    )
    def test_invalid_endpoints(self, t0, t_n, n):
        with pytest.raises(InvalidArgumentError):
            ets_build(EXAMPLE_E_A, t0, t_n, n)
        with pytest.raises(InvalidArgumentError):
            lts_build(t0, t_n, n)

    def test_pcd_restarts_every_cycle(self):
        built = pcd_build(EXAMPLE_E_A, 1.0, 1e-3, 4, 3)
        assert len(built) == 15
        assert built.temps.count(1.0) == 3
        assert [built.temps[i] for i in (0, 5, 10)] == [1.0, 1.0, 1.0]
        assert built.temps[:5] == built.temps[5:10] == built.temps[10:]

    def test_lpcd_repeats_linear_list(self):
        built = lpcd_build(1.0, 1e-3, 5, 2)
        assert len(built) == 12
        assert built.temps[:6] == lts_build(1.0, 1e-3, 5).temps

    def test_ets_is_smoother_than_lts(self):
        logits = torch.tensor([10 * EXAMPLE_E_A, 0.0, 0.0, 0.0, 0.0], dtype=torch.float64)

        def drops(temps):
            entropies = [beta_entropy(softmax_t(logits, t)) for t in temps]
            return torch.tensor([a - b for a, b in zip(entropies, entropies[1:])], dtype=torch.float64)

        ets = drops(ets_build(EXAMPLE_E_A, 1.0, 1e-3, 4).temps)
        lts = drops(lts_build(1.0, 1e-3, 4).temps)
        assert float(ets.max()) < float(lts.max())
        assert float(ets.std()) <= 0.5 * float(lts.std())


class TestEstimateEA:
    def test_mean_of_positive_part(self):
        assert estimate_e_a([1.0, -1.0, 3.0, -2.0]) == pytest.approx(1.0)

    def test_accepts_parameter_list(self):
        params = [torch.tensor([2.0, -1.0], dtype=torch.float64), torch.tensor([0.0, 2.0], dtype=torch.float64)]
        assert estimate_e_a(params) == pytest.approx(1.0)

    def test_all_non_positive_falls_back(self):
        assert estimate_e_a([-1.0, 0.0, -3.0]) == pytest.approx(settings.ANALYTIC_E_A)

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            estimate_e_a([])


class TestEdd:
    @pytest.mark.parametrize("lam", [0.06, 0.12, 0.24])
    def test_decay_converges_to_fixed_point(self, lam):
        h = math.log(5)
        d = 0.0
        for k in range(1, 31):
            d = edd_update_decay(d, h, lam)
            assert abs(d - lam * h) <= 0.5**k * lam * h * (1 + 1e-9)

    def test_zero_entropy_halves_decay(self):
        assert edd_update_decay(0.4, 0.0, 0.06) == pytest.approx(0.2)

    def test_negative_entropy(self):
        with pytest.raises(InvalidArgumentError):
            edd_update_decay(0.0, -0.1, 0.06)

    def test_zero_decay_returns_t0(self):
        t0_exp = to_exp_space(EXAMPLE_E_A, 1.0)
        assert edd_temperature(EXAMPLE_E_A, t0_exp, 0, 0.5) == pytest.approx(1.0, rel=1e-9)
        assert edd_temperature(EXAMPLE_E_A, t0_exp, 7, 0.0) == pytest.approx(1.0, rel=1e-9)

    def test_temperature_decreases_with_k(self):
        t0_exp = to_exp_space(EXAMPLE_E_A, 1.0)
        temps = [edd_temperature(EXAMPLE_E_A, t0_exp, k, 0.05) for k in range(10)]
        assert temps == sorted(temps, reverse=True)

    def test_log_argument_must_exceed_one(self):
        with pytest.raises(InvalidArgumentError):
            edd_temperature(EXAMPLE_E_A, 1.0, 0, 0.0)


class TestTemperatureScheduler:
    def test_warmup_keeps_state(self):
        scheduler = TemperatureScheduler(ScheduleConfig(kind="edd", warmup=5), EXAMPLE_E_A, 20)
        state = scheduler.initial_state()
        for epoch in range(5):
            assert scheduler.advance(state, epoch, mean_entropy=1.0) is state

    def test_edd_preview_is_monotone(self):
        scheduler = TemperatureScheduler(ScheduleConfig(kind="edd", warmup=2), EXAMPLE_E_A, 30)
        temps = [state.t for _, state in scheduler.preview(entropy=math.log(5))]
        assert temps[:3] == [1.0, 1.0, 1.0]
        assert all(b <= a for a, b in zip(temps, temps[1:]))
        assert temps[-1] < 0.01

    def test_edd_clamps_rising_raw_temperature(self):
        scheduler = TemperatureScheduler(ScheduleConfig(kind="edd", warmup=0), EXAMPLE_E_A, 10)
        state = scheduler.advance(scheduler.initial_state(), 0, mean_entropy=math.log(5))
        state = scheduler.advance(state, 1, mean_entropy=0.0)
        previous = state.t
        state = scheduler.advance(state, 2, mean_entropy=0.0)
        assert state.raw_t > previous
        assert state.t == previous

    def test_edd_requires_entropy(self):
        scheduler = TemperatureScheduler(ScheduleConfig(kind="edd", warmup=0), EXAMPLE_E_A, 10)
        with pytest.raises(ScheduleError):
            scheduler.advance(scheduler.initial_state(), 0)
        with pytest.raises(ScheduleError):
            scheduler.preview()

    def test_domain_error_carries_epoch(self):
        scheduler = TemperatureScheduler(ScheduleConfig(kind="edd", warmup=0), EXAMPLE_E_A, 10)
        with pytest.raises(ScheduleError, match="epoch 0"):
            scheduler.advance(scheduler.initial_state(), 0, mean_entropy=-1.0)

    def test_list_mapping_is_piecewise_constant(self):
        config = ScheduleConfig(kind="ets", n_points=4, warmup=5)
        scheduler = TemperatureScheduler(config, EXAMPLE_E_A, 15)
        temps = scheduler.schedule_list.temps
        observed = [state.t for _, state in scheduler.preview()]
        expected = [temps[0]] * 7 + [temps[1]] * 2 + [temps[2]] * 2 + [temps[3]] * 2 + [temps[4]] * 2
        assert observed == expected

    @pytest.mark.parametrize("kind", [ScheduleKind.FIXED, ScheduleKind.ETS, ScheduleKind.EDD])
    def test_warmup_equal_to_epochs_never_advances(self, kind):
        scheduler = TemperatureScheduler(ScheduleConfig(kind=kind.value, warmup=12), EXAMPLE_E_A, 12)
        temps = {state.t for _, state in scheduler.preview(entropy=1.0)}
        assert temps == {1.0}

    def test_pcd_cycles_back_to_t0(self):
        scheduler = TemperatureScheduler(ScheduleConfig(kind="pcd", n_points=4, cycles=3, warmup=0), EXAMPLE_E_A, 30)
        temps = [state.t for _, state in scheduler.preview()]
        restarts = [i for i, t in enumerate(temps) if t == 1.0 and (i == 0 or temps[i - 1] != 1.0)]
        assert restarts == [0, 10, 20]
        assert min(temps) == pytest.approx(1e-3)
