"""温度调度：ETS / LTS / PCD / LPCD 静态列表与 EDD 自适应衰减。

ETS 在指数空间 t^exp = exp(E(a)/t) 中等距衰减，再经 t = E(a)/ln(t^exp)
映射回温度；EDD 根据平均边熵动态决定指数空间中的衰减强度 d^exp。
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import TYPE_CHECKING, Iterable, Sequence

import torch
from loguru import logger

from src.config import settings
from src.core.errors import InvalidArgumentError, ScheduleError

if TYPE_CHECKING:
    from src.config.run_config import ScheduleConfig


class ScheduleKind(StrEnum):
    FIXED = "fixed"
    LTS = "lts"
    ETS = "ets"
    PCD = "pcd"
    LPCD = "lpcd"
    EDD = "edd"


LIST_KINDS: frozenset[ScheduleKind] = frozenset(
    {ScheduleKind.LTS, ScheduleKind.ETS, ScheduleKind.PCD, ScheduleKind.LPCD}
)


@dataclass(frozen=True)
class TemperatureState:
    """当前温度状态，由单线程训练驱动逐 epoch 替换。

    Attributes:
        t: 当前温度
        t_exp: exp(E(a)/t)
        d_exp: 指数空间衰减强度（EDD）
        epoch_k: 预热后已完成的更新次数
        e_a: 正架构参数的期望 E(a)
        kind: 调度类型
        raw_t: EDD 单调截断前的原始温度（其它类型等于 t）
        list_index: 静态列表中的位置，非列表调度为 -1
    """

    t: float
    t_exp: float
    d_exp: float
    epoch_k: int
    e_a: float
    kind: ScheduleKind
    raw_t: float
    list_index: int = -1


@dataclass(frozen=True)
class ScheduleList:
    """静态温度列表（指数空间点与对应温度）。"""

    points_exp: tuple[float, ...]
    temps: tuple[float, ...]
    t0: float
    t_n: float
    n_points: int
    cycles: int = 1

    def __len__(self) -> int:
        return len(self.temps)


def _positive(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidArgumentError(f"{name} 必须为正有限数, 得到 {value!r}")
    return value


def _check_endpoints(t0: float, t_n: float, n_points: int) -> tuple[float, float, int]:
    t0 = _positive(t0, "t0")
    t_n = _positive(t_n, "t_n")
    if t0 <= t_n:
        raise InvalidArgumentError(f"t0 必须大于 t_n (t0={t0}, t_n={t_n})")
    if int(n_points) != n_points or n_points < 1:
        raise InvalidArgumentError(f"衰减点数 N 必须为 ≥ 1 的整数, 得到 {n_points!r}")
    return t0, t_n, int(n_points)


def estimate_e_a(
    params: torch.Tensor | Iterable[torch.Tensor] | Sequence[float],
    init_scale: float = settings.ARCH_INIT_SCALE,
) -> float:
    """估计正架构参数的期望 E(a) = mean(max(a, 0))。

    所有参数都 ≤ 0 时回退为解析值 init_scale/√(2π)。
    """
    if isinstance(params, torch.Tensor):
        flat = params.detach().reshape(-1)
    else:
        items = list(params)
        if items and all(isinstance(p, torch.Tensor) for p in items):
            flat = torch.cat([p.detach().reshape(-1) for p in items])
        else:
            flat = torch.as_tensor(items, dtype=torch.float64).reshape(-1)
    if flat.numel() == 0:
        raise InvalidArgumentError("架构参数列表为空，无法估计 E(a)")

    e_a = float(flat.to(torch.float64).clamp(min=0.0).mean())
    if e_a <= 0.0:
        e_a = init_scale / math.sqrt(2.0 * math.pi)
        logger.debug("全部架构参数非正，E(a) 使用解析回退值 {:.6g}", e_a)
    return e_a


def to_exp_space(e_a: float, t: float) -> float:
    """温度 → 指数空间：t^exp = exp(E(a)/t)。"""
    e_a = _positive(e_a, "E(a)")
    t = _positive(t, "t")
    try:
        return math.exp(e_a / t)
    except OverflowError as exc:
        raise InvalidArgumentError(f"exp(E(a)/t) 溢出 (E(a)={e_a}, t={t})") from exc


def from_exp_space(e_a: float, t_exp: float) -> float:
    """指数空间 → 温度：t = E(a)/ln(t^exp)，要求 t^exp > 1。"""
    e_a = _positive(e_a, "E(a)")
    t_exp = float(t_exp)
    if not math.isfinite(t_exp) or t_exp <= 1.0:
        raise InvalidArgumentError(f"t_exp 必须 > 1 (ln 非正), 得到 {t_exp!r}")
    return e_a / math.log(t_exp)


def ets_build(e_a: float, t0: float, t_n: float, n_points: int) -> ScheduleList:
    """指数温度调度（ETS）：指数空间等距的 N+1 个点。"""
    t0, t_n, n_points = _check_endpoints(t0, t_n, n_points)
    first = to_exp_space(e_a, t0)
    last = to_exp_space(e_a, t_n)
    step = (last - first) / n_points

    points = [first + n * step for n in range(n_points)] + [last]
    temps = [t0] + [from_exp_space(e_a, p) for p in points[1:n_points]] + [t_n]
    return ScheduleList(points_exp=tuple(points), temps=tuple(temps), t0=t0, t_n=t_n, n_points=n_points)


def lts_build(t0: float, t_n: float, n_points: int, e_a: float = settings.ANALYTIC_E_A) -> ScheduleList:
    """线性温度调度（LTS），指数空间点仅用于报告。"""
    t0, t_n, n_points = _check_endpoints(t0, t_n, n_points)
    step = (t_n - t0) / n_points
    temps = [t0 + n * step for n in range(n_points)] + [t_n]
    points = [to_exp_space(e_a, t) for t in temps]
    return ScheduleList(points_exp=tuple(points), temps=tuple(temps), t0=t0, t_n=t_n, n_points=n_points)


def _repeat(base: ScheduleList, cycles: int) -> ScheduleList:
    if int(cycles) != cycles or cycles < 1:
        raise InvalidArgumentError(f"周期数必须为 ≥ 1 的整数, 得到 {cycles!r}")
    cycles = int(cycles)
    return replace(
        base,
        points_exp=base.points_exp * cycles,
        temps=base.temps * cycles,
        cycles=cycles,
    )


def pcd_build(e_a: float, t0: float, t_n: float, n_points: int, cycles: int) -> ScheduleList:
    """周期循环衰减（PCD）：ETS 列表重复 cycles 次，每个周期开头回到 t0。"""
    return _repeat(ets_build(e_a, t0, t_n, n_points), cycles)


def lpcd_build(
    t0: float,
    t_n: float,
    n_points: int,
    cycles: int,
    e_a: float = settings.ANALYTIC_E_A,
) -> ScheduleList:
    """线性周期循环衰减（LPCD）：LTS 列表重复 cycles 次。"""
    return _repeat(lts_build(t0, t_n, n_points, e_a=e_a), cycles)


def edd_update_decay(
    d_prev: float,
    mean_entropy: float,
    lam: float,
    rho: float = settings.EDD_RHO,
) -> float:
    """EDD 衰减强度的动量更新：d^(k) = λ(1−ρ)·E(H(β)) + ρ·d^(k−1)。"""
    d_prev = float(d_prev)
    mean_entropy = float(mean_entropy)
    if not math.isfinite(d_prev) or d_prev < 0.0:
        raise InvalidArgumentError(f"d_prev 必须 ≥ 0, 得到 {d_prev!r}")
    if not math.isfinite(mean_entropy) or mean_entropy < 0.0:
        raise InvalidArgumentError(f"平均熵必须 ≥ 0, 得到 {mean_entropy!r}")
    lam = _positive(lam, "lambda")
    if not 0.0 <= rho < 1.0:
        raise InvalidArgumentError(f"rho 必须位于 [0, 1), 得到 {rho!r}")
    return lam * (1.0 - rho) * mean_entropy + rho * d_prev


def edd_temperature(e_a: float, t0_exp: float, k: int, d_k: float) -> float:
    """EDD 温度：t^(k) = E(a)/ln(t0^exp + k·d^(k))。"""
    if k < 0:
        raise InvalidArgumentError(f"k 必须 ≥ 0, 得到 {k}")
    if d_k < 0.0:
        raise InvalidArgumentError(f"d_k 必须 ≥ 0, 得到 {d_k}")
    arg = t0_exp + k * d_k
    if not arg > 1.0:
        raise InvalidArgumentError(f"ln 的参数 t0_exp + k·d_k 必须 > 1, 得到 {arg!r}")
    return from_exp_space(e_a, arg)


class TemperatureScheduler:
    """按 epoch 推进温度状态。

    - 前 warmup 个 epoch 保持 t0，EDD 不更新 d；
    - 静态列表（LTS/ETS/PCD/LPCD）的 N+1（或 cycles·(N+1)）个点均匀分布到
      预热后的 epoch 上，点之间温度分段常数；
    - EDD 每个预热后 epoch 结束时依次更新 d 与 t，输出温度取
      min(原始值, 上一温度)。
    """

    def __init__(self, config: ScheduleConfig, e_a: float, epochs: int):
        self.config = config
        self.kind = ScheduleKind(config.kind)
        self.e_a = _positive(e_a, "E(a)")
        self.epochs = int(epochs)
        self.warmup = int(config.warmup)
        self.schedule_list: ScheduleList | None = self._build_list()
        logger.info(
            "温度调度初始化: kind={}, t0={}, t_n={}, N={}, warmup={}, E(a)={:.6g}",
            self.kind,
            config.t0,
            config.t_n,
            config.n_points,
            self.warmup,
            self.e_a,
        )

    def _build_list(self) -> ScheduleList | None:
        cfg = self.config
        if self.kind is ScheduleKind.ETS:
            return ets_build(self.e_a, cfg.t0, cfg.t_n, cfg.n_points)
        if self.kind is ScheduleKind.LTS:
            return lts_build(cfg.t0, cfg.t_n, cfg.n_points, e_a=self.e_a)
        if self.kind is ScheduleKind.PCD:
            return pcd_build(self.e_a, cfg.t0, cfg.t_n, cfg.n_points, cfg.cycles)
        if self.kind is ScheduleKind.LPCD:
            return lpcd_build(cfg.t0, cfg.t_n, cfg.n_points, cfg.cycles, e_a=self.e_a)
        return None

    @property
    def t0_exp(self) -> float:
        return to_exp_space(self.e_a, self.config.t0)

    def initial_state(self) -> TemperatureState:
        t0 = float(self.config.t0)
        return TemperatureState(
            t=t0,
            t_exp=self.t0_exp,
            d_exp=0.0,
            epoch_k=0,
            e_a=self.e_a,
            kind=self.kind,
            raw_t=t0,
            list_index=0 if self.schedule_list is not None else -1,
        )

    def temperature_for_epoch(self, epoch: int) -> tuple[float, int]:
        """静态列表调度下第 epoch 个 epoch 使用的温度及其列表下标。"""
        if self.schedule_list is None:
            raise ScheduleError(f"{self.kind} 调度没有静态温度列表")
        size = len(self.schedule_list)
        post = self.epochs - self.warmup
        if epoch < self.warmup or post <= 0:
            return self.schedule_list.temps[0], 0
        index = min((epoch - self.warmup) * size // post, size - 1)
        return self.schedule_list.temps[index], index

    def advance(
        self,
        state: TemperatureState,
        epoch: int,
        mean_entropy: float | None = None,
        e_a: float | None = None,
    ) -> TemperatureState:
        """第 epoch 个 epoch 训练完成后，给出下一个 epoch 的温度状态。

        Args:
            state: 当前状态
            epoch: 刚完成的 epoch（从 0 计）
            mean_entropy: 该 epoch 结束时的平均边熵（EDD 必需）
            e_a: 当前 E(a) 估计，仅在 reestimate_e_a 开启时生效

        Raises:
            ScheduleError: 调度定义域错误，消息带 epoch 上下文
        """
        if epoch < self.warmup:
            return state

        try:
            if e_a is not None and self.config.reestimate_e_a and e_a != self.e_a:
                logger.info("epoch {} 重新估计 E(a): {:.6g} -> {:.6g}", epoch, self.e_a, e_a)
                self.e_a = _positive(e_a, "E(a)")
                self.schedule_list = self._build_list()

            k = epoch - self.warmup + 1
            if self.kind is ScheduleKind.FIXED:
                return replace(state, epoch_k=k, e_a=self.e_a)
            if self.kind is ScheduleKind.EDD:
                return self._advance_edd(state, k, mean_entropy)

            t, index = self.temperature_for_epoch(epoch + 1)
            if index != state.list_index:
                logger.debug("epoch {} 调度推进到列表第 {} 项: t={:.6g}", epoch, index, t)
            return replace(
                state,
                t=t,
                t_exp=to_exp_space(self.e_a, t),
                epoch_k=k,
                e_a=self.e_a,
                raw_t=t,
                list_index=index,
            )
        except ScheduleError:
            raise
        except InvalidArgumentError as exc:
            raise ScheduleError(f"epoch {epoch}: {exc}") from exc

    def _advance_edd(self, state: TemperatureState, k: int, mean_entropy: float | None) -> TemperatureState:
        if mean_entropy is None:
            raise ScheduleError("EDD 调度需要平均边熵")
        d_k = edd_update_decay(state.d_exp, mean_entropy, self.config.lam, self.config.rho)
        raw = edd_temperature(self.e_a, self.t0_exp, k, d_k)
        t = min(raw, state.t)
        if raw > state.t:
            logger.debug("EDD 原始温度 {:.6g} 高于上一温度 {:.6g}，保持单调", raw, state.t)
        logger.info("EDD 更新 k={}: H={:.6f}, d_exp={:.6g}, t={:.6g} (原始 {:.6g})", k, mean_entropy, d_k, t, raw)
        return replace(
            state,
            t=t,
            t_exp=to_exp_space(self.e_a, t),
            d_exp=d_k,
            epoch_k=k,
            e_a=self.e_a,
            raw_t=raw,
        )

    def preview(self, entropy: float | None = None) -> list[tuple[int, TemperatureState]]:
        """不训练，预演全部 epoch 的温度；EDD 使用恒定的假设熵。"""
        if self.kind is ScheduleKind.EDD and entropy is None:
            raise ScheduleError("预演 EDD 调度需要给定假设熵")
        state = self.initial_state()
        rows: list[tuple[int, TemperatureState]] = []
        for epoch in range(self.epochs):
            rows.append((epoch, state))
            state = self.advance(state, epoch, mean_entropy=entropy)
        return rows
