"""带温度的 softmax 与 sparse-noisy（sn）反向传播。

前向在温度 t 下输出稀疏的 β_t；反向在 J_t/t 之外叠加温度 s·t 下的
Jacobian 项 J_st/(s·t)，使 β_t 饱和后架构参数仍能获得梯度。
全部计算使用 float64。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from loguru import logger

from src.config import settings
from src.core.errors import InvalidArgumentError

DTYPE = torch.float64

SCALE_POLICY_KINDS: tuple[str, ...] = ("fixed", "st_const")


def _as_float64(values: torch.Tensor | Sequence[float]) -> torch.Tensor:
    return torch.as_tensor(values, dtype=DTYPE)


def check_temperature(t: float, name: str = "t") -> float:
    """校验温度为正有限数并返回 float。"""
    value = float(t)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidArgumentError(f"{name} 必须为正有限数, 得到 {t!r}")
    return value


def _check_logits(logits: torch.Tensor) -> torch.Tensor:
    if logits.dim() == 0 or logits.shape[-1] < 1:
        raise InvalidArgumentError("logits 至少需要 1 个元素 (M ≥ 1)")
    if not bool(torch.isfinite(logits).all()):
        raise InvalidArgumentError("logits 含有 NaN/Inf")
    return logits


def softmax_t(logits: torch.Tensor | Sequence[float], t: float) -> torch.Tensor:
    """计算 softmax(A/t)，沿最后一维归一化。

    先减去 max(A/t) 再取指数，小温度下不会溢出。

    Args:
        logits: 架构参数向量 A（可带批次维）
        t: 温度，必须 > 0

    Returns:
        torch.Tensor: 概率向量 β_t
    """
    a = _check_logits(_as_float64(logits))
    t = check_temperature(t)
    z = a / t
    z = z - z.amax(dim=-1, keepdim=True)
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def softmax_jacobian(beta: torch.Tensor | Sequence[float], t: float) -> torch.Tensor:
    """返回 ∂β_t/∂A = (diag(β) − ββᵀ)/t，对称且每行和为 0。"""
    b = _as_float64(beta)
    t = check_temperature(t)
    return (torch.diag_embed(b) - b.unsqueeze(-1) * b.unsqueeze(-2)) / t


@dataclass(frozen=True)
class TemperedDistribution:
    """一次前向的温度分布缓存。

    beta 为下游可见的输出；beta_noisy 为温度 s·t 下的平滑分布，
    仅供反向使用。plain 模式下 beta_noisy 与 s 均为 None。
    """

    beta: torch.Tensor
    t: float
    beta_noisy: torch.Tensor | None = None
    s: float | None = None

    @property
    def is_noisy(self) -> bool:
        return self.beta_noisy is not None


@dataclass(frozen=True)
class ScalePolicy:
    """缩放因子 s 的取值策略。

    - ``fixed``：s = value（默认 100）
    - ``st_const``：保持 s·t = value（默认 1），s = value / t
    """

    kind: str = "fixed"
    value: float = settings.DEFAULT_S

    def __post_init__(self) -> None:
        if self.kind not in SCALE_POLICY_KINDS:
            raise InvalidArgumentError(f"未知的 s 策略: {self.kind!r}，可选 {SCALE_POLICY_KINDS}")
        if not math.isfinite(self.value) or self.value <= 0.0:
            raise InvalidArgumentError(f"s 策略取值必须 > 0, 得到 {self.value!r}")

    @property
    def label(self) -> str:
        return f"s{self.value:g}" if self.kind == "fixed" else f"st{self.value:g}"

    def resolve(self, t: float) -> float | None:
        """按当前温度求 s；s ≤ 1 时返回 None（关闭噪声项）。"""
        t = check_temperature(t)
        s = self.value if self.kind == "fixed" else self.value / t
        if s > settings.S_MAX:
            logger.warning("s={:.6g} 超过上限，截断为 {:.6g} (t={:.6g})", s, settings.S_MAX, t)
            s = settings.S_MAX
        if s <= 1.0:
            logger.debug("s={:.6g} ≤ 1，本步关闭噪声项 (t={:.6g}, 策略={})", s, t, self.label)
            return None
        return s


def plain_forward(logits: torch.Tensor | Sequence[float], t: float) -> TemperedDistribution:
    """普通 softmax 前向，不缓存噪声分布。"""
    return TemperedDistribution(beta=softmax_t(logits, t), t=check_temperature(t))


def sn_forward(logits: torch.Tensor | Sequence[float], t: float, s: float) -> TemperedDistribution:
    """sn-softmax 前向：输出 β_t，同时缓存 β_{s·t} 供反向使用。

    Args:
        logits: 架构参数向量 A
        t: 前向温度
        s: 缩放因子，必须 > 1

    Returns:
        TemperedDistribution: beta 与 beta_noisy 均已计算
    """
    t = check_temperature(t)
    s = float(s)
    if not math.isfinite(s) or s <= 1.0:
        raise InvalidArgumentError(f"sn-softmax 需要 s > 1, 得到 {s!r}")
    a = _as_float64(logits)
    return TemperedDistribution(
        beta=softmax_t(a, t),
        t=t,
        beta_noisy=softmax_t(a, s * t),
        s=s,
    )


def _jvp(jacobian: torch.Tensor, vector: torch.Tensor) -> torch.Tensor:
    return (jacobian @ vector.unsqueeze(-1)).squeeze(-1)


def plain_backward(dist: TemperedDistribution, upstream: torch.Tensor | Sequence[float]) -> torch.Tensor:
    """普通 softmax 反向：J_t · ∂l/∂β。"""
    g = _check_upstream(dist, upstream)
    return _jvp(softmax_jacobian(dist.beta, dist.t), g)


def _check_upstream(dist: TemperedDistribution, upstream: torch.Tensor | Sequence[float]) -> torch.Tensor:
    g = _as_float64(upstream)
    if g.shape != dist.beta.shape:
        raise InvalidArgumentError(
            f"上游梯度形状 {tuple(g.shape)} 与 β 形状 {tuple(dist.beta.shape)} 不一致"
        )
    if not bool(torch.isfinite(g).all()):
        raise InvalidArgumentError("上游梯度含有 NaN/Inf")
    return g


def sn_backward(
    dist: TemperedDistribution,
    upstream: torch.Tensor | Sequence[float],
    noise_weight: float = 1.0,
) -> torch.Tensor:
    """sn-softmax 反向：(J_t + J_st) · ∂l/∂β。

    两项分别计算后相加；noise_weight=0 或分布未缓存噪声项时
    逐位等于普通 softmax 反向。

    Args:
        dist: sn_forward 的输出
        upstream: ∂l/∂β_t
        noise_weight: 噪声项权重

    Returns:
        torch.Tensor: ∂l/∂A
    """
    plain = plain_backward(dist, upstream)
    if dist.beta_noisy is None or noise_weight == 0.0:
        return plain
    g = _as_float64(upstream)
    noise = _jvp(softmax_jacobian(dist.beta_noisy, dist.s * dist.t), g)
    if noise_weight != 1.0:
        noise = noise_weight * noise
    return plain + noise


class SparseNoisySoftmax(torch.autograd.Function):
    """把前向缓存的 TemperedDistribution 接入 autograd。

    前向返回 β_t，反向调用 sn_backward，不重新计算 β_{s·t}。
    """

    @staticmethod
    def forward(ctx, logits: torch.Tensor, dist: TemperedDistribution) -> torch.Tensor:
        ctx.dist = dist
        return dist.beta.clone()

    @staticmethod
    def backward(ctx, grad_beta: torch.Tensor):
        return sn_backward(ctx.dist, grad_beta), None


def tempered_softmax(
    logits: torch.Tensor,
    t: float,
    policy: ScalePolicy | None = None,
) -> tuple[torch.Tensor, TemperedDistribution]:
    """可求导的带温度 softmax。

    policy 为 None 时使用普通反向；否则按策略求 s 并使用 sn 反向。

    Returns:
        (beta, dist): beta 连接到 logits 的计算图，dist 为缓存的分布
    """
    with torch.no_grad():
        detached = logits.detach()
        s = policy.resolve(t) if policy is not None else None
        dist = plain_forward(detached, t) if s is None else sn_forward(detached, t, s)
    return SparseNoisySoftmax.apply(logits, dist), dist


@dataclass(frozen=True)
class ProbeRow:
    """梯度范数探针的一行。"""

    t: float
    plain_norm: float
    sn_norms: tuple[float, ...]


def probe_direction(m: int) -> torch.Tensor:
    """固定的单位上游梯度方向：线性递减后归一化。"""
    g = torch.ones(1, dtype=DTYPE) if m == 1 else torch.linspace(1.0, -1.0, m, dtype=DTYPE)
    return g / torch.linalg.vector_norm(g)


def log_temperature_grid(t_max: float, t_min: float, points: int) -> list[float]:
    """对数等距温度网格，从 t_max 递减到 t_min。"""
    t_max = check_temperature(t_max, "t_max")
    t_min = check_temperature(t_min, "t_min")
    if points < 1:
        raise InvalidArgumentError(f"网格点数必须 ≥ 1, 得到 {points}")
    if points == 1:
        return [t_max]
    return torch.logspace(math.log10(t_max), math.log10(t_min), points, dtype=DTYPE).tolist()


def grad_norm_probe(
    logits: torch.Tensor | Sequence[float],
    t_grid: Sequence[float],
    policies: ScalePolicy | Sequence[ScalePolicy],
    upstream: torch.Tensor | Sequence[float] | None = None,
) -> list[ProbeRow]:
    """在温度网格上对比普通 softmax 与 sn-softmax 的梯度范数。

    Args:
        logits: 固定的架构参数 A
        t_grid: 温度列表，元素必须 > 0
        policies: 一个或多个 s 策略，每个策略输出一列 sn 范数
        upstream: 单位上游梯度，默认 probe_direction(M)

    Returns:
        list[ProbeRow]: 每个温度一行
    """
    if len(t_grid) == 0:
        raise InvalidArgumentError("温度网格为空")
    if isinstance(policies, ScalePolicy):
        policies = [policies]
    a = _check_logits(_as_float64(logits))
    g = probe_direction(a.shape[-1]) if upstream is None else _as_float64(upstream)

    rows: list[ProbeRow] = []
    for t in t_grid:
        t = check_temperature(t)
        plain_dist = plain_forward(a, t)
        plain_norm = float(torch.linalg.vector_norm(plain_backward(plain_dist, g)))
        sn_norms = []
        for policy in policies:
            s = policy.resolve(t)
            dist = plain_dist if s is None else sn_forward(a, t, s)
            sn_norms.append(float(torch.linalg.vector_norm(sn_backward(dist, g))))
        rows.append(ProbeRow(t=t, plain_norm=plain_norm, sn_norms=tuple(sn_norms)))

    logger.debug("梯度范数探针完成: {} 个温度点, {} 个 s 策略", len(rows), len(policies))
    return rows
