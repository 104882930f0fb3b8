"""熵与准确率统计。"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from src.core.errors import InvalidArgumentError, StateError
from src.core.snsoftmax import DTYPE
from src.core.space import Genotype, SuperNet, node_forward


def beta_entropy(beta: torch.Tensor) -> float:
    """香农熵 −Σ β ln β（单位 nats），约定 0·ln 0 = 0。

    Raises:
        InvalidArgumentError: 不是合法概率向量（和偏离 1 超过 1e-6 或含负数）
    """
    b = torch.as_tensor(beta, dtype=DTYPE).reshape(-1)
    if b.numel() == 0 or not bool(torch.isfinite(b).all()):
        raise InvalidArgumentError("β 为空或含 NaN/Inf")
    if bool((b < 0).any()):
        raise InvalidArgumentError("β 含有负数")
    total = float(b.sum())
    if abs(total - 1.0) > 1e-6:
        raise InvalidArgumentError(f"β 之和为 {total!r}，不是概率向量")
    entropy = -float(torch.special.xlogy(b, b).sum())
    return max(entropy, 0.0)


@dataclass(frozen=True)
class EntropyReport:
    per_edge: tuple[tuple[str, float], ...]
    mean: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "per_edge": {edge_id: h for edge_id, h in self.per_edge}}


def mean_edge_entropy(net: SuperNet) -> EntropyReport:
    """全部复合边缓存 β 的熵及其算术平均。"""
    per_edge = []
    for edge in net.edges:
        if edge.dist is None:
            raise StateError(f"边 {edge.u}->{edge.v} 尚未缓存分布，无法统计熵")
        per_edge.append((edge.edge_id, beta_entropy(edge.dist.beta)))
    mean = sum(h for _, h in per_edge) / len(per_edge)
    return EntropyReport(per_edge=tuple(per_edge), mean=mean)


def predict(logits: torch.Tensor) -> torch.Tensor:
    """逐样本取最大 logit 的类别，并列时取最小下标。"""
    is_max = logits == logits.max(dim=-1, keepdim=True).values
    return is_max.to(torch.int64).argmax(dim=-1)


def accuracy(logits: torch.Tensor, labels: torch.Tensor) -> float:
    if labels.numel() == 0:
        raise InvalidArgumentError("数据划分为空，无法计算准确率")
    return float((predict(logits) == labels).to(DTYPE).mean())


@torch.no_grad()
def supernet_accuracy(net: SuperNet, x: torch.Tensor, y: torch.Tensor) -> float:
    """使用已缓存分布的多路径超网络准确率。"""
    if y.numel() == 0:
        raise InvalidArgumentError("数据划分为空，无法计算准确率")
    features = node_forward(net, net.replicate_inputs(x))[-1]
    return accuracy(net.readout(features), y)


@torch.no_grad()
def discretized_accuracy(net: SuperNet, genotype: Genotype, x: torch.Tensor, y: torch.Tensor) -> float:
    """共享权重下离散结构的准确率（不重新训练）。"""
    if y.numel() == 0:
        raise InvalidArgumentError("数据划分为空，无法计算准确率")
    return accuracy(net.genotype_logits(genotype, x), y)
