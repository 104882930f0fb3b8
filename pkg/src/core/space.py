"""超网络搜索空间：节点 DAG、复合边、混合前向与 argmax 离散化。

节点编号从 0 开始，前 input_nodes 个为输入节点；每对 u < v（v 不是
输入节点）之间有一条复合边，边上的 M 个候选操作共享同一个操作目录。
最后一个节点经无偏置线性读出层得到类别 logits。
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import torch
from loguru import logger
from torch import nn

from src.config import settings
from src.core.errors import InvalidArgumentError, StateError
from src.core.snsoftmax import (
    DTYPE,
    ScalePolicy,
    TemperedDistribution,
    sn_backward,
    tempered_softmax,
)


# ==================== 候选操作 ====================


def _init_matrix(dim: int, generator: torch.Generator | None) -> nn.Parameter:
    weight = torch.randn(dim, dim, generator=generator, dtype=DTYPE) / math.sqrt(dim)
    return nn.Parameter(weight)


class ZeroOp(nn.Module):
    """零操作：输出全零，没有参数。"""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.zeros_like(x)


class SkipConnect(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x


class LinearOp(nn.Module):
    """无偏置线性映射 x·Wᵀ。"""

    def __init__(self, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.weight = _init_matrix(dim, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight.T


class TanhLinearOp(LinearOp):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.tanh(x @ self.weight.T)


class ScaleHalf(nn.Module):
    """固定 0.5 缩放（池化的替身）。"""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return 0.5 * x


OP_REGISTRY: dict[str, Callable[[int, torch.Generator | None], nn.Module]] = {
    "none": lambda dim, g: ZeroOp(),
    "skip_connect": lambda dim, g: SkipConnect(),
    "linear": lambda dim, g: LinearOp(dim, g),
    "tanh_linear": lambda dim, g: TanhLinearOp(dim, g),
    "scale_half": lambda dim, g: ScaleHalf(),
}


def validate_catalog(catalog: Sequence[str]) -> tuple[str, ...]:
    """校验操作目录：非空、无重复、名称已注册。"""
    names = tuple(catalog)
    if not names:
        raise InvalidArgumentError("操作目录不能为空")
    if len(set(names)) != len(names):
        raise InvalidArgumentError(f"操作目录存在重复项: {names}")
    unknown = [n for n in names if n not in OP_REGISTRY]
    if unknown:
        raise InvalidArgumentError(f"未知操作: {unknown}，可选 {tuple(OP_REGISTRY)}")
    return names


# ==================== 离散结构 ====================


@dataclass(frozen=True)
class EdgeSelection:
    u: int
    v: int
    op: int


@dataclass(frozen=True)
class Genotype:
    """离散结构：每条边恰好选择一个操作（目录下标）。"""

    num_nodes: int
    catalog: tuple[str, ...]
    selections: tuple[EdgeSelection, ...]

    def __post_init__(self) -> None:
        m = len(self.catalog)
        seen: set[tuple[int, int]] = set()
        for sel in self.selections:
            if not 0 <= sel.op < m:
                raise InvalidArgumentError(f"边 {sel.u}->{sel.v} 的操作下标 {sel.op} 超出 [0, {m})")
            if not 0 <= sel.u < sel.v < self.num_nodes:
                raise InvalidArgumentError(f"非法边 {sel.u}->{sel.v} (节点数 {self.num_nodes})")
            if (sel.u, sel.v) in seen:
                raise InvalidArgumentError(f"边 {sel.u}->{sel.v} 重复选择")
            seen.add((sel.u, sel.v))

    def op_index(self, u: int, v: int) -> int:
        for sel in self.selections:
            if sel.u == u and sel.v == v:
                return sel.op
        raise InvalidArgumentError(f"离散结构中没有边 {u}->{v}")

    def op_names(self) -> dict[str, str]:
        return {f"{s.u}->{s.v}": self.catalog[s.op] for s in self.selections}

    def to_dict(self) -> dict:
        return {
            "nodes": self.num_nodes,
            "catalog": list(self.catalog),
            "selections": [{"u": s.u, "v": s.v, "op": s.op} for s in self.selections],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> Genotype:
        """从字典还原；整数字段只接受 JSON 整数（拒绝 1.7、true 等）。"""
        try:
            selections = tuple(
                EdgeSelection(u=_json_int(s, "u"), v=_json_int(s, "v"), op=_json_int(s, "op"))
                for s in data["selections"]
            )
            return cls(
                num_nodes=_json_int(data, "nodes"),
                catalog=tuple(str(n) for n in data["catalog"]),
                selections=selections,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"离散结构 JSON 格式错误: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> Genotype:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"离散结构 JSON 解析失败: {exc}") from exc
        return cls.from_dict(data)


def _json_int(record: dict, key: str) -> int:
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidArgumentError(f"离散结构字段 {key!r} 必须是整数, 得到 {value!r}")
    return value


# ==================== 复合边与超网络 ====================


class CompoundEdge(nn.Module):
    """复合边 c_{u,v}：M 个候选操作与长度为 M 的架构参数 A_c。

    每次前向缓存温度分布 ``dist`` 与输入 ``last_input``，供熵统计、
    离散化与 ``edge_backward`` 使用。
    """

    def __init__(
        self,
        u: int,
        v: int,
        catalog: Sequence[str],
        dim: int,
        generator: torch.Generator | None = None,
        init_scale: float = settings.ARCH_INIT_SCALE,
    ):
        super().__init__()
        self.u = u
        self.v = v
        self.catalog = tuple(catalog)
        self.dim = dim
        self.alpha = nn.Parameter(init_scale * torch.randn(len(self.catalog), generator=generator, dtype=DTYPE))
        self.ops = nn.ModuleList(OP_REGISTRY[name](dim, generator) for name in self.catalog)
        self.dist: TemperedDistribution | None = None
        self.last_input: torch.Tensor | None = None

    @property
    def edge_id(self) -> str:
        return f"{self.u}_{self.v}"

    def op_outputs(self, h_u: torch.Tensor) -> torch.Tensor:
        """全部操作的输出，形状 (M, *h_u.shape)。"""
        return torch.stack([op(h_u) for op in self.ops], dim=0)

    def forward(self, h_u: torch.Tensor, t: float, policy: ScalePolicy | None = None) -> torch.Tensor:
        _check_features(h_u, self.dim)
        beta, dist = tempered_softmax(self.alpha, t, policy)
        self.dist = dist
        self.last_input = h_u.detach()
        return torch.tensordot(beta, self.op_outputs(h_u), dims=1)


class SuperNet(nn.Module):
    """全连接 cell 超网络与无偏置读出层。"""

    def __init__(
        self,
        num_nodes: int = settings.DEFAULT_NODES,
        dim: int = settings.DEFAULT_DIM,
        n_classes: int = settings.DEFAULT_CLASSES,
        catalog: Sequence[str] = settings.OP_CATALOG,
        input_nodes: int = settings.DEFAULT_INPUT_NODES,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if input_nodes < 1:
            raise InvalidArgumentError(f"输入节点数必须 ≥ 1, 得到 {input_nodes}")
        if num_nodes <= input_nodes:
            raise InvalidArgumentError(f"节点数 {num_nodes} 必须大于输入节点数 {input_nodes}")
        if dim < 1 or n_classes < 1:
            raise InvalidArgumentError(f"特征维度与类别数必须 ≥ 1 (dim={dim}, K={n_classes})")

        self.num_nodes = num_nodes
        self.input_nodes = input_nodes
        self.feature_dim = dim
        self.n_classes = n_classes
        self.op_catalog = validate_catalog(catalog)

        self.edges = nn.ModuleList(
            CompoundEdge(u, v, self.op_catalog, dim, generator)
            for v in range(input_nodes, num_nodes)
            for u in range(v)
        )
        self.readout = nn.Linear(dim, n_classes, bias=False, dtype=DTYPE)
        with torch.no_grad():
            self.readout.weight.copy_(torch.randn(n_classes, dim, generator=generator, dtype=DTYPE) / math.sqrt(dim))

        logger.debug(
            "SuperNet 构建完成: V={}, 输入节点={}, 边数={}, M={}, dim={}",
            num_nodes,
            input_nodes,
            len(self.edges),
            len(self.op_catalog),
            dim,
        )

    def arch_parameters(self) -> list[nn.Parameter]:
        return [edge.alpha for edge in self.edges]

    def weight_parameters(self, include_ops: bool = True) -> list[nn.Parameter]:
        """操作权重与读出层权重；include_ops=False 时只返回读出层。"""
        params = [p for edge in self.edges for p in edge.ops.parameters()] if include_ops else []
        params.append(self.readout.weight)
        return params

    @torch.no_grad()
    def load_op_weights(self, source: SuperNet) -> None:
        """从结构相同的网络复制全部操作权重；A 与读出层保持不变。"""
        if (source.num_nodes, source.input_nodes, source.feature_dim, source.op_catalog) != (
            self.num_nodes,
            self.input_nodes,
            self.feature_dim,
            self.op_catalog,
        ):
            raise InvalidArgumentError("操作权重来源与超网络结构不一致")
        for mine, theirs in zip(self.edges, source.edges):
            for p, q in zip(mine.ops.parameters(), theirs.ops.parameters()):
                p.copy_(q)
        logger.debug("已从来源网络复制 {} 条边的操作权重", len(self.edges))

    def edge(self, u: int, v: int) -> CompoundEdge:
        for edge in self.edges:
            if edge.u == u and edge.v == v:
                return edge
        raise InvalidArgumentError(f"超网络中没有边 {u}->{v}")

    def replicate_inputs(self, x: torch.Tensor) -> list[torch.Tensor]:
        return [x] * self.input_nodes

    @torch.no_grad()
    def cache_distributions(self, t: float, policy: ScalePolicy | None = None) -> None:
        """不经过数据，仅按当前 A 与温度刷新每条边的缓存分布。"""
        for edge in self.edges:
            _, edge.dist = tempered_softmax(edge.alpha.detach(), t, policy)

    def forward(self, x: torch.Tensor, t: float, policy: ScalePolicy | None = None) -> torch.Tensor:
        nodes = node_forward(self, self.replicate_inputs(x), t=t, policy=policy)
        return self.readout(nodes[-1])

    def genotype_logits(self, genotype: Genotype, x: torch.Tensor) -> torch.Tensor:
        nodes = genotype_eval_forward(self, genotype, self.replicate_inputs(x))
        return self.readout(nodes[-1])


def _check_features(h: torch.Tensor, dim: int) -> None:
    if h.dim() == 0 or h.shape[-1] != dim:
        raise InvalidArgumentError(f"特征维度不匹配: 期望 {dim}, 得到 {tuple(h.shape)}")


def _check_inputs(net: SuperNet, inputs: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    if len(inputs) != net.input_nodes:
        raise InvalidArgumentError(f"需要 {net.input_nodes} 个输入节点特征, 得到 {len(inputs)}")
    for h in inputs:
        _check_features(h, net.feature_dim)
    return list(inputs)


# ==================== 前向与反向 ====================


def edge_forward(edge: CompoundEdge, h_u: torch.Tensor, dist: TemperedDistribution) -> torch.Tensor:
    """c_{u,v}(h_u) = Σ_i β^i · o^i(h_u)，β 视为常量。

    β^i = 0 的操作仍然参与计算。
    """
    _check_features(h_u, edge.dim)
    if dist.beta.shape != (len(edge.ops),):
        raise InvalidArgumentError(f"β 长度 {tuple(dist.beta.shape)} 与操作数 {len(edge.ops)} 不一致")
    return torch.tensordot(dist.beta, edge.op_outputs(h_u), dims=1)


def node_forward(
    net: SuperNet,
    inputs: Sequence[torch.Tensor],
    t: float | None = None,
    policy: ScalePolicy | None = None,
) -> list[torch.Tensor]:
    """按拓扑序计算全部节点特征 h_v = Σ_{u<v} c_{u,v}(h_u)。

    Args:
        net: 超网络
        inputs: 输入节点特征
        t: 给定温度时重新计算并缓存每条边的分布（A 可求导）；
            为 None 时使用已缓存的分布（A 不参与求导）
        policy: s 策略，None 为普通 softmax

    Returns:
        list[torch.Tensor]: 节点 0..V-1 的特征
    """
    nodes = _check_inputs(net, inputs)
    for v in range(net.input_nodes, net.num_nodes):
        total: torch.Tensor | None = None
        for edge in net.edges:
            if edge.v != v:
                continue
            if t is None:
                if edge.dist is None:
                    raise StateError(f"边 {edge.u}->{edge.v} 尚未缓存分布")
                out = edge_forward(edge, nodes[edge.u], edge.dist)
            else:
                out = edge(nodes[edge.u], t, policy)
            total = out if total is None else total + out
        nodes.append(total)
    return nodes


@dataclass
class EdgeGradients:
    """单条边的反向结果。"""

    beta: torch.Tensor
    alpha: torch.Tensor
    weights: list[torch.Tensor]
    h_u: torch.Tensor


def edge_backward(edge: CompoundEdge, h_u: torch.Tensor, upstream: torch.Tensor) -> EdgeGradients:
    """单条边的反向：∂l/∂β^i = ⟨upstream, o^i(h_u)⟩，∂l/∂A 走 sn_backward。

    操作权重的梯度按 β^i 缩放，β^i = 0 时恰好为 0。

    Raises:
        StateError: 该边尚未前向
    """
    if edge.dist is None:
        raise StateError(f"边 {edge.u}->{edge.v} 尚未前向，无法反向")
    _check_features(h_u, edge.dim)
    if upstream.shape != h_u.shape:
        raise InvalidArgumentError(f"上游梯度形状 {tuple(upstream.shape)} 与特征形状 {tuple(h_u.shape)} 不一致")

    with torch.enable_grad():
        h = h_u.detach().requires_grad_(True)
        outputs = edge.op_outputs(h)
        grad_beta = (outputs.detach() * upstream).reshape(len(edge.ops), -1).sum(dim=1)
        grad_alpha = sn_backward(edge.dist, grad_beta)

        mixed = torch.tensordot(edge.dist.beta, outputs, dims=1)
        params = list(edge.ops.parameters())
        grads = torch.autograd.grad(mixed, [h, *params], grad_outputs=upstream, allow_unused=True)

    grad_h = grads[0] if grads[0] is not None else torch.zeros_like(h)
    grad_w = [g if g is not None else torch.zeros_like(p) for g, p in zip(grads[1:], params)]
    return EdgeGradients(beta=grad_beta, alpha=grad_alpha, weights=grad_w, h_u=grad_h)


# ==================== 离散化 ====================


def _first_argmax(values: torch.Tensor) -> int:
    return int((values == values.max()).nonzero()[0, 0])


def discretize(net: SuperNet, exclude_zero: bool = settings.DEFAULT_EXCLUDE_ZERO) -> Genotype:
    """每条边取 β 的 argmax（并列取最小下标）；exclude_zero 时跳过零操作。"""
    zero_index = net.op_catalog.index(settings.ZERO_OP) if settings.ZERO_OP in net.op_catalog else None
    selections = []
    for edge in net.edges:
        if edge.dist is None:
            raise StateError(f"边 {edge.u}->{edge.v} 尚未缓存分布，无法离散化")
        beta = edge.dist.beta.clone()
        if exclude_zero and zero_index is not None and beta.numel() > 1:
            beta[zero_index] = -math.inf
        selections.append(EdgeSelection(edge.u, edge.v, _first_argmax(beta)))
    return Genotype(num_nodes=net.num_nodes, catalog=net.op_catalog, selections=tuple(selections))


def check_genotype(net: SuperNet, genotype: Genotype) -> None:
    if genotype.num_nodes != net.num_nodes or genotype.catalog != net.op_catalog:
        raise InvalidArgumentError(
            f"离散结构与超网络不匹配: 节点 {genotype.num_nodes} vs {net.num_nodes}, "
            f"目录 {genotype.catalog} vs {net.op_catalog}"
        )
    edges = {(e.u, e.v) for e in net.edges}
    chosen = {(s.u, s.v) for s in genotype.selections}
    if edges != chosen:
        raise InvalidArgumentError(f"离散结构的边集合与超网络不一致: 缺少 {sorted(edges - chosen)}, 多余 {sorted(chosen - edges)}")


def genotype_eval_forward(net: SuperNet, genotype: Genotype, inputs: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """单路径前向：每条边只计算被选中的操作，权重取自超网络。"""
    check_genotype(net, genotype)
    nodes = _check_inputs(net, inputs)
    for v in range(net.input_nodes, net.num_nodes):
        total: torch.Tensor | None = None
        for edge in net.edges:
            if edge.v != v:
                continue
            out = edge.ops[genotype.op_index(edge.u, edge.v)](nodes[edge.u])
            total = out if total is None else total + out
        nodes.append(total)
    return nodes


def enumerate_genotypes(net: SuperNet) -> Iterator[Genotype]:
    """枚举全部 M^|C| 个离散结构（按边顺序的字典序）。"""
    m = len(net.op_catalog)
    for combo in itertools.product(range(m), repeat=len(net.edges)):
        yield Genotype(
            num_nodes=net.num_nodes,
            catalog=net.op_catalog,
            selections=tuple(EdgeSelection(e.u, e.v, op) for e, op in zip(net.edges, combo)),
        )


@torch.no_grad()
def mismatch_curve(net: SuperNet, inputs: Sequence[torch.Tensor], levels: Sequence[float]) -> list[tuple[float, float]]:
    """多路径与单路径输出差随稀疏度的变化。

    对每个水平 p，令每条边的 β 最大项（位于 A 的 argmax）等于 p、其余
    项平分 1−p，返回末节点输出差的范数。调用结束后恢复原缓存分布。

    Returns:
        list[tuple[float, float]]: (p, ‖node_forward − genotype_eval_forward‖)
    """
    m = len(net.op_catalog)
    saved = [edge.dist for edge in net.edges]
    curve: list[tuple[float, float]] = []
    try:
        for level in levels:
            level = float(level)
            if not 1.0 / m - 1e-12 <= level <= 1.0:
                raise InvalidArgumentError(f"稀疏水平必须位于 [1/M, 1], 得到 {level}")
            for edge in net.edges:
                beta = torch.full((m,), (1.0 - level) / (m - 1) if m > 1 else 0.0, dtype=DTYPE)
                beta[_first_argmax(edge.alpha.detach())] = level
                edge.dist = TemperedDistribution(beta=beta, t=1.0)
            multi = node_forward(net, inputs)[-1]
            single = genotype_eval_forward(net, discretize(net), inputs)[-1]
            curve.append((level, float(torch.linalg.vector_norm(multi - single))))
    finally:
        for edge, dist in zip(net.edges, saved):
            edge.dist = dist
    logger.debug("失配曲线: {}", curve)
    return curve
