"""一阶交替双层优化：验证集更新架构参数 A，训练集更新操作权重 ω。

每个 step 先在验证批次上做一次 arch_step，再在训练批次上做一次
weight_step；每个 epoch 结束后统计熵与准确率，并推进温度调度。
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from loguru import logger

from src.config.run_config import NetConfig, RunConfig, TrainerConfig
from src.core.errors import InvalidArgumentError, NanLossError
from src.core.metrics import discretized_accuracy, mean_edge_entropy, supernet_accuracy
from src.core.schedules import TemperatureScheduler, TemperatureState, estimate_e_a
from src.core.snsoftmax import ScalePolicy
from src.core.space import Genotype, SuperNet, discretize
from src.services.data_service import Dataset, DataSplit, SplitTag


def build_supernet(config: NetConfig, generator: torch.Generator | None = None) -> SuperNet:
    return SuperNet(
        num_nodes=config.nodes,
        dim=config.dim,
        n_classes=config.n_classes,
        catalog=config.catalog,
        input_nodes=config.input_nodes,
        generator=generator,
    )


def make_policy(config: TrainerConfig) -> ScalePolicy | None:
    """softmax_mode → s 策略；plain 模式返回 None。"""
    if config.softmax_mode == "plain":
        return None
    if config.softmax_mode == "sn_fixed_s":
        return ScalePolicy("fixed", config.s)
    return ScalePolicy("st_const", config.st_const)


def clip_global_norm(grads: Sequence[torch.Tensor], max_norm: float) -> float:
    """全局范数裁剪：G > c 时所有梯度乘以 c/G（不加 epsilon），原地修改。

    Returns:
        float: 裁剪前的全局范数 G
    """
    if max_norm <= 0:
        raise InvalidArgumentError(f"裁剪阈值必须 > 0, 得到 {max_norm}")
    total = math.sqrt(sum(float(torch.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g.mul_(scale)
    return total


@dataclass(frozen=True)
class StepResult:
    loss: float
    grad_norm: float


def _check_batch(batch: DataSplit, expected: SplitTag, phase: str) -> None:
    if batch.tag is not expected:
        raise InvalidArgumentError(f"{phase} 只能使用 {expected} 批次, 得到 {batch.tag}")
    if len(batch) == 0:
        raise InvalidArgumentError(f"{phase} 批次为空")


def _loss(net: SuperNet, batch: DataSplit, t: float, policy: ScalePolicy | None, phase: str) -> torch.Tensor:
    loss = F.cross_entropy(net(batch.x, t, policy), batch.y)
    if not bool(torch.isfinite(loss)):
        logger.error("{} 阶段损失非有限: {}", phase, loss.item())
        raise NanLossError(f"non-finite {phase} loss: {loss.item()}", phase=phase)
    return loss


class StepOptimizers:
    """架构参数与操作权重各一个 SGD 优化器，整个搜索期间复用。

    train_ops=False 时权重优化器只包含读出层。
    """

    def __init__(self, net: SuperNet, config: TrainerConfig):
        self.arch = torch.optim.SGD(net.arch_parameters(), lr=config.lr_arch)
        self.weight = torch.optim.SGD(net.weight_parameters(include_ops=config.train_ops), lr=config.lr_omega)


def _params(optimizer: torch.optim.Optimizer) -> list[torch.nn.Parameter]:
    return list(optimizer.param_groups[0]["params"])


def _descend(optimizer: torch.optim.Optimizer, grads: Sequence[torch.Tensor], lr: float) -> None:
    if lr == 0.0:
        return
    group = optimizer.param_groups[0]
    group["lr"] = lr
    for p, g in zip(group["params"], grads):
        p.grad = g
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def arch_step(
    net: SuperNet,
    val_batch: DataSplit,
    state: TemperatureState,
    config: TrainerConfig,
    policy: ScalePolicy | None = None,
    lr: float | None = None,
    optimizers: StepOptimizers | None = None,
) -> StepResult:
    """在验证批次上更新 A（梯度经 sn_backward 或普通 softmax 反向）。

    grad_clip_arch > 0 时先做全局范数裁剪，再做一步梯度下降；
    lr=0 时只计算损失与梯度范数，不更新参数。

    Raises:
        InvalidArgumentError: 批次不是验证集或为空
        NanLossError: 损失为 NaN/Inf
    """
    _check_batch(val_batch, SplitTag.VAL, "arch_step")
    optimizer = optimizers.arch if optimizers is not None else torch.optim.SGD(net.arch_parameters(), lr=config.lr_arch)
    params = _params(optimizer)
    loss = _loss(net, val_batch, state.t, policy, "arch")
    grads = list(torch.autograd.grad(loss, params))
    if config.grad_clip_arch > 0:
        norm = clip_global_norm(grads, config.grad_clip_arch)
    else:
        norm = math.sqrt(sum(float(torch.sum(g * g)) for g in grads))
    _descend(optimizer, grads, config.lr_arch if lr is None else lr)
    return StepResult(loss=loss.item(), grad_norm=norm)


def weight_step(
    net: SuperNet,
    train_batch: DataSplit,
    state: TemperatureState,
    config: TrainerConfig,
    policy: ScalePolicy | None = None,
    lr: float | None = None,
    optimizers: StepOptimizers | None = None,
) -> StepResult:
    """在训练批次上更新 ω（含读出层），不裁剪。"""
    _check_batch(train_batch, SplitTag.TRAIN, "weight_step")
    if optimizers is not None:
        optimizer = optimizers.weight
    else:
        optimizer = torch.optim.SGD(net.weight_parameters(include_ops=config.train_ops), lr=config.lr_omega)
    params = _params(optimizer)
    loss = _loss(net, train_batch, state.t, policy, "weight")
    grads = list(torch.autograd.grad(loss, params, allow_unused=True))
    grads = [torch.zeros_like(p) if g is None else g for g, p in zip(grads, params)]
    norm = math.sqrt(sum(float(torch.sum(g * g)) for g in grads))
    _descend(optimizer, grads, config.lr_omega if lr is None else lr)
    return StepResult(loss=loss.item(), grad_norm=norm)


# ==================== 搜索轨迹 ====================


@dataclass(frozen=True)
class EpochRecord:
    """单个 epoch 的记录，温度为该 epoch 训练时使用的温度。"""

    epoch: int
    k: int
    t: float
    t_exp: float
    d_exp: float
    mean_entropy: float
    edge_entropies: tuple[tuple[str, float], ...]
    supernet_val_accuracy: float
    discretized_val_accuracy: float
    e_a: float
    train_loss: float
    val_loss: float

    @property
    def discretization_drop(self) -> float:
        return self.supernet_val_accuracy - self.discretized_val_accuracy


@dataclass
class SearchTrace:
    edge_ids: tuple[str, ...]
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_entropy(self) -> float:
        if not self.records:
            raise InvalidArgumentError("搜索轨迹为空")
        return self.records[-1].mean_entropy

    def entropies(self) -> list[float]:
        return [r.mean_entropy for r in self.records]

    def temperatures(self) -> list[float]:
        return [r.t for r in self.records]


@dataclass
class SearchResult:
    genotype: Genotype
    trace: SearchTrace
    net: SuperNet
    state: TemperatureState
    policy: ScalePolicy | None
    seed: int


def _batch_index(order: torch.Tensor, step: int, batch_size: int) -> torch.Tensor:
    n = order.shape[0]
    return order[(step * batch_size + torch.arange(batch_size)) % n]


def run_search(
    config: RunConfig,
    dataset: Dataset,
    seed: int,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    op_source: SuperNet | None = None,
) -> SearchResult:
    """端到端双层搜索，返回离散结构与搜索轨迹。

    预热 epoch 内只更新 ω，A 保持初始值；之后每个 step 交替更新 A 与 ω。

    Args:
        config: 运行配置
        dataset: 已划分训练/验证集的数据集
        seed: 随机种子（网络初始化与批次顺序）
        on_epoch: 每个 epoch 结束时的回调
        op_source: 给定时从该网络复制操作权重（A 与读出层仍按 seed 初始化）

    Raises:
        NanLossError: 损失非有限，附带 epoch/step 与已完成的轨迹
        ScheduleError: 温度调度定义域错误
    """
    trainer = config.trainer
    g = torch.Generator().manual_seed(int(seed))
    net = build_supernet(config.net, g)
    if dataset.dim != net.feature_dim:
        raise InvalidArgumentError(f"数据维度 {dataset.dim} 与网络维度 {net.feature_dim} 不一致")
    if op_source is not None:
        net.load_op_weights(op_source)
    optimizers = StepOptimizers(net, trainer)
    policy = make_policy(trainer)
    scheduler = TemperatureScheduler(config.schedule, estimate_e_a(net.arch_parameters()), trainer.epochs)
    state = scheduler.initial_state()
    train, val = dataset.train, dataset.val
    trace = SearchTrace(edge_ids=tuple(e.edge_id for e in net.edges))

    logger.info(
        "开始搜索: seed={}, epochs={}, steps={}, mode={}, kind={}, 训练操作权重={}",
        seed,
        trainer.epochs,
        trainer.steps_per_epoch,
        trainer.softmax_mode,
        config.schedule.kind,
        trainer.train_ops,
    )
    for epoch in range(trainer.epochs):
        train_order = torch.randperm(len(train), generator=g)
        val_order = torch.randperm(len(val), generator=g)
        val_losses, train_losses = [], []
        arch_lr = 0.0 if epoch < trainer.warmup_epochs else trainer.lr_arch
        for step in range(trainer.steps_per_epoch):
            val_batch = val.take(_batch_index(val_order, step, trainer.batch_size))
            train_batch = train.take(_batch_index(train_order, step, trainer.batch_size))
            try:
                val_losses.append(arch_step(net, val_batch, state, trainer, policy, arch_lr, optimizers).loss)
                train_losses.append(weight_step(net, train_batch, state, trainer, policy, optimizers=optimizers).loss)
            except NanLossError as exc:
                exc.epoch, exc.step, exc.trace = epoch, step, trace
                logger.error("搜索中止: epoch={}, step={}, 阶段={}", epoch, step, exc.phase)
                raise
            logger.debug("epoch {} step {}: L_val={:.6f}, L_train={:.6f}", epoch, step, val_losses[-1], train_losses[-1])

        net.cache_distributions(state.t, policy)
        report = mean_edge_entropy(net)
        genotype = discretize(net, config.net.exclude_zero)
        e_a_now = estimate_e_a(net.arch_parameters())
        record = EpochRecord(
            epoch=epoch,
            k=state.epoch_k,
            t=state.t,
            t_exp=state.t_exp,
            d_exp=state.d_exp,
            mean_entropy=report.mean,
            edge_entropies=report.per_edge,
            supernet_val_accuracy=supernet_accuracy(net, val.x, val.y),
            discretized_val_accuracy=discretized_accuracy(net, genotype, val.x, val.y),
            e_a=e_a_now,
            train_loss=sum(train_losses) / len(train_losses),
            val_loss=sum(val_losses) / len(val_losses),
        )
        trace.append(record)
        logger.info(
            "epoch {}/{}: t={:.6g}, H={:.4f}, 超网准确率={:.4f}, 离散准确率={:.4f}",
            epoch + 1,
            trainer.epochs,
            record.t,
            record.mean_entropy,
            record.supernet_val_accuracy,
            record.discretized_val_accuracy,
        )
        if on_epoch is not None:
            on_epoch(record)
        state = scheduler.advance(state, epoch, mean_entropy=report.mean, e_a=e_a_now)

    final = discretize(net, config.net.exclude_zero)
    logger.info("搜索完成: seed={}, 最终熵={:.4f}, 结构={}", seed, trace.final_entropy, final.op_names())
    return SearchResult(genotype=final, trace=trace, net=net, state=state, policy=policy, seed=int(seed))
