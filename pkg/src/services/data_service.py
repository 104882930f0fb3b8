"""合成数据服务：高斯团数据集、种植最优结构任务、CSV 导入导出。"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import torch
from loguru import logger

from src.config import settings
from src.core.errors import InvalidArgumentError, PlantedTaskError
from src.core.metrics import accuracy, predict
from src.core.snsoftmax import DTYPE
from src.core.space import EdgeSelection, Genotype, SuperNet, enumerate_genotypes, genotype_eval_forward
from src.utils.fmt_utils import format_float


class SplitTag(StrEnum):
    TRAIN = "train"
    VAL = "val"


@dataclass(frozen=True)
class DataSplit:
    """带标签的数据划分，arch_step 只接受 VAL，weight_step 只接受 TRAIN。"""

    tag: SplitTag
    x: torch.Tensor
    y: torch.Tensor

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def take(self, index: torch.Tensor) -> DataSplit:
        return DataSplit(tag=self.tag, x=self.x[index], y=self.y[index])


@dataclass(frozen=True)
class Dataset:
    """不可变数据集；偶数下标为训练集，奇数下标为验证集。"""

    features: torch.Tensor
    labels: torch.Tensor
    seed: int
    n_classes: int

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def split(self, tag: SplitTag) -> DataSplit:
        start = 0 if tag is SplitTag.TRAIN else 1
        return DataSplit(tag=tag, x=self.features[start::2], y=self.labels[start::2])

    @property
    def train(self) -> DataSplit:
        return self.split(SplitTag.TRAIN)

    @property
    def val(self) -> DataSplit:
        return self.split(SplitTag.VAL)

    def class_counts(self) -> list[int]:
        return torch.bincount(self.labels, minlength=self.n_classes).tolist()


def _check_sizes(n_samples: int, dim: int, n_classes: int) -> None:
    if n_classes < 2:
        raise InvalidArgumentError(f"类别数必须 ≥ 2, 得到 {n_classes}")
    if n_samples < 2 * n_classes:
        raise InvalidArgumentError(f"样本数 {n_samples} 小于 2·类别数 {2 * n_classes}")
    if dim < n_classes:
        raise InvalidArgumentError(f"特征维度 {dim} 小于类别数 {n_classes}")


def blob_centers(dim: int, n_classes: int) -> torch.Tensor:
    """类 c 的中心 = 2.0·e_c。"""
    return settings.BLOB_CENTER_SCALE * torch.eye(n_classes, dim, dtype=DTYPE)


def generate(
    seed: int,
    n_samples: int = settings.DEFAULT_SAMPLES,
    dim: int = settings.DEFAULT_DIM,
    n_classes: int = settings.DEFAULT_CLASSES,
    noise_sigma: float = settings.DEFAULT_NOISE_SIGMA,
) -> Dataset:
    """生成类条件高斯团数据集。

    标签为 i mod K 的随机排列（各类数量相差不超过 1），
    同一种子重复生成逐位一致。

    Args:
        seed: 随机种子
        n_samples: 样本数，≥ 2·n_classes
        dim: 特征维度，≥ n_classes
        n_classes: 类别数
        noise_sigma: 各向同性噪声标准差

    Returns:
        Dataset: 生成的数据集
    """
    _check_sizes(n_samples, dim, n_classes)
    if not math.isfinite(noise_sigma) or noise_sigma < 0:
        raise InvalidArgumentError(f"noise_sigma 必须 ≥ 0, 得到 {noise_sigma!r}")

    g = torch.Generator().manual_seed(int(seed))
    labels = (torch.arange(n_samples) % n_classes)[torch.randperm(n_samples, generator=g)]
    noise = torch.randn(n_samples, dim, generator=g, dtype=DTYPE)
    features = blob_centers(dim, n_classes)[labels] + noise_sigma * noise

    logger.info("生成高斯团数据集: seed={}, n={}, dim={}, K={}, σ={}", seed, n_samples, dim, n_classes, noise_sigma)
    return Dataset(features=features, labels=labels, seed=int(seed), n_classes=n_classes)


def bayes_accuracy(
    dim: int = settings.DEFAULT_DIM,
    n_classes: int = settings.DEFAULT_CLASSES,
    noise_sigma: float = settings.DEFAULT_NOISE_SIGMA,
    draws: int = 1_000_000,
    seed: int = 0,
) -> float:
    """高斯团任务贝叶斯最优准确率的蒙特卡洛估计。

    各类中心范数相同、先验相同，最优判别即 argmax ⟨x, μ_c⟩，
    只有前 K 维与判别相关。
    """
    _check_sizes(2 * n_classes, dim, n_classes)
    g = torch.Generator().manual_seed(seed)
    labels = torch.randint(0, n_classes, (draws,), generator=g)
    x = settings.BLOB_CENTER_SCALE * torch.nn.functional.one_hot(labels, n_classes).to(DTYPE)
    x = x + noise_sigma * torch.randn(draws, n_classes, generator=g, dtype=DTYPE)
    return accuracy(x, labels)


def fit_linear_probe(
    features: torch.Tensor,
    labels: torch.Tensor,
    n_classes: int,
    steps: int = settings.PROBE_STEPS,
    lr: float = settings.PROBE_LR,
) -> torch.Tensor:
    """全批量梯度下降训练无偏置线性读出层（交叉熵），从零初始化。

    Returns:
        torch.Tensor: 权重矩阵，形状 (n_classes, dim)
    """
    if labels.numel() == 0:
        raise InvalidArgumentError("探针训练数据为空")
    x = features.detach().to(DTYPE)
    onehot = torch.nn.functional.one_hot(labels, n_classes).to(DTYPE)
    weight = torch.zeros(n_classes, x.shape[1], dtype=DTYPE)
    n = x.shape[0]
    for _ in range(steps):
        probs = torch.softmax(x @ weight.T, dim=1)
        weight = weight - lr * (probs - onehot).T @ x / n
    return weight


# ==================== 种植最优结构任务 ====================


@dataclass(frozen=True)
class PlantedReport:
    """种植任务穷举校验结果。"""

    seed: int
    attempt: int
    n_genotypes: int
    planted_accuracy: float
    best_other_accuracy: float
    best_other: Genotype
    accuracies: dict[tuple[int, ...], float] = field(repr=False)

    @property
    def margin(self) -> float:
        return self.planted_accuracy - self.best_other_accuracy

    @property
    def passed(self) -> bool:
        return (
            self.planted_accuracy >= settings.PLANTED_MIN_ACCURACY
            and self.best_other_accuracy <= settings.PLANTED_MAX_OTHER_ACCURACY
            and self.margin >= settings.PLANTED_MIN_MARGIN
        )


@dataclass(frozen=True)
class PlantedTask:
    """种植任务：数据集、种植结构、校验报告与生成标签的网络。

    label_net 的操作权重可用于热启动搜索网络（见 run_search 的 op_source）。
    """

    dataset: Dataset
    genotype: Genotype
    report: PlantedReport
    label_net: SuperNet = field(repr=False)


def planted_genotype(catalog: tuple[str, ...] = settings.OP_CATALOG) -> Genotype:
    """V=3 cell：指定边为 tanh_linear，其余边为恒等。"""
    nonlinear = settings.PLANTED_NONLINEAR_EDGE
    selections = []
    for u, v in ((0, 1), (0, 2), (1, 2)):
        name = "tanh_linear" if (u, v) == nonlinear else "skip_connect"
        selections.append(EdgeSelection(u, v, catalog.index(name)))
    return Genotype(num_nodes=3, catalog=catalog, selections=tuple(selections))


def _genotype_key(genotype: Genotype) -> tuple[int, ...]:
    return tuple(sel.op for sel in genotype.selections)


def _balanced_indices(labels: torch.Tensor, n_classes: int, n_samples: int) -> torch.Tensor | None:
    """从候选池中按出现顺序为每类选取等量样本，保持原有顺序。"""
    per_class = [n_samples // n_classes + (1 if c < n_samples % n_classes else 0) for c in range(n_classes)]
    chosen = []
    for c, need in enumerate(per_class):
        idx = (labels == c).nonzero().reshape(-1)
        if idx.numel() < need:
            return None
        chosen.append(idx[:need])
    return torch.cat(chosen).sort().values


@torch.no_grad()
def _build_planted(attempt_seed: int, dim: int, n_samples: int) -> tuple[Dataset, SuperNet, Genotype] | None:
    g = torch.Generator().manual_seed(attempt_seed)
    label_net = SuperNet(num_nodes=3, dim=dim, n_classes=settings.DEFAULT_CLASSES, generator=g)
    genotype = planted_genotype(label_net.op_catalog)
    u, v = settings.PLANTED_NONLINEAR_EDGE
    tanh_op = label_net.edge(u, v).ops[label_net.op_catalog.index("tanh_linear")]
    for edge in label_net.edges:
        for weight in edge.ops.parameters():
            weight.mul_(settings.PLANTED_OP_GAIN)
    tanh_op.weight.copy_(-settings.PLANTED_TANH_GAIN * torch.eye(dim, dtype=DTYPE))

    pool = 4 * n_samples
    x = torch.randn(pool, dim, generator=g, dtype=DTYPE)
    labels = predict(label_net.genotype_logits(genotype, x))
    index = _balanced_indices(labels, label_net.n_classes, n_samples)
    if index is None:
        logger.warning("种植任务 seed={} 候选池中某类样本不足，跳过本次尝试", attempt_seed)
        return None
    dataset = Dataset(features=x[index], labels=labels[index], seed=attempt_seed, n_classes=label_net.n_classes)
    return dataset, label_net, genotype


@torch.no_grad()
def verify_planted(dataset: Dataset, label_net: SuperNet, genotype: Genotype, attempt: int = 0) -> PlantedReport:
    """穷举全部离散结构：标注网络 ω + 新训练的读出层，在验证集上评估。"""
    train, val = dataset.train, dataset.val
    planted_key = _genotype_key(genotype)
    accuracies: dict[tuple[int, ...], float] = {}
    best_other: Genotype | None = None
    best_other_acc = -1.0

    for candidate in enumerate_genotypes(label_net):
        train_feat = genotype_eval_forward(label_net, candidate, label_net.replicate_inputs(train.x))[-1]
        val_feat = genotype_eval_forward(label_net, candidate, label_net.replicate_inputs(val.x))[-1]
        weight = fit_linear_probe(
            train_feat,
            train.y,
            dataset.n_classes,
            steps=settings.PLANTED_PROBE_STEPS,
            lr=settings.PLANTED_PROBE_LR,
        )
        acc = accuracy(val_feat @ weight.T, val.y)
        key = _genotype_key(candidate)
        accuracies[key] = acc
        if key != planted_key and acc > best_other_acc:
            best_other, best_other_acc = candidate, acc

    report = PlantedReport(
        seed=dataset.seed,
        attempt=attempt,
        n_genotypes=len(accuracies),
        planted_accuracy=accuracies[planted_key],
        best_other_accuracy=best_other_acc,
        best_other=best_other,
        accuracies=accuracies,
    )
    logger.info(
        "种植任务校验: {} 个结构, 种植准确率={:.4f}, 次优={:.4f} ({}), 间隔={:.4f}",
        report.n_genotypes,
        report.planted_accuracy,
        report.best_other_accuracy,
        report.best_other.op_names(),
        report.margin,
    )
    return report


def planted_optimum_task(
    seed: int,
    dim: int = settings.DEFAULT_DIM,
    n_samples: int = settings.DEFAULT_SAMPLES,
    max_attempts: int = settings.PLANTED_MAX_ATTEMPTS,
) -> PlantedTask:
    """构造唯一最优离散结构的数据集，并穷举校验。

    校验失败时用派生种子重试，最多 max_attempts 次。

    Raises:
        InvalidArgumentError: dim < 4
        PlantedTaskError: 所有尝试均未通过校验
    """
    if dim < 4:
        raise InvalidArgumentError(f"种植任务要求 dim ≥ 4, 得到 {dim}")
    _check_sizes(n_samples, dim, settings.DEFAULT_CLASSES)

    report: PlantedReport | None = None
    for attempt in range(max_attempts):
        attempt_seed = int(seed) + attempt * 1_000_003
        built = _build_planted(attempt_seed, dim, n_samples)
        if built is None:
            continue
        dataset, label_net, genotype = built
        report = verify_planted(dataset, label_net, genotype, attempt=attempt)
        if report.passed:
            logger.info("种植任务构造成功: seed={}, 第 {} 次尝试", seed, attempt + 1)
            return PlantedTask(dataset=dataset, genotype=genotype, report=report, label_net=label_net)
        logger.warning("种植任务第 {} 次尝试未通过校验 (间隔 {:.4f})", attempt + 1, report.margin)

    logger.error("种植任务构造失败: seed={}, 共尝试 {} 次", seed, max_attempts)
    raise PlantedTaskError(f"planted task verification failed after {max_attempts} attempts", report=report)


# ==================== CSV ====================


def dump_csv(dataset: Dataset, path: Path) -> None:
    """导出为 CSV：表头 feature_0..feature_{d-1},label。"""
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"feature_{j}" for j in range(dataset.dim)] + ["label"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row, label in zip(dataset.features.tolist(), dataset.labels.tolist()):
            writer.writerow([format_float(v) for v in row] + [label])
    logger.debug("数据集已导出: {} ({} 行)", path, len(dataset))


def load_csv(path: Path, seed: int = -1, n_classes: int | None = None) -> Dataset:
    """从 CSV 读取数据集，必须带表头。"""
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgumentError(f"CSV 文件为空: {path}")
    header, body = rows[0], rows[1:]
    dim = len(header) - 1
    expected = [f"feature_{j}" for j in range(dim)] + ["label"]
    if dim < 1 or header != expected:
        raise InvalidArgumentError(f"CSV 表头不合法: {header[:3]}...")
    try:
        features = torch.tensor([[float(v) for v in row[:dim]] for row in body], dtype=DTYPE).reshape(-1, dim)
        labels = torch.tensor([int(row[dim]) for row in body], dtype=torch.int64)
    except (ValueError, IndexError) as exc:
        raise InvalidArgumentError(f"CSV 数据行格式错误: {exc}") from exc
    k = n_classes if n_classes is not None else (int(labels.max()) + 1 if labels.numel() else 0)
    return Dataset(features=features, labels=labels, seed=seed, n_classes=k)
