"""种植任务缓存：使用 FIFO 队列实现先进先出缓存。"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from loguru import logger

from src.config import settings
from src.config.run_config import RunConfig
from src.core.errors import ConfigError
from src.core.space import Genotype, SuperNet
from src.services.data_service import Dataset, PlantedTask, generate, load_csv, planted_optimum_task

CacheKey = tuple[int, int, int]


class DatasetCache:
    """种植任务 FIFO 缓存。

    以 (seed, dim, n_samples) 为键；构造一次种植任务需要穷举校验全部离散结构，
    同一种子上的多次消融实验共享同一个任务。缓存满时移除最早加入的条目。
    """

    def __init__(
        self,
        max_size: int = settings.PLANTED_CACHE_SIZE,
        builder: Callable[[int, int, int], PlantedTask] | None = None,
    ):
        """初始化缓存。

        Args:
            max_size: 缓存最大容量
            builder: 未命中时的构造函数 (seed, dim, n_samples) -> PlantedTask
        """
        self.max_size = max_size
        self._builder = builder or (lambda seed, dim, n: planted_optimum_task(seed, dim, n_samples=n))
        self._cache: OrderedDict[CacheKey, PlantedTask] = OrderedDict()
        self._lock = threading.Lock()
        logger.info("DatasetCache 初始化, 容量: {}", max_size)

    def get(self, seed: int, dim: int, n_samples: int) -> Optional[PlantedTask]:
        with self._lock:
            task = self._cache.get((seed, dim, n_samples))
        logger.debug("缓存{}: seed={}, dim={}, n={}", "命中" if task is not None else "未命中", seed, dim, n_samples)
        return task

    def put(self, seed: int, dim: int, n_samples: int, task: PlantedTask) -> None:
        """放入缓存；已满时移除最早的条目（FIFO）。"""
        key = (seed, dim, n_samples)
        with self._lock:
            if key in self._cache:
                del self._cache[key]
            if len(self._cache) >= self.max_size:
                removed_key, _ = self._cache.popitem(last=False)
                logger.debug("缓存已满，移除最早条目: {} (当前容量: {}/{})", removed_key, len(self._cache), self.max_size)
            self._cache[key] = task

    def get_or_build(self, seed: int, dim: int, n_samples: int = settings.DEFAULT_SAMPLES) -> PlantedTask:
        task = self.get(seed, dim, n_samples)
        if task is None:
            task = self._builder(seed, dim, n_samples)
            self.put(seed, dim, n_samples, task)
        return task

    def clear(self) -> None:
        with self._lock:
            count = len(self._cache)
            self._cache.clear()
        logger.info("缓存已清空, 清除 {} 条记录", count)

    def size(self) -> int:
        with self._lock:
            return len(self._cache)

    def contains(self, seed: int, dim: int, n_samples: int = settings.DEFAULT_SAMPLES) -> bool:
        with self._lock:
            return (seed, dim, n_samples) in self._cache


# 全局单例缓存实例
_global_cache: Optional[DatasetCache] = None
_global_lock = threading.Lock()


def get_dataset_cache() -> DatasetCache:
    """获取全局种植任务缓存实例（线程安全）。"""
    global _global_cache
    with _global_lock:
        if _global_cache is None:
            _global_cache = DatasetCache(max_size=settings.PLANTED_CACHE_SIZE)
        return _global_cache


@dataclass(frozen=True)
class ResolvedData:
    """一次运行的数据来源。

    planted 与 op_source 只在种植任务下非空；op_source 是生成标签的网络。
    """

    dataset: Dataset
    planted: Genotype | None = None
    op_source: SuperNet | None = None


def resolve_dataset(config: RunConfig, seed: int) -> ResolvedData:
    """按配置得到本次运行的数据集。

    Raises:
        ConfigError: 种植任务与网络配置不兼容，或 CSV 与网络维度不一致
    """
    net, data = config.net, config.data
    if data.task == "blobs":
        return ResolvedData(generate(seed, data.n_samples, net.dim, net.n_classes, data.noise_sigma))

    if data.task == "csv":
        dataset = load_csv(Path(data.data_path), seed=int(seed), n_classes=net.n_classes)
        if dataset.dim != net.dim:
            raise ConfigError(f"CSV feature dimension {dataset.dim} does not match dim = {net.dim}")
        return ResolvedData(dataset)

    if net.nodes != 3 or net.input_nodes != 1 or net.catalog != settings.OP_CATALOG:
        raise ConfigError("planted task requires nodes = 3, input_nodes = 1 and the default catalog")
    if net.n_classes != settings.DEFAULT_CLASSES:
        raise ConfigError(f"planted task requires n_classes = {settings.DEFAULT_CLASSES}")
    task = get_dataset_cache().get_or_build(int(seed), net.dim, data.n_samples)
    return ResolvedData(task.dataset, planted=task.genotype, op_source=task.label_net)
