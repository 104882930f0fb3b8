"""多种子扫描服务：使用线程池并发运行多次搜索。"""

from __future__ import annotations

from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from loguru import logger

from src.config import settings
from src.config.run_config import RunConfig
from src.core.space import Genotype
from src.services.bilevel import SearchResult, run_search
from src.services.dataset_cache import ResolvedData, resolve_dataset


@dataclass(frozen=True)
class SeedOutcome:
    """单个种子的搜索结果；planted 为种植任务的参考结构（高斯团任务为 None）。"""

    seed: int
    result: SearchResult
    planted: Genotype | None

    @property
    def planted_match(self) -> bool | None:
        if self.planted is None:
            return None
        return self.result.genotype.selections == self.planted.selections


class SeedSweepService:
    """多种子扫描服务

    每个种子的搜索独占自己的随机数生成器与网络，结果按种子顺序返回；
    每完成一个种子就通过回调通知调用方。
    """

    def __init__(self, max_workers: int = settings.SWEEP_WORKER_THREADS):
        """初始化扫描服务

        Args:
            max_workers: 线程池大小（建议 1-4）
        """
        self.executor = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="sweep-worker")
        logger.info("SeedSweepService 初始化, 线程池大小: {}", max_workers)

    def run_seeds(
        self,
        config: RunConfig,
        seeds: Sequence[int],
        on_seed_complete: Optional[Callable[[SeedOutcome], None]] = None,
        dataset_for_seed: Optional[Callable[[int], ResolvedData]] = None,
    ) -> list[SeedOutcome]:
        """并发运行多个种子的搜索。

        Args:
            config: 共享的运行配置
            seeds: 种子列表
            on_seed_complete: 单个种子完成回调（在工作线程中调用）
            dataset_for_seed: 种子 → ResolvedData，默认按配置生成

        Returns:
            list[SeedOutcome]: 与 seeds 顺序一致的结果

        Raises:
            SparseTempError: 按种子顺序第一个失败种子的异常原样抛出
        """
        resolve = dataset_for_seed or (lambda seed: resolve_dataset(config, seed))
        logger.info("开始多种子扫描: {} 个种子", len(seeds))

        def run_single(seed: int) -> SeedOutcome:
            data = resolve(seed)
            result = run_search(config, data.dataset, seed, op_source=data.op_source)
            outcome = SeedOutcome(seed=seed, result=result, planted=data.planted)
            logger.info("种子 {} 完成, 最终熵={:.4f}", seed, outcome.result.trace.final_entropy)
            return outcome

        def on_future_done(future: Future) -> None:
            if on_seed_complete is None or future.exception() is not None:
                return
            try:
                on_seed_complete(future.result())
            except Exception as exc:
                logger.exception("处理种子完成回调时出错: {}", exc)

        futures = []
        for seed in seeds:
            future = self.executor.submit(run_single, int(seed))
            future.add_done_callback(on_future_done)
            futures.append(future)

        outcomes = [future.result() for future in futures]
        logger.info("多种子扫描完成: {} 个种子", len(outcomes))
        return outcomes

    def shutdown(self, wait: bool = True) -> None:
        """关闭线程池

        Args:
            wait: 是否等待所有任务完成
        """
        logger.info("关闭 SeedSweepService, wait={}", wait)
        self.executor.shutdown(wait=wait)
