"""本地开发脚本：用小配置跑一次搜索并打印每个 epoch 的摘要。"""
from pathlib import Path

from loguru import logger

from src.config.logging_config import setup_logging
from src.config.run_config import load_config
from src.services.bilevel import run_search
from src.services.dataset_cache import resolve_dataset

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "minimal.toml"


def main(seed: int = 0) -> None:
    setup_logging()
    config = load_config(CONFIG_PATH)
    data = resolve_dataset(config, seed)
    result = run_search(config, data.dataset, seed, op_source=data.op_source)
    for record in result.trace.records:
        logger.info(
            "epoch={} t={:.4g} H={:.4f} drop={:+.4f}",
            record.epoch,
            record.t,
            record.mean_entropy,
            record.discretization_drop,
        )
    logger.info("离散结构: {}", result.genotype.op_names())
    if data.planted is not None:
        logger.info("种植结构: {}", data.planted.op_names())


if __name__ == "__main__":
    main()
