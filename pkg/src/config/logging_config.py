"""日志配置模块：基于 loguru 的统一日志初始化。"""

from __future__ import annotations

import os
import sys
from pathlib import Path

from loguru import logger

from src.config import settings


_IS_CONFIGURED: bool = False
_LOG_FORMAT: str = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name} | {message}"


def resolve_log_level(level: str | None = None) -> str:
    """解析日志级别：显式参数优先，其次读取 ``SPARSETEMP_LOG`` 环境变量。

    Returns:
        str: loguru 级别名（ERROR / INFO / DEBUG）
    """
    raw = level if level is not None else os.environ.get(settings.LOG_ENV_VAR, settings.DEFAULT_LOG_LEVEL)
    key = raw.strip().lower()
    if key not in settings.LOG_LEVELS:
        logger.warning("未知日志级别 {}={!r}，回退为 info", settings.LOG_ENV_VAR, raw)
        key = settings.DEFAULT_LOG_LEVEL
    return settings.LOG_LEVELS[key]


def setup_logging(level: str | None = None, force: bool = False) -> None:
    """初始化 loguru 日志配置。

    - 控制台输出走 stderr，stdout 留给 CSV/JSON 命令输出；
    - 级别来自参数或环境变量 ``SPARSETEMP_LOG``（error / info / debug）；
    - 重复调用不会重复添加 handler（``force=True`` 时重新配置）。
    """

    global _IS_CONFIGURED
    if _IS_CONFIGURED and not force:
        return

    # 清理默认 handlers，避免重复输出
    logger.remove()

    logger.add(
        sink=sys.stderr,
        level=resolve_log_level(level),
        format=_LOG_FORMAT,
    )

    _IS_CONFIGURED = True


def add_run_log_file(out_dir: Path) -> int:
    """为单次运行在输出目录下追加文件日志 ``search.log``。

    Returns:
        int: sink id，运行结束后用 ``logger.remove(sink_id)`` 移除
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    return logger.add(
        out_dir / "search.log",
        encoding="utf-8",
        enqueue=True,
        backtrace=True,
        diagnose=False,
        level=resolve_log_level(),
        format=_LOG_FORMAT,
    )
