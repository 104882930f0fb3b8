"""异常层级定义。"""

from __future__ import annotations

from typing import Any


class SparseTempError(Exception):
    """项目内所有异常的基类。"""


class InvalidArgumentError(SparseTempError, ValueError):
    """参数不合法（非正温度、NaN 输入、长度不匹配等）。"""


class StateError(SparseTempError, RuntimeError):
    """调用顺序或缓存状态错误（例如前向之前调用反向）。"""


class ConfigError(SparseTempError, ValueError):
    """配置错误，消息中注明被违反的约束。"""


class ScheduleError(InvalidArgumentError):
    """训练过程中温度调度的定义域错误，消息带 epoch 上下文。"""


class NanLossError(SparseTempError, FloatingPointError):
    """损失出现 NaN/Inf，搜索中止。

    Attributes:
        epoch: 出错的 epoch
        step: 出错的 step
        phase: "arch" 或 "weight"
        trace: 中止前已完成 epoch 的 SearchTrace（可能为 None）
    """

    def __init__(self, message: str, epoch: int = -1, step: int = -1, phase: str = "", trace: Any = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.phase = phase
        self.trace = trace


class PlantedTaskError(SparseTempError, RuntimeError):
    """种植任务构造校验失败，``report`` 保存最后一次尝试的穷举结果。"""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report
