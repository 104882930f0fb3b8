"""通用格式化工具方法。"""

from src.config import settings


def format_float(value: float) -> str:
    """按 17 位有效数字格式化浮点数，保证 CSV 写出后可无损读回。"""
    return format(float(value), settings.CSV_FLOAT_FORMAT)


def format_row(values) -> str:
    """将一行数值格式化为逗号分隔文本（整数原样输出）。"""
    return ",".join(str(v) if isinstance(v, (int, str)) else format_float(v) for v in values)
