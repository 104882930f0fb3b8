"""运行配置：从 TOML 键值文件加载并校验。

键既可以写在顶层，也可以写在 ``[schedule]`` / ``[net]`` / ``[data]`` /
``[trainer]`` 小节里；加载时展平，重复键与未知键都会报错。
"""

from __future__ import annotations

import tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from loguru import logger

from src.config import settings
from src.core.errors import ConfigError
from src.core.schedules import ScheduleKind
from src.core.space import OP_REGISTRY

SECTIONS: tuple[str, ...] = ("schedule", "net", "data", "trainer")
SOFTMAX_MODES: tuple[str, ...] = ("plain", "sn_fixed_s", "sn_st_const")
TASKS: tuple[str, ...] = ("blobs", "planted", "csv")


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = ScheduleKind.EDD.value
    t0: float = settings.DEFAULT_T0
    t_n: float = settings.DEFAULT_TN
    n_points: int = settings.DEFAULT_N_POINTS
    cycles: int = settings.DEFAULT_CYCLES
    lam: float = settings.DEFAULT_LAMBDA
    rho: float = settings.EDD_RHO
    warmup: int = settings.DEFAULT_WARMUP
    reestimate_e_a: bool = False

    def __post_init__(self) -> None:
        if self.kind not in {k.value for k in ScheduleKind}:
            raise ConfigError(f"未知调度类型 kind={self.kind!r}，可选 {[k.value for k in ScheduleKind]}")
        _require(self.t0 > 0 and self.t_n > 0, "t0 and t_n must be positive")
        _require(self.t0 > self.t_n, "t0 must be greater than t_n")
        _require(self.n_points >= 1, "n_points must be >= 1")
        _require(self.cycles >= 1, "cycles must be >= 1")
        _require(self.lam > 0, "lambda must be positive")
        _require(self.rho == settings.EDD_RHO, f"rho is fixed at {settings.EDD_RHO}")
        _require(self.warmup >= 0, "warmup must be >= 0")


@dataclass(frozen=True)
class NetConfig:
    nodes: int = settings.DEFAULT_NODES
    input_nodes: int = settings.DEFAULT_INPUT_NODES
    dim: int = settings.DEFAULT_DIM
    catalog: tuple[str, ...] = settings.OP_CATALOG
    exclude_zero: bool = settings.DEFAULT_EXCLUDE_ZERO
    n_classes: int = settings.DEFAULT_CLASSES

    def __post_init__(self) -> None:
        object.__setattr__(self, "catalog", tuple(self.catalog))
        _require(self.input_nodes >= 1, "input_nodes must be >= 1")
        _require(self.nodes > self.input_nodes, "nodes must be greater than input_nodes")
        _require(self.dim >= 1, "dim must be >= 1")
        _require(self.n_classes >= 2, "n_classes must be >= 2")
        _require(len(self.catalog) >= 1, "catalog must not be empty")
        _require(len(set(self.catalog)) == len(self.catalog), "catalog must not contain duplicates")
        unknown = [op for op in self.catalog if op not in OP_REGISTRY]
        _require(not unknown, f"unknown op in catalog: {unknown}")


@dataclass(frozen=True)
class DataConfig:
    task: str = settings.DEFAULT_TASK
    n_samples: int = settings.DEFAULT_SAMPLES
    noise_sigma: float = settings.DEFAULT_NOISE_SIGMA
    data_path: str = ""  # 仅 task = "csv" 使用

    def __post_init__(self) -> None:
        _require(self.task in TASKS, f"task must be one of {TASKS}")
        _require(self.n_samples >= 2, "n_samples must be >= 2")
        _require(self.noise_sigma >= 0, "noise_sigma must be >= 0")
        _require(self.task != "csv" or bool(self.data_path), "task = \"csv\" requires data_path")


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = settings.DEFAULT_EPOCHS
    steps_per_epoch: int = settings.DEFAULT_STEPS_PER_EPOCH
    batch_size: int = settings.DEFAULT_BATCH_SIZE
    lr_omega: float = settings.DEFAULT_LR_OMEGA
    lr_arch: float = settings.DEFAULT_LR_ARCH
    grad_clip_arch: float = settings.DEFAULT_GRAD_CLIP_ARCH
    softmax_mode: str = settings.DEFAULT_SOFTMAX_MODE
    s: float = settings.DEFAULT_S
    st_const: float = settings.DEFAULT_ST_CONST
    train_ops: bool = True  # False 时 weight_step 只更新读出层
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self) -> None:
        _require(self.epochs >= 1, "epochs must be >= 1")
        _require(self.steps_per_epoch >= 1, "steps_per_epoch must be >= 1")
        _require(self.batch_size >= 1, "batch_size must be >= 1")
        _require(self.lr_omega > 0, "lr_omega must be positive")
        _require(self.lr_arch > 0, "lr_arch must be positive")
        _require(self.grad_clip_arch >= 0, "grad_clip_arch must be >= 0 (0 disables clipping)")
        _require(self.softmax_mode in SOFTMAX_MODES, f"softmax_mode must be one of {SOFTMAX_MODES}")
        _require(self.s > 1, "s must be greater than 1")
        _require(self.st_const > 0, "st_const must be positive")

    @property
    def warmup_epochs(self) -> int:
        return self.schedule.warmup


@dataclass(frozen=True)
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    data: DataConfig = field(default_factory=DataConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    @property
    def schedule(self) -> ScheduleConfig:
        return self.trainer.schedule

    def to_dict(self) -> dict[str, Any]:
        """运行清单中的配置快照（按小节组织）。"""
        trainer = asdict(self.trainer)
        schedule = trainer.pop("schedule")
        schedule["lambda"] = schedule.pop("lam")
        net = asdict(self.net)
        net["catalog"] = list(net["catalog"])
        return {"schedule": schedule, "net": net, "data": asdict(self.data), "trainer": trainer}


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


# 配置键 → (所属小节, dataclass 字段名, 类型)
_KEYS: dict[str, tuple[str, str, type]] = {
    "kind": ("schedule", "kind", str),
    "t0": ("schedule", "t0", float),
    "t_n": ("schedule", "t_n", float),
    "n_points": ("schedule", "n_points", int),
    "cycles": ("schedule", "cycles", int),
    "lambda": ("schedule", "lam", float),
    "rho": ("schedule", "rho", float),
    "warmup": ("schedule", "warmup", int),
    "reestimate_e_a": ("schedule", "reestimate_e_a", bool),
    "nodes": ("net", "nodes", int),
    "input_nodes": ("net", "input_nodes", int),
    "dim": ("net", "dim", int),
    "catalog": ("net", "catalog", list),
    "exclude_zero": ("net", "exclude_zero", bool),
    "n_classes": ("net", "n_classes", int),
    "task": ("data", "task", str),
    "n_samples": ("data", "n_samples", int),
    "noise_sigma": ("data", "noise_sigma", float),
    "data_path": ("data", "data_path", str),
    "epochs": ("trainer", "epochs", int),
    "steps_per_epoch": ("trainer", "steps_per_epoch", int),
    "batch_size": ("trainer", "batch_size", int),
    "lr_omega": ("trainer", "lr_omega", float),
    "lr_arch": ("trainer", "lr_arch", float),
    "grad_clip_arch": ("trainer", "grad_clip_arch", float),
    "softmax_mode": ("trainer", "softmax_mode", str),
    "s": ("trainer", "s", float),
    "st_const": ("trainer", "st_const", float),
    "train_ops": ("trainer", "train_ops", bool),
}


def _coerce(key: str, value: Any, kind: type) -> Any:
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if kind is list:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{key} must be a list of strings, got {value!r}")
        return tuple(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _flatten(mapping: Mapping[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in mapping.items():
        items = value.items() if key in SECTIONS and isinstance(value, Mapping) else [(key, value)]
        for sub_key, sub_value in items:
            if sub_key in flat:
                raise ConfigError(f"duplicate key: {sub_key}")
            flat[sub_key] = sub_value
    return flat


def config_from_mapping(mapping: Mapping[str, Any]) -> RunConfig:
    """从（可嵌套小节的）映射构造 RunConfig。

    Raises:
        ConfigError: 重复键、未知键、类型错误或约束不满足
    """
    groups: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    for key, value in _flatten(mapping).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown key: {key}")
        section, name, kind = _KEYS[key]
        groups[section][name] = _coerce(key, value, kind)

    schedule = ScheduleConfig(**groups["schedule"])
    return RunConfig(
        net=NetConfig(**groups["net"]),
        data=DataConfig(**groups["data"]),
        trainer=TrainerConfig(schedule=schedule, **groups["trainer"]),
    )


def load_config(path: Path | None) -> RunConfig:
    """加载 TOML 配置文件；path 为 None 时返回默认配置。"""
    if path is None:
        logger.info("未指定配置文件，使用默认配置")
        return RunConfig()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        # tomllib 自身会拒绝同一表内的重复键
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    config = config_from_mapping(data)
    logger.info("加载配置 {}: kind={}, epochs={}", path, config.schedule.kind, config.trainer.epochs)
    return config
