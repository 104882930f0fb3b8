"""运行产物读写：trace.csv、genotype.json、final_entropy.txt、运行清单与超网检查点。"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import torch
from loguru import logger

from src.config import settings
from src.config.run_config import RunConfig
from src.core.errors import InvalidArgumentError
from src.core.schedules import TemperatureState
from src.core.snsoftmax import ProbeRow, ScalePolicy
from src.core.space import Genotype, SuperNet
from src.services.bilevel import SearchTrace, build_supernet
from src.utils.fmt_utils import format_float, format_row

TRACE_FILE = "trace.csv"
GENOTYPE_FILE = "genotype.json"
FINAL_ENTROPY_FILE = "final_entropy.txt"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "supernet.pt"

TRACE_COLUMNS: tuple[str, ...] = (
    "epoch",
    "k",
    "t",
    "t_exp",
    "d_exp",
    "mean_entropy",
    "supernet_val_acc",
    "discretized_val_acc",
    "discretization_drop",
    "e_a",
    "train_loss",
    "val_loss",
)


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def trace_header(trace: SearchTrace) -> list[str]:
    return list(TRACE_COLUMNS) + [f"entropy_{edge_id}" for edge_id in trace.edge_ids]


def trace_lines(trace: SearchTrace) -> list[str]:
    lines = [",".join(trace_header(trace))]
    for r in trace.records:
        values = [
            r.epoch,
            r.k,
            r.t,
            r.t_exp,
            r.d_exp,
            r.mean_entropy,
            r.supernet_val_accuracy,
            r.discretized_val_accuracy,
            r.discretization_drop,
            r.e_a,
            r.train_loss,
            r.val_loss,
        ]
        values.extend(h for _, h in r.edge_entropies)
        lines.append(format_row(values))
    return lines


def write_trace(trace: SearchTrace, out_dir: Path) -> Path:
    path = out_dir / TRACE_FILE
    _write_lines(path, trace_lines(trace))
    logger.debug("搜索轨迹已写入: {} ({} 行)", path, len(trace))
    return path


def read_trace_rows(path: Path) -> list[dict[str, float]]:
    """读回 trace.csv，所有字段按浮点数解析。"""
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise InvalidArgumentError(f"轨迹文件为空: {path}")
    header = lines[0].split(",")
    return [dict(zip(header, (float(v) for v in line.split(",")))) for line in lines[1:]]


def write_genotype(genotype: Genotype, out_dir: Path) -> Path:
    path = out_dir / GENOTYPE_FILE
    _write_lines(path, [genotype.to_json()])
    return path


def read_genotype(path: Path) -> Genotype:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise InvalidArgumentError(f"离散结构文件不存在: {path}") from exc
    return Genotype.from_json(text)


def write_final_entropy(trace: SearchTrace, out_dir: Path) -> Path:
    path = out_dir / FINAL_ENTROPY_FILE
    _write_lines(path, [format_float(trace.final_entropy)])
    return path


@dataclass
class RunManifest:
    """运行清单：配置快照、种子、版本与产物路径。"""

    seed: int
    config: dict
    app_version: str = settings.APP_VERSION
    python_version: str = field(default_factory=platform.python_version)
    torch_version: str = torch.__version__
    started_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))
    finished_at: str | None = None
    wall_seconds: float | None = None
    status: str = "running"
    artifacts: dict[str, str] = field(default_factory=dict)
    _t_start: float = field(default_factory=time.perf_counter, repr=False)

    def finish(self, status: str, artifacts: dict[str, Path]) -> None:
        self.status = status
        self.finished_at = datetime.now().isoformat(timespec="seconds")
        self.wall_seconds = round(time.perf_counter() - self._t_start, 3)
        self.artifacts = {name: str(path) for name, path in artifacts.items()}

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("_t_start")
        return data


def start_manifest(config: RunConfig, seed: int, out_dir: Path) -> RunManifest:
    manifest = RunManifest(seed=int(seed), config=config.to_dict())
    write_manifest(manifest, out_dir)
    return manifest


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = out_dir / MANIFEST_FILE
    _write_lines(path, [json.dumps(manifest.to_dict(), indent=2, ensure_ascii=False)])
    return path


# ==================== 检查点 ====================


def save_checkpoint(net: SuperNet, config: RunConfig, t: float, policy: ScalePolicy | None, out_dir: Path) -> Path:
    """保存超网 state_dict、最终温度与 s 策略。"""
    path = out_dir / CHECKPOINT_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "state_dict": net.state_dict(),
            "net": config.to_dict()["net"],
            "t": float(t),
            "policy": None if policy is None else {"kind": policy.kind, "value": policy.value},
        },
        path,
    )
    logger.info("超网检查点已保存: {}", path)
    return path


def load_checkpoint(path: Path, config: RunConfig) -> tuple[SuperNet, float, ScalePolicy | None]:
    """按配置重建超网并加载检查点，同时按保存的温度刷新缓存分布。"""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as exc:
        raise InvalidArgumentError(f"检查点不存在: {path}") from exc
    net = build_supernet(config.net)
    try:
        net.load_state_dict(payload["state_dict"])
    except (RuntimeError, KeyError) as exc:
        raise InvalidArgumentError(f"检查点与网络配置不匹配: {exc}") from exc
    policy_data = payload.get("policy")
    policy = None if policy_data is None else ScalePolicy(policy_data["kind"], float(policy_data["value"]))
    t = float(payload["t"])
    net.cache_distributions(t, policy)
    logger.info("加载检查点: {} (t={:.6g})", path, t)
    return net, t, policy


# ==================== 预演与探针 CSV ====================


def schedule_preview_lines(rows: Sequence[tuple[int, TemperatureState]], entropy: float | None) -> list[str]:
    lines = ["epoch,t,t_exp,d_exp,entropy_if_available"]
    for epoch, state in rows:
        lines.append(format_row([epoch, state.t, state.t_exp, state.d_exp]) + "," + ("" if entropy is None else format_float(entropy)))
    return lines


def probe_lines(rows: Sequence[ProbeRow], policies: Sequence[ScalePolicy]) -> list[str]:
    """梯度范数探针 CSV；多个 s 策略时每个策略一列 sn_norm_<label>。"""
    if len(policies) == 1:
        header = ["t", "plain_norm", "sn_norm"]
    else:
        header = ["t", "plain_norm"] + [f"sn_norm_{p.label}" for p in policies]
    lines = [",".join(header)]
    for row in rows:
        lines.append(format_row([row.t, row.plain_norm, *row.sn_norms]))
    return lines


def emit_lines(lines: Iterable[str], stream: TextIO) -> None:
    for line in lines:
        stream.write(line + "\n")
