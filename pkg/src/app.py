"""应用入口模块，包含 SparseTempApp 命令行主类。"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence, TextIO

import torch
from loguru import logger

from src.config import settings
from src.config.logging_config import add_run_log_file
from src.config.run_config import RunConfig, ScheduleConfig, load_config
from src.core.errors import ConfigError, InvalidArgumentError, NanLossError, StateError
from src.core.metrics import discretized_accuracy, mean_edge_entropy
from src.core.schedules import LIST_KINDS, ScheduleKind, TemperatureScheduler, ets_build, lpcd_build, lts_build, pcd_build
from src.core.snsoftmax import ScalePolicy, grad_norm_probe, log_temperature_grid
from src.core.space import SuperNet
from src.services import artifact_service
from src.services.bilevel import SearchResult, build_supernet, run_search
from src.services.data_service import SplitTag, dump_csv
from src.services.dataset_cache import resolve_dataset
from src.services.sweep_service import SeedOutcome, SeedSweepService
from src.utils.fmt_utils import format_row

# 示例中使用的 E(a)
EXAMPLE_E_A: float = 4e-4

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NAN = 2


class SparseTempApp:
    """命令行主类

    子命令：search / preview-schedule / probe-softmax / eval-genotype /
    probe-entropy / sweep / dump-data。CSV 与 JSON 输出写到 stdout，日志写到 stderr。
    """

    def __init__(self, stdout: TextIO | None = None) -> None:
        self.stdout = stdout if stdout is not None else sys.stdout
        self.parser = self._build_parser()

    def _build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="sparse-temp", description="小温度稀疏训练的可微结构搜索")
        sub = parser.add_subparsers(dest="command", required=True)

        search = sub.add_parser("search", help="运行一次双层搜索")
        search.add_argument("--config", type=Path, default=None)
        search.add_argument("--seed", type=int, default=0)
        search.add_argument("--out-dir", type=Path, required=True)
        search.set_defaults(handler=self.cmd_search)

        preview = sub.add_parser("preview-schedule", help="不训练，预演温度调度")
        preview.add_argument("--worked-example", "--paper-example", dest="worked_example", action="store_true", help="E(a)=4e-4, t0=1, t_n=1e-3, N=4 的 ETS 示例")
        preview.add_argument("--config", type=Path, default=None)
        preview.add_argument("--kind", choices=[k.value for k in ScheduleKind], default=None)
        preview.add_argument("--t0", type=float, default=None)
        preview.add_argument("--t-n", type=float, default=None)
        preview.add_argument("--n-points", type=int, default=None)
        preview.add_argument("--cycles", type=int, default=None)
        preview.add_argument("--lambda", dest="lam", type=float, default=None)
        preview.add_argument("--warmup", type=int, default=None)
        preview.add_argument("--e-a", type=float, default=settings.ANALYTIC_E_A)
        preview.add_argument("--epochs", type=int, default=None, help="给定时按 epoch 输出，否则输出衰减列表")
        preview.add_argument("--entropy", type=float, default=None, help="EDD 预演使用的恒定熵，默认 ln M")
        preview.set_defaults(handler=self.cmd_preview_schedule)

        probe = sub.add_parser("probe-softmax", help="普通 softmax 与 sn-softmax 的梯度范数对比")
        probe.add_argument("--logits", type=str, default="1,0,0,0,0")
        probe.add_argument("--s", dest="s_values", type=float, action="append", default=None)
        probe.add_argument("--st-const", dest="st_values", type=float, action="append", default=None)
        probe.add_argument("--t-max", type=float, default=settings.PROBE_T_MAX)
        probe.add_argument("--t-min", type=float, default=settings.PROBE_T_MIN)
        probe.add_argument("--points", type=int, default=settings.PROBE_GRID_POINTS)
        probe.set_defaults(handler=self.cmd_probe_softmax)

        evaluate = sub.add_parser("eval-genotype", help="共享权重下评估离散结构准确率")
        evaluate.add_argument("--genotype", type=Path, required=True)
        evaluate.add_argument("--config", type=Path, default=None)
        evaluate.add_argument("--seed", type=int, default=0)
        evaluate.add_argument("--checkpoint", type=Path, default=None)
        evaluate.add_argument("--split", choices=[t.value for t in SplitTag], default=SplitTag.VAL.value)
        evaluate.set_defaults(handler=self.cmd_eval_genotype)

        entropy = sub.add_parser("probe-entropy", help="输出每条边的熵（JSON）")
        entropy.add_argument("--config", type=Path, default=None)
        entropy.add_argument("--seed", type=int, default=0)
        entropy.add_argument("--checkpoint", type=Path, default=None)
        entropy.add_argument("--t", type=float, default=None)
        entropy.set_defaults(handler=self.cmd_probe_entropy)

        sweep = sub.add_parser("sweep", help="多种子搜索并汇总")
        sweep.add_argument("--config", type=Path, default=None)
        sweep.add_argument("--seeds", type=int, nargs="+", required=True)
        sweep.add_argument("--out-dir", type=Path, required=True)
        sweep.add_argument("--workers", type=int, default=settings.SWEEP_WORKER_THREADS)
        sweep.set_defaults(handler=self.cmd_sweep)

        dump = sub.add_parser("dump-data", help="把按配置生成的数据集导出为 CSV")
        dump.add_argument("--config", type=Path, default=None)
        dump.add_argument("--seed", type=int, default=0)
        dump.add_argument("--out", type=Path, required=True)
        dump.set_defaults(handler=self.cmd_dump_data)
        return parser

    def run(self, argv: Sequence[str]) -> int:
        """解析参数并执行子命令，返回退出码。"""
        try:
            args = self.parser.parse_args(list(argv))
        except SystemExit as exc:
            return EXIT_OK if exc.code in (0, None) else EXIT_ERROR

        try:
            return args.handler(args)
        except NanLossError as exc:
            logger.error("损失出现 NaN，搜索中止: {}", exc)
            return EXIT_NAN
        except (ConfigError, InvalidArgumentError, StateError) as exc:
            logger.error("{}", exc)
            return EXIT_ERROR
        except Exception as exc:
            logger.exception("未预期的错误: {}", exc)
            return EXIT_ERROR

    # ==================== search ====================

    def cmd_search(self, args: argparse.Namespace) -> int:
        config = load_config(args.config)
        out_dir: Path = args.out_dir
        sink_id = add_run_log_file(out_dir)
        manifest = artifact_service.start_manifest(config, args.seed, out_dir)
        try:
            data = resolve_dataset(config, args.seed)
            try:
                result = run_search(config, data.dataset, args.seed, op_source=data.op_source)
            except NanLossError as exc:
                artifacts = {}
                if exc.trace is not None and len(exc.trace):
                    artifacts["trace"] = artifact_service.write_trace(exc.trace, out_dir)
                manifest.finish("nan_abort", artifacts)
                artifact_service.write_manifest(manifest, out_dir)
                raise
            artifacts = self._write_run_artifacts(result, config, out_dir)
            manifest.finish("ok", artifacts)
            artifact_service.write_manifest(manifest, out_dir)
            logger.info("搜索产物已写入 {}", out_dir)
            return EXIT_OK
        finally:
            logger.remove(sink_id)

    @staticmethod
    def _write_run_artifacts(result: SearchResult, config: RunConfig, out_dir: Path) -> dict[str, Path]:
        final_t = result.trace.records[-1].t
        return {
            "trace": artifact_service.write_trace(result.trace, out_dir),
            "genotype": artifact_service.write_genotype(result.genotype, out_dir),
            "final_entropy": artifact_service.write_final_entropy(result.trace, out_dir),
            "checkpoint": artifact_service.save_checkpoint(result.net, config, final_t, result.policy, out_dir),
        }

    # ==================== preview-schedule ====================

    def cmd_preview_schedule(self, args: argparse.Namespace) -> int:
        if args.worked_example:
            schedule = ScheduleConfig(kind=ScheduleKind.ETS.value, t0=1.0, t_n=1e-3, n_points=4)
            e_a = EXAMPLE_E_A
        else:
            base = load_config(args.config).schedule
            overrides = {
                name: value
                for name, value in (
                    ("kind", args.kind),
                    ("t0", args.t0),
                    ("t_n", args.t_n),
                    ("n_points", args.n_points),
                    ("cycles", args.cycles),
                    ("lam", args.lam),
                    ("warmup", args.warmup),
                )
                if value is not None
            }
            schedule = replace(base, **overrides)
            e_a = args.e_a

        kind = ScheduleKind(schedule.kind)
        if args.epochs is None and kind in LIST_KINDS:
            lines = ["n,t_exp,t"]
            built = self._build_list(kind, schedule, e_a)
            for n, (point, t) in enumerate(zip(built.points_exp, built.temps)):
                lines.append(format_row([n, point, t]))
        else:
            epochs = args.epochs if args.epochs is not None else settings.DEFAULT_EPOCHS
            if epochs < 1:
                raise ConfigError("epochs must be >= 1")
            entropy = args.entropy
            if kind is ScheduleKind.EDD and entropy is None:
                entropy = math.log(len(settings.OP_CATALOG))
            scheduler = TemperatureScheduler(schedule, e_a, epochs)
            lines = artifact_service.schedule_preview_lines(scheduler.preview(entropy), entropy)
        artifact_service.emit_lines(lines, self.stdout)
        return EXIT_OK

    @staticmethod
    def _build_list(kind: ScheduleKind, schedule: ScheduleConfig, e_a: float):
        if kind is ScheduleKind.ETS:
            return ets_build(e_a, schedule.t0, schedule.t_n, schedule.n_points)
        if kind is ScheduleKind.LTS:
            return lts_build(schedule.t0, schedule.t_n, schedule.n_points, e_a=e_a)
        if kind is ScheduleKind.PCD:
            return pcd_build(e_a, schedule.t0, schedule.t_n, schedule.n_points, schedule.cycles)
        return lpcd_build(schedule.t0, schedule.t_n, schedule.n_points, schedule.cycles, e_a=e_a)

    # ==================== probe-softmax ====================

    def cmd_probe_softmax(self, args: argparse.Namespace) -> int:
        try:
            logits = [float(v) for v in args.logits.split(",")]
        except ValueError as exc:
            raise InvalidArgumentError(f"--logits 格式错误: {args.logits!r}") from exc
        policies = [ScalePolicy("fixed", s) for s in args.s_values or []]
        policies += [ScalePolicy("st_const", c) for c in args.st_values or []]
        if not policies:
            policies = [ScalePolicy("st_const", settings.DEFAULT_ST_CONST)]
        grid = log_temperature_grid(args.t_max, args.t_min, args.points)
        rows = grad_norm_probe(logits, grid, policies)
        artifact_service.emit_lines(artifact_service.probe_lines(rows, policies), self.stdout)
        return EXIT_OK

    # ==================== eval-genotype / probe-entropy ====================

    @staticmethod
    def _load_net(config: RunConfig, seed: int, checkpoint: Path | None, t: float | None = None) -> tuple[SuperNet, float]:
        if checkpoint is not None:
            net, saved_t, policy = artifact_service.load_checkpoint(checkpoint, config)
            if t is not None and t != saved_t:
                net.cache_distributions(t, policy)
            return net, saved_t if t is None else t
        net = build_supernet(config.net, torch.Generator().manual_seed(seed))
        t = config.schedule.t0 if t is None else t
        net.cache_distributions(t)
        return net, t

    def cmd_eval_genotype(self, args: argparse.Namespace) -> int:
        config = load_config(args.config)
        genotype = artifact_service.read_genotype(args.genotype)
        net, _ = self._load_net(config, args.seed, args.checkpoint)
        split = resolve_dataset(config, args.seed).dataset.split(SplitTag(args.split))
        acc = discretized_accuracy(net, genotype, split.x, split.y)
        payload = {"split": split.tag.value, "n": len(split), "accuracy": acc, "genotype": genotype.op_names()}
        self.stdout.write(json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
        return EXIT_OK

    def cmd_probe_entropy(self, args: argparse.Namespace) -> int:
        config = load_config(args.config)
        net, t = self._load_net(config, args.seed, args.checkpoint, args.t)
        report = mean_edge_entropy(net)
        payload = {"t": t, **report.as_dict()}
        self.stdout.write(json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
        return EXIT_OK

    # ==================== sweep ====================

    def cmd_sweep(self, args: argparse.Namespace) -> int:
        config = load_config(args.config)
        out_dir: Path = args.out_dir
        service = SeedSweepService(max_workers=args.workers)
        try:
            outcomes = service.run_seeds(
                config,
                args.seeds,
                on_seed_complete=lambda o: logger.info("种子 {} 搜索完成", o.seed),
            )
        finally:
            service.shutdown()

        lines = ["seed,final_entropy,supernet_val_acc,discretized_val_acc,planted_match"]
        for outcome in outcomes:
            seed_dir = out_dir / f"seed_{outcome.seed}"
            manifest = artifact_service.start_manifest(config, outcome.seed, seed_dir)
            manifest.finish("ok", self._write_run_artifacts(outcome.result, config, seed_dir))
            artifact_service.write_manifest(manifest, seed_dir)
            lines.append(self._summary_row(outcome))

        summary = out_dir / "summary.csv"
        summary.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        logger.info("多种子汇总已写入 {}", summary)
        return EXIT_OK

    @staticmethod
    def _summary_row(outcome: SeedOutcome) -> str:
        last = outcome.result.trace.records[-1]
        match = "" if outcome.planted_match is None else str(int(outcome.planted_match))
        return format_row([outcome.seed, last.mean_entropy, last.supernet_val_accuracy, last.discretized_val_accuracy]) + "," + match

    # ==================== dump-data ====================

    def cmd_dump_data(self, args: argparse.Namespace) -> int:
        config = load_config(args.config)
        dataset = resolve_dataset(config, args.seed).dataset
        dump_csv(dataset, args.out)
        logger.info("数据集已导出: {} (n={}, dim={}, 各类数量={})", args.out, len(dataset), dataset.dim, dataset.class_counts())
        return EXIT_OK
