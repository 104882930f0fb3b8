"""运行产物读写测试。"""

import io
import json

import pytest
import torch

from src.config.run_config import DataConfig, NetConfig, RunConfig, ScheduleConfig, TrainerConfig
from src.core.errors import InvalidArgumentError
from src.core.snsoftmax import ProbeRow, ScalePolicy
from src.core.schedules import TemperatureScheduler
from src.services.artifact_service import (
    CHECKPOINT_FILE,
    MANIFEST_FILE,
    emit_lines,
    load_checkpoint,
    probe_lines,
    read_genotype,
    read_trace_rows,
    save_checkpoint,
    schedule_preview_lines,
    start_manifest,
    trace_header,
    write_final_entropy,
    write_genotype,
    write_manifest,
    write_trace,
)
from src.services.bilevel import run_search
from src.services.data_service import generate


@pytest.fixture(scope="module")
def search_result():
    config = RunConfig(
        net=NetConfig(dim=8, n_classes=4),
        data=DataConfig(n_samples=120),
        trainer=TrainerConfig(epochs=3, steps_per_epoch=2, batch_size=16, schedule=ScheduleConfig(warmup=1)),
    )
    dataset = generate(seed=0, n_samples=120, dim=8, n_classes=4)
    return config, run_search(config, dataset, seed=0)


class TestTrace:
    def test_header_lists_edge_entropies(self, search_result):
        _, result = search_result
        header = trace_header(result.trace)
        assert header[0] == "epoch"
        assert header[-3:] == ["entropy_0_1", "entropy_0_2", "entropy_1_2"]

    def test_rows_read_back_exactly(self, search_result, tmp_path):
        _, result = search_result
        path = write_trace(result.trace, tmp_path)
        rows = read_trace_rows(path)
        assert len(rows) == 3
        for row, record in zip(rows, result.trace.records):
            assert row["epoch"] == record.epoch
            assert row["t"] == record.t
            assert row["mean_entropy"] == record.mean_entropy
            assert row["discretization_drop"] == record.discretization_drop

    def test_final_entropy_file(self, search_result, tmp_path):
        _, result = search_result
        path = write_final_entropy(result.trace, tmp_path)
        assert float(path.read_text(encoding="utf-8")) == result.trace.final_entropy


class TestGenotypeFile:
    def test_write_and_read(self, search_result, tmp_path):
        _, result = search_result
        path = write_genotype(result.genotype, tmp_path)
        assert read_genotype(path) == result.genotype

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            read_genotype(tmp_path / "absent.json")


class TestManifest:
    def test_start_and_finish(self, search_result, tmp_path):
        config, _ = search_result
        manifest = start_manifest(config, 3, tmp_path)
        data = json.loads((tmp_path / MANIFEST_FILE).read_text(encoding="utf-8"))
        assert data["status"] == "running"
        assert data["config"]["schedule"]["lambda"] == 0.06

        manifest.finish("ok", {"trace": tmp_path / "trace.csv"})
        write_manifest(manifest, tmp_path)
        data = json.loads((tmp_path / MANIFEST_FILE).read_text(encoding="utf-8"))
        assert data["status"] == "ok"
        assert data["seed"] == 3
        assert data["artifacts"]["trace"].endswith("trace.csv")
        assert "_t_start" not in data


class TestCheckpoint:
    def test_restores_parameters_and_cache(self, search_result, tmp_path):
        config, result = search_result
        save_checkpoint(result.net, config, 0.25, result.policy, tmp_path)
        net, t, policy = load_checkpoint(tmp_path / CHECKPOINT_FILE, config)
        assert t == 0.25
        assert policy == result.policy
        for a, b in zip(net.parameters(), result.net.parameters()):
            assert torch.equal(a, b)
        assert all(edge.dist is not None for edge in net.edges)

    def test_missing_checkpoint(self, search_result, tmp_path):
        config, _ = search_result
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(tmp_path / CHECKPOINT_FILE, config)

    def test_mismatched_config(self, search_result, tmp_path):
        config, result = search_result
        save_checkpoint(result.net, config, 1.0, None, tmp_path)
        other = RunConfig(net=NetConfig(dim=6, n_classes=4))
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(tmp_path / CHECKPOINT_FILE, other)


class TestCsvLines:
    def test_schedule_preview(self):
        scheduler = TemperatureScheduler(ScheduleConfig(kind="ets", warmup=0), 4e-4, 5)
        lines = schedule_preview_lines(scheduler.preview(), None)
        assert lines[0] == "epoch,t,t_exp,d_exp,entropy_if_available"
        assert len(lines) == 6
        assert lines[1].startswith("0,1,")
        assert lines[1].endswith(",")

    def test_single_policy_probe_columns(self):
        rows = [ProbeRow(t=0.5, plain_norm=0.1, sn_norms=(0.2,))]
        assert probe_lines(rows, [ScalePolicy()]) == ["t,plain_norm,sn_norm", "0.5,0.10000000000000001,0.20000000000000001"]

    def test_multi_policy_probe_columns(self):
        policies = [ScalePolicy("fixed", s) for s in (50.0, 100.0, 1000.0)]
        rows = [ProbeRow(t=1.0, plain_norm=0.5, sn_norms=(0.25, 0.5, 0.75))]
        header = probe_lines(rows, policies)[0]
        assert header == "t,plain_norm,sn_norm_s50,sn_norm_s100,sn_norm_s1000"

    def test_emit_lines(self):
        stream = io.StringIO()
        emit_lines(["a", "b"], stream)
        assert stream.getvalue() == "a\nb\n"
