"""测试公共夹具。"""

import pytest
import torch
from loguru import logger

from src.core.space import SuperNet


@pytest.fixture(autouse=True)
def _quiet_logs():
    """测试期间只保留 WARNING 及以上日志。"""
    logger.remove()
    sink_id = logger.add(lambda _: None, level="WARNING")
    yield
    logger.remove(sink_id)


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def small_net(generator) -> SuperNet:
    """V=3, M=5, dim=4 的小超网。"""
    return SuperNet(num_nodes=3, dim=4, n_classes=3, generator=generator)


@pytest.fixture
def inputs(generator) -> torch.Tensor:
    return torch.randn(6, 4, generator=generator, dtype=torch.float64)
