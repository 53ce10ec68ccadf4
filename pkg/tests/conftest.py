"""Shared fixtures: small configs keep every test under a second."""

import sys
from pathlib import Path

import numpy as np
import pytest

# 프로젝트 루트를 Python 경로에 추가
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.utils.config import RetrievalConfig


@pytest.fixture
def small_cfg() -> RetrievalConfig:
    """D=32, B=8 → m=4, K=16, max score 48"""
    return RetrievalConfig(
        dim=32,
        subspace_count=8,
        sink_size=4,
        local_size=16,
        update_granularity=8,
        full_attention_threshold=0,
        top_k=10,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def make_kv(rng):
    def _make(n: int, dim: int):
        keys = rng.standard_normal((n, dim)).astype(np.float32)
        values = rng.standard_normal((n, dim)).astype(np.float32)
        return keys, values
    return _make
