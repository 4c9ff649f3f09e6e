#!/usr/bin/env python3
"""
测试公共夹具
小尺寸模型配置与合成实例池
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

import numpy as np
import pytest

from bagmil.datasets import InstancePool, synth_glyphs
from bagmil.models import IduConfig, ModelSpec
from bagmil.utils.log_utils import setup_logging

setup_logging('WARNING')


def random_pool(n_per_class: int = 6, size: int = 28, seed: int = 0, split: str = 'train') -> InstancePool:
    """每类 n_per_class 个随机像素图像，标签按 0..9 循环"""
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(10, dtype=np.uint8), n_per_class)
    images = rng.integers(0, 256, size=(len(labels), size, size), dtype=np.uint8)
    return InstancePool(images=images, labels=labels, split=split)


@pytest.fixture
def tiny_idu() -> IduConfig:
    return IduConfig(conv1_channels=2, conv2_channels=3, fc1_units=8, feature_dim=6, input_size=28)


@pytest.fixture
def tiny_spec(tiny_idu):
    def _make(task: str = 'single_digit', pooling: str = 'bilstm', mi: bool = False) -> ModelSpec:
        return ModelSpec(task=task, pooling=pooling, idu=tiny_idu, hidden_dim=4, attention_dim=5,
                         mi_hidden=4 if mi else None)
    return _make


@pytest.fixture
def pool() -> InstancePool:
    return random_pool()


@pytest.fixture(scope='session')
def glyph_pool() -> InstancePool:
    return synth_glyphs(12, seed=3)
