#!/usr/bin/env python3
"""
数据模块
提供 MNIST 读取、合成字形、实例池缓存与多示例包生成
"""

from .mnist import InstancePool, load_mnist_idx, write_idx
from .glyphs import synth_glyphs
from .pool import save_pool, load_pool, load_mnist_dir, read_manifest
from .bags import (
    TASKS,
    WITNESSES,
    TASK_CLUSTERS,
    Bag,
    BagTarget,
    ScenarioSpec,
    label_rule,
    sample_cardinality,
    make_bags,
    make_pair_bags,
    shuffle_bag,
    singletons,
    summarize_bags,
)
from .bag_cache import BagCache, save_bags, load_bags

__all__ = [
    'InstancePool', 'load_mnist_idx', 'write_idx', 'synth_glyphs',
    'save_pool', 'load_pool', 'load_mnist_dir', 'read_manifest',
    'TASKS', 'WITNESSES', 'TASK_CLUSTERS', 'Bag', 'BagTarget', 'ScenarioSpec',
    'label_rule', 'sample_cardinality', 'make_bags', 'make_pair_bags', 'shuffle_bag', 'singletons',
    'summarize_bags', 'BagCache', 'save_bags', 'load_bags',
]
