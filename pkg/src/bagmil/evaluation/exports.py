#!/usr/bin/env python3
"""
分析结果导出
states.csv：前向 LSTM 每步隐藏状态；features.csv：单例包特征
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import CompatibilityError
from ..datasets.bags import Bag, WITNESSES
from ..models.mil_model import MilModel
from ..models.pooling import LstmParams, state_jump_statistic, state_trace
from ..utils.run_utils import write_csv
from .clustering import singleton_features

logger = logging.getLogger(__name__)


def collect_states(model: MilModel, bags: Sequence[Bag]) -> List[List[np.ndarray]]:
    """每个包前向方向的 h_t 序列"""
    if model.spec.pooling != 'bilstm':
        raise CompatibilityError(f"隐藏状态只对 bilstm 池化有定义，当前 {model.spec.pooling}")
    leaves = model.leaves()
    fwd = LstmParams(leaves['bre.fwd.weight'], leaves['bre.fwd.bias'])
    traces = []
    for bag in bags:
        features, _ = model.encode(bag.instances, leaves)
        traces.append(state_trace(features, fwd))
    return traces


def export_states(model: MilModel, bags: Sequence[Bag], path: Path,
                  comment: Optional[Dict[str, Any]] = None) -> Dict[str, float]:
    """
    写出 states.csv（bag_id, step, instance_label, h_0..h_{h-1}），并返回见证跳变统计

    Returns:
        state_jump_statistic 的结果
    """
    traces = collect_states(model, bags)
    hidden = model.spec.hidden_dim
    header = ['bag_id', 'step', 'instance_label'] + [f"h_{j}" for j in range(hidden)]
    rows = (
        [bag.bag_id, step, bag.instance_labels[step]] + [float(v) for v in h_t]
        for bag, trace in zip(bags, traces)
        for step, h_t in enumerate(trace)
    )
    write_csv(path, header, rows, comment=comment)
    witnesses = WITNESSES.get(model.spec.task, ())
    stats = state_jump_statistic(traces, [b.instance_labels for b in bags], witnesses)
    logger.info(f"📊 见证位置平均跳变 {stats['witness_mean_jump']:.4f}, "
                f"非见证跳变中位数 {stats['non_witness_median_jump']:.4f}")
    return stats


def export_features(model: MilModel, bags: Sequence[Bag], path: Path,
                    comment: Optional[Dict[str, Any]] = None, workers: int = 1) -> np.ndarray:
    """写出 features.csv（bag_id, index, instance_label, s_0..），返回特征矩阵"""
    features, labels = singleton_features(model, bags, workers)
    bag_ids = [bag.bag_id for bag in bags for _ in range(bag.cardinality)]
    positions = [i for bag in bags for i in range(bag.cardinality)]
    header = ['bag_id', 'index', 'instance_label'] + [f"s_{j}" for j in range(features.shape[1])]
    rows = (
        [bag_id, index, label] + [float(v) for v in row]
        for bag_id, index, label, row in zip(bag_ids, positions, labels, features)
    )
    write_csv(path, header, rows, comment=comment)
    return features
