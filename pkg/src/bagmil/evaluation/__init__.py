#!/usr/bin/env python3
"""
评估模块
错误率与混淆计数、置换鲁棒性、包大小泛化、聚类纯度、单例实例预测与结果导出
"""

from .metrics import (
    ConfusionCounts, MetricBundle, bag_outputs, predict_bags, confusion_counts,
    metrics_from_predictions, error_rate, summarize_seeds,
)
from .clustering import KMeansResult, ClusterReport, kmeans, purity_labels, cluster_purity, singleton_features, cluster_bags
from .instance import InstanceReport, instance_predict, instance_evaluation
from .exports import collect_states, export_states, export_features
from .protocols import (
    PermutationReport, CardinalityReport, permutation_robustness, cardinality_generalization,
    repeat_experiment, cross_validate,
)

__all__ = [
    'ConfusionCounts', 'MetricBundle', 'bag_outputs', 'predict_bags', 'confusion_counts',
    'metrics_from_predictions', 'error_rate', 'summarize_seeds',
    'KMeansResult', 'ClusterReport', 'kmeans', 'purity_labels', 'cluster_purity', 'singleton_features',
    'cluster_bags',
    'InstanceReport', 'instance_predict', 'instance_evaluation',
    'collect_states', 'export_states', 'export_features',
    'PermutationReport', 'CardinalityReport', 'permutation_robustness', 'cardinality_generalization',
    'repeat_experiment', 'cross_validate',
]
