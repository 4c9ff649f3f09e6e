#!/usr/bin/env python3
"""
弱监督聚类分析
单例包特征 -> k-means -> 平均簇纯度
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ContractError
from ..datasets.bags import Bag, TASK_CLUSTERS, WITNESSES
from ..models.mil_model import MilModel
from ..numerics.rng import Rng

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 300
# SSE 单调性检查的相对容差
SSE_TOLERANCE = 1e-9


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    sse: float
    iterations: int
    sse_history: List[float] = field(default_factory=list)


@dataclass
class ClusterReport:
    """
    聚类纯度报告

    Attributes:
        k: 簇数
        assignments: 每个样本的簇编号
        avg_cluster_purity: 非空簇纯度的平均值（百分比）
        purities: 每个簇的纯度（空簇为 None）
        sizes: 每个簇的大小
        empty_clusters: 空簇编号
        split: 数据来源划分
    """

    k: int
    assignments: List[int]
    avg_cluster_purity: float
    purities: List[Optional[float]]
    sizes: List[int]
    empty_clusters: List[int] = field(default_factory=list)
    split: str = 'test'

    def to_dict(self) -> Dict[str, Any]:
        return {
            'k': self.k,
            'avg_cluster_purity': self.avg_cluster_purity,
            'purities': self.purities,
            'sizes': self.sizes,
            'empty_clusters': self.empty_clusters,
            'split': self.split,
        }


def _sq_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """[M×k] 平方欧氏距离"""
    d = (np.sum(X * X, axis=1)[:, None] - 2.0 * X @ centers.T + np.sum(centers * centers, axis=1)[None, :])
    return np.maximum(d, 0.0)


def _kmeans_pp(X: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    """k-means++ 初始化"""
    centers = [X[rng.integers(0, len(X))]]
    for _ in range(1, k):
        d2 = np.min(_sq_distances(X, np.stack(centers)), axis=1)
        if float(d2.sum()) <= 0.0:
            centers.append(X[rng.integers(0, len(X))])
        else:
            centers.append(X[rng.weighted_index(d2)])
    return np.stack(centers).astype(np.float64)


def _lloyd(X: np.ndarray, centers: np.ndarray) -> KMeansResult:
    centers = centers.copy()
    k = len(centers)
    history: List[float] = []
    assignments = np.zeros(len(X), dtype=np.int64)
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        d2 = _sq_distances(X, centers)
        new_assignments = np.argmin(d2, axis=1)
        sse = float(d2[np.arange(len(X)), new_assignments].sum())
        if history:
            assert sse <= history[-1] * (1 + SSE_TOLERANCE) + SSE_TOLERANCE, \
                f"k-means SSE 上升: {history[-1]} -> {sse}"
        history.append(sse)
        if iterations > 1 and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments

        nearest = d2[np.arange(len(X)), assignments]
        for j in range(k):
            members = assignments == j
            if np.any(members):
                centers[j] = X[members].mean(axis=0)
            else:
                # 空簇移到离所属中心最远的点
                far = int(np.argmax(nearest))
                centers[j] = X[far]
                nearest[far] = 0.0
                logger.debug(f"k-means 空簇 {j} 重新初始化到样本 {far}")

    d2 = _sq_distances(X, centers)
    sse = float(d2[np.arange(len(X)), assignments].sum())
    return KMeansResult(assignments=assignments, centers=centers, sse=sse, iterations=iterations,
                        sse_history=history)


def kmeans(X: np.ndarray, k: int, seed: int, restarts: int = 10) -> KMeansResult:
    """
    k-means 聚类（k-means++ 初始化 + Lloyd 迭代，取 SSE 最小的一次）

    Args:
        X: [M×d] 特征
        k: 簇数
        seed: 随机种子
        restarts: 重启次数

    Raises:
        ContractError: M < k 或 k < 1
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"kmeans 需要二维特征矩阵，当前形状 {X.shape}")
    if k < 1 or len(X) < k:
        raise ContractError(f"样本数 {len(X)} 少于簇数 {k}")
    if restarts < 1:
        raise ContractError(f"restarts 必须 >= 1，当前 {restarts}")

    rng = Rng(seed).substream('kmeans')
    best: Optional[KMeansResult] = None
    for restart in range(restarts):
        result = _lloyd(X, _kmeans_pp(X, k, rng.substream(f"restart/{restart}")))
        if best is None or result.sse < best.sse:
            best = result
    logger.info(f"📊 k-means 完成: k={k}, M={len(X)}, SSE={best.sse:.4f} ({best.iterations} 次迭代)")
    return best


def purity_labels(labels: Sequence[int], task: str) -> List[int]:
    """
    把潜在数字标签映射到任务的聚类类别：
    单数字/计数 {9, 其他}，多数字 {3, 6, 其他}，离群检测保留数字本身
    """
    if task in ('single_digit', 'counting', 'multi_digit'):
        witnesses = WITNESSES[task]
        return [int(y) if int(y) in witnesses else -1 for y in labels]
    if task == 'outlier':
        return [int(y) for y in labels]
    raise ContractError(f"未知任务: {task}")


def cluster_purity(assignments: Sequence[int], labels: Sequence[int], task: Optional[str] = None,
                   k: Optional[int] = None, split: str = 'test') -> ClusterReport:
    """
    平均簇纯度：每个非空簇的多数类占比，再对簇取平均

    Args:
        assignments: 簇编号
        labels: 潜在数字标签
        task: 给出时按任务映射标签并确定 k
        k: 簇数（缺省时取任务簇数或 max(assignments)+1）
        split: 数据来源
    """
    if len(assignments) != len(labels):
        raise ContractError(f"簇编号数 {len(assignments)} 与标签数 {len(labels)} 不一致")
    mapped = purity_labels(labels, task) if task is not None else [int(y) for y in labels]
    if k is None:
        k = TASK_CLUSTERS[task] if task is not None else (max(assignments) + 1 if len(assignments) else 0)

    purities: List[Optional[float]] = []
    sizes: List[int] = []
    empty: List[int] = []
    for j in range(k):
        members = [y for a, y in zip(assignments, mapped) if int(a) == j]
        sizes.append(len(members))
        if not members:
            purities.append(None)
            empty.append(j)
            continue
        purities.append(Counter(members).most_common(1)[0][1] / len(members))
    filled = [p for p in purities if p is not None]
    average = 100.0 * float(np.mean(filled)) if filled else 0.0
    if empty:
        logger.warning(f"⚠️ 存在空簇: {empty}")
    return ClusterReport(k=k, assignments=[int(a) for a in assignments], avg_cluster_purity=average,
                         purities=purities, sizes=sizes, empty_clusters=empty, split=split)


def singleton_features(model: MilModel, bags: Sequence[Bag], workers: int = 1) -> Tuple[np.ndarray, List[int]]:
    """
    每个实例作为单例包经过 IDU+BRE 得到的包向量 S，按包与实例顺序排列

    Returns:
        ([M×width] 特征矩阵, 潜在标签)
    """
    from concurrent.futures import ThreadPoolExecutor

    instances = [bag.instances[i:i + 1] for bag in bags for i in range(bag.cardinality)]
    labels = [int(y) for bag in bags for y in bag.instance_labels]
    if workers <= 1 or len(instances) <= 1:
        rows = [model.representation(images) for images in instances]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(model.representation, instances))
    width = model.spec.pooled_dim
    matrix = np.stack(rows) if rows else np.zeros((0, width))
    logger.info(f"🔍 已收集 {len(rows)} 个单例特征 (宽度 {width})")
    return matrix, labels


def cluster_bags(model: MilModel, bags: Sequence[Bag], k: Optional[int] = None, seed: int = 0,
                 restarts: int = 10, split: str = 'test', workers: int = 1) -> ClusterReport:
    """单例特征 + k-means + 纯度；k 缺省时按任务确定"""
    features, labels = singleton_features(model, bags, workers)
    k = k if k is not None else TASK_CLUSTERS[model.spec.task]
    result = kmeans(features, k, seed, restarts)
    report = cluster_purity(result.assignments, labels, model.spec.task, k=k, split=split)
    logger.info(f"📊 {split} 平均簇纯度 {report.avg_cluster_purity:.2f}% (k={k})")
    return report
