#!/usr/bin/env python3
"""
评估指标
所有指标都由 confusion_counts 一处计算得到
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import ContractError
from ..datasets.bags import Bag
from ..models.mil_model import MilModel, Prediction

logger = logging.getLogger(__name__)


def bag_outputs(model: MilModel, bags: Sequence[Bag], workers: int = 1) -> List[float]:
    """
    并行计算每个包的头部原始输出，结果保持输入顺序

    参数只读；工作线程里没有活动的计算带
    """
    leaves = model.leaves()

    def _forward(bag: Bag) -> float:
        return model.forward(bag.instances, leaves).output.item()

    if workers <= 1 or len(bags) <= 1:
        return [_forward(bag) for bag in bags]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_forward, bags))


def predict_bags(model: MilModel, bags: Sequence[Bag], workers: int = 1) -> List[Prediction]:
    return [model.head.interpret(raw) for raw in bag_outputs(model, bags, workers)]


@dataclass
class ConfusionCounts:
    """二分类混淆计数；计数任务只用 correct / total"""

    variant: str
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    correct: int = 0
    total: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0


def confusion_counts(predicted: Sequence[int], targets: Sequence[int], variant: str) -> ConfusionCounts:
    """
    统计混淆计数

    Args:
        predicted: 预测标签（二分类 0/1，计数任务为整数）
        targets: 真实标签
        variant: 'binary' | 'count'
    """
    if len(predicted) != len(targets):
        raise ContractError(f"预测数 {len(predicted)} 与标签数 {len(targets)} 不一致")
    counts = ConfusionCounts(variant=variant, total=len(targets))
    for p, y in zip(predicted, targets):
        p, y = int(p), int(y)
        if p == y:
            counts.correct += 1
        if variant == 'binary':
            if p == 1 and y == 1:
                counts.tp += 1
            elif p == 1 and y == 0:
                counts.fp += 1
            elif p == 0 and y == 0:
                counts.tn += 1
            else:
                counts.fn += 1
    return counts


@dataclass
class MetricBundle:
    """
    指标集合（百分比）

    Attributes:
        error_rate: 错误率
        accuracy: 准确率
        f1: 2PR/(P+R)，只对二分类任务给出
        counts: 计算这些指标的混淆计数
        per_seed: 多种子重复时每个种子的指标
        mean / std: 多种子的均值与标准差
    """

    error_rate: float
    accuracy: float
    f1: Optional[float]
    counts: Optional[ConfusionCounts] = None
    per_seed: List[Dict[str, Any]] = field(default_factory=list)
    mean: Dict[str, float] = field(default_factory=dict)
    std: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: ConfusionCounts) -> 'MetricBundle':
        if counts.total == 0:
            raise ContractError("没有可评估的样本")
        accuracy = 100.0 * counts.correct / counts.total
        f1 = None
        if counts.variant == 'binary':
            p, r = counts.precision, counts.recall
            f1 = 100.0 * 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(error_rate=100.0 - accuracy, accuracy=accuracy, f1=f1, counts=counts)

    def scalars(self) -> Dict[str, float]:
        values = {'error_rate': self.error_rate, 'accuracy': self.accuracy}
        if self.f1 is not None:
            values['f1'] = self.f1
        return values

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = dict(self.scalars())
        if self.counts is not None:
            data['counts'] = asdict(self.counts)
        if self.per_seed:
            data['per_seed'] = self.per_seed
            data['mean'] = self.mean
            data['std'] = self.std
        return data


def bag_targets(bags: Sequence[Bag]) -> List[int]:
    targets = []
    for bag in bags:
        if bag.target is None:
            raise ContractError(f"包 {bag.bag_id} 没有包级标签")
        targets.append(bag.target.value)
    return targets


def metrics_from_predictions(predictions: Sequence[Prediction], bags: Sequence[Bag]) -> MetricBundle:
    targets = bag_targets(bags)
    variant = bags[0].target.variant
    return MetricBundle.from_counts(confusion_counts([p.label for p in predictions], targets, variant))


def error_rate(model: MilModel, bags: Sequence[Bag], workers: int = 1) -> MetricBundle:
    """
    包级错误率：阈值化或四舍五入后的预测与标签不一致的比例 ×100；
    计数任务按精确匹配计算

    Raises:
        ContractError: 包列表为空
    """
    if not bags:
        raise ContractError("error_rate 需要非空的包列表")
    bundle = metrics_from_predictions(predict_bags(model, bags, workers), bags)
    logger.debug(f"📊 错误率 {bundle.error_rate:.2f}% ({len(bags)} 个包)")
    return bundle


def summarize_seeds(bundles: Sequence[MetricBundle], seeds: Sequence[int]) -> MetricBundle:
    """把多个种子的指标汇总为均值 ± 标准差（总体标准差）"""
    if not bundles:
        raise ContractError("没有可汇总的结果")
    per_seed = [dict(seed=int(s), **b.scalars()) for s, b in zip(seeds, bundles)]
    keys = list(bundles[0].scalars())
    mean = {k: float(np.mean([b.scalars()[k] for b in bundles])) for k in keys}
    std = {k: float(np.std([b.scalars()[k] for b in bundles])) for k in keys}
    return MetricBundle(
        error_rate=mean['error_rate'],
        accuracy=mean['accuracy'],
        f1=mean.get('f1'),
        per_seed=per_seed,
        mean=mean,
        std=std,
    )
