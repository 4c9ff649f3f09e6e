#!/usr/bin/env python3
"""
单例包实例预测
把实例当作大小为 1 的包送入包级模型，与潜在标签比较
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ..core.exceptions import CompatibilityError
from ..datasets.bags import Bag, WITNESSES
from ..models.mil_model import MilModel
from .metrics import confusion_counts

logger = logging.getLogger(__name__)

# 支持实例预测的任务（单一见证类别）
INSTANCE_TASKS = ('single_digit', 'counting')


@dataclass
class InstanceReport:
    """TP 率 / TN 率 / 平均准确率（百分比）"""

    task: str
    tp_rate: float
    tn_rate: float
    mean_accuracy: float
    n_witness: int
    n_other: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'task': self.task,
            'tp_rate': self.tp_rate,
            'tn_rate': self.tn_rate,
            'mean_accuracy': self.mean_accuracy,
            'n_witness': self.n_witness,
            'n_other': self.n_other,
        }


def instance_predict(model: MilModel, instance: np.ndarray) -> Tuple[float, int]:
    """
    单个实例的预测

    Args:
        model: 已训练模型
        instance: [H×W] 或 [1×H×W] 图像

    Returns:
        (概率或原始计数, 0/1 标签)；计数模型以四舍五入计数 >= 1 作为正类
    """
    images = instance[None] if instance.ndim == 2 else instance
    prediction = model.predict_images(images)
    if model.spec.head_variant == 'regressor':
        return prediction.raw, int(prediction.label >= 1)
    return prediction.probability, prediction.label


def instance_evaluation(model: MilModel, bags: Sequence[Bag]) -> InstanceReport:
    """
    对包内全部实例做单例预测，给出见证类别的 TP 率、其余类别的 TN 率与两者平均

    Raises:
        CompatibilityError: 任务不是单一见证的二分类/计数任务
    """
    task = model.spec.task
    if task not in INSTANCE_TASKS:
        raise CompatibilityError(f"实例预测只支持 {INSTANCE_TASKS}，当前模型任务 {task}")
    witnesses = WITNESSES[task]
    predicted: List[int] = []
    truth: List[int] = []
    for bag in bags:
        for i in range(bag.cardinality):
            _, label = instance_predict(model, bag.instances[i:i + 1])
            predicted.append(label)
            truth.append(int(bag.instance_labels[i] in witnesses))

    counts = confusion_counts(predicted, truth, 'binary')
    n_witness = counts.tp + counts.fn
    n_other = counts.tn + counts.fp
    tp_rate = 100.0 * counts.recall
    tn_rate = 100.0 * counts.specificity
    report = InstanceReport(task=task, tp_rate=tp_rate, tn_rate=tn_rate, mean_accuracy=(tp_rate + tn_rate) / 2,
                            n_witness=n_witness, n_other=n_other)
    logger.info(f"📊 实例预测: TP {tp_rate:.2f}%, TN {tn_rate:.2f}%, 平均 {report.mean_accuracy:.2f}% "
                f"({n_witness} 个见证, {n_other} 个其他)")
    return report
