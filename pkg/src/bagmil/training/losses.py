#!/usr/bin/env python3
"""
任务损失
分类用 logit 形式的二元交叉熵，回归用平方误差
"""

import numpy as np

from ..core.exceptions import ContractError
from ..numerics import ops
from ..numerics.tensor import Tensor


def _check_target(target: int, variant: str) -> None:
    if variant == 'classifier':
        if target not in (0, 1):
            raise ContractError(f"分类目标必须为 0 或 1，当前 {target}")
    elif variant == 'regressor':
        if target < 0 or int(target) != target:
            raise ContractError(f"回归目标必须为非负整数，当前 {target}")
    else:
        raise ContractError(f"未知预测头类型: {variant}")


def task_loss(output: Tensor, target: int, variant: str) -> Tensor:
    """
    单个包的任务损失

    Args:
        output: 标量原始输出（分类为 logit z）
        target: 包标签
        variant: 'classifier' | 'regressor'

    Returns:
        分类: softplus(z) − y·z（即 −[y ln σ(z) + (1−y) ln(1−σ(z))]）
        回归: (z − y)²
    """
    _check_target(target, variant)
    if variant == 'classifier':
        return ops.sub(ops.softplus(output), ops.mul(output, float(target)))
    return ops.square(ops.sub(output, float(target)))


def task_loss_value(raw: float, target: int, variant: str) -> float:
    """task_loss 的纯数值版本（评估用）"""
    _check_target(target, variant)
    if variant == 'classifier':
        return float(np.logaddexp(0.0, raw) - target * raw)
    return float((raw - target) ** 2)
