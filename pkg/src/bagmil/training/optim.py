#!/usr/bin/env python3
"""
Adam 优化器（偏差校正，解耦权重衰减）
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from ..core.exceptions import DimensionError
from ..models.parameters import ParameterSet

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """一阶、二阶矩与步数"""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterSet, grads: Mapping[str, np.ndarray], state: AdamState, config) -> AdamState:
    """
    一步 Adam 更新

    θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)

    权重衰减只作用于二维及以上的权重（卷积核、全连接与 LSTM 矩阵），一维偏置不衰减

    Args:
        params: 参数（原地更新）
        grads: 参数名 -> 梯度，缺失的参数不更新
        state: 优化器状态（原地更新）
        config: 带 lr / beta1 / beta2 / eps / weight_decay 属性的配置

    Returns:
        更新后的状态
    """
    state.step += 1
    t = state.step
    lr, beta1, beta2 = config.lr, config.beta1, config.beta2
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, grad in grads.items():
        theta = params[name]
        if theta.shape != grad.shape:
            raise DimensionError(f"参数 {name} 形状 {theta.shape} 与梯度形状 {grad.shape} 不一致")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * grad if m is None else beta1 * m + (1.0 - beta1) * grad
        v = (1.0 - beta2) * grad * grad if v is None else beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v

        m_hat = m / correction1
        v_hat = v / correction2
        decay = config.weight_decay if theta.ndim >= 2 else 0.0
        updated = theta - lr * decay * theta - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        params.assign(name, updated)
    return state
