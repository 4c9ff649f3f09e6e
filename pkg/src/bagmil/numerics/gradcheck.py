#!/usr/bin/env python3
"""
有限差分梯度检查
"""

import logging
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """
    比较解析梯度与中心差分

    Args:
        f: 标量函数
        x: 求导点
        eps: 差分步长

    Returns:
        max |解析 - 数值| / max(1, |解析|, |数值|)
    """
    base = np.array(x.data, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    with Tape() as tape:
        loss = f(leaf)
    analytic = backward(tape, loss).of(leaf)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += eps
        minus[i] -= eps
        f_plus = f(Tensor(plus.reshape(base.shape))).item()
        f_minus = f(Tensor(minus.reshape(base.shape))).item()
        flat[i] = (f_plus - f_minus) / (2.0 * eps)

    if base.size == 0:
        return 0.0
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    error = float(np.max(np.abs(analytic - numeric) / scale))
    logger.debug(f"🔍 梯度检查: {base.size} 个坐标, 最大相对误差 {error:.3e}")
    return error
