#!/usr/bin/env python3
"""
数值模块
提供不可变张量、反向模式自动微分、张量原语、梯度检查与可复现随机数
"""

from .tensor import Tensor, Tape, Gradients, backward, active_tape, set_debug_numerics
from .rng import Rng
from .gradcheck import grad_check
from . import ops

__all__ = [
    'Tensor', 'Tape', 'Gradients', 'backward', 'active_tape', 'set_debug_numerics',
    'Rng', 'grad_check', 'ops',
]
