#!/usr/bin/env python3
"""
模型参数存储与初始化
"""

import math
import logging
from typing import Dict, Iterator, Mapping, Tuple

import numpy as np

from ..core.exceptions import ContractError, DimensionError
from ..numerics.rng import Rng
from ..numerics.tensor import Tensor

logger = logging.getLogger(__name__)


def kaiming_uniform(rng: Rng, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Kaiming 均匀初始化（fan-in，ReLU 增益）"""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def xavier_uniform(rng: Rng, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParameterSet:
    """
    按声明顺序保存的命名参数（numpy 数组）

    训练时每一步通过 leaves() 得到需要梯度的叶子张量，
    优化器更新后用 assign() 写回新数组
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] = None):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._arrays:
            raise ContractError(f"参数名重复: {name}")
        self._arrays[name] = np.array(value, dtype=np.float64)

    def merge(self, prefix: str, arrays: Mapping[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            self.add(f"{prefix}.{name}", value)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(value.shape) for name, value in self._arrays.items()}

    def num_values(self) -> int:
        return int(sum(v.size for v in self._arrays.values()))

    def assign(self, name: str, value: np.ndarray) -> None:
        current = self._arrays[name]
        if current.shape != np.shape(value):
            raise DimensionError(f"参数 {name} 形状不匹配: {current.shape} vs {np.shape(value)}")
        self._arrays[name] = np.array(value, dtype=np.float64)

    def leaves(self, requires_grad: bool = True, prefix: str = '') -> Dict[str, Tensor]:
        """
        把参数包装成张量

        Args:
            requires_grad: 是否需要梯度
            prefix: 只取该前缀的参数，返回的键去掉前缀
        """
        selected = {}
        for name, value in self._arrays.items():
            if prefix and not name.startswith(prefix + '.'):
                continue
            key = name[len(prefix) + 1:] if prefix else name
            selected[key] = Tensor(value, requires_grad=requires_grad, name=name)
        return selected

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        return {
            name[len(prefix) + 1:]: value
            for name, value in self._arrays.items()
            if name.startswith(prefix + '.')
        }

    def copy(self) -> 'ParameterSet':
        return ParameterSet({name: value.copy() for name, value in self._arrays.items()})
