#!/usr/bin/env python3
"""
可复现随机数生成器
xoshiro256** 算法，splitmix64 扩展种子；同一种子在所有平台上产生相同序列
"""

import math
import hashlib
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import ContractError

_MASK = (1 << 64) - 1
_TWO_POW_53 = float(1 << 53)

# 批量抽样时并行推进的 xoshiro 通道数（固定常量，保证结果与调用规模无关）
BULK_LANES = 256
# 少于该数量的抽样走标量路径
BULK_THRESHOLD = 1024


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state: int):
    """
    splitmix64 单步

    Returns:
        (新状态, 输出)
    """
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _expand_seed(seed: int) -> List[int]:
    state = seed & _MASK
    words = []
    for _ in range(4):
        state, out = splitmix64(state)
        words.append(out)
    if not any(words):
        words[0] = 1
    return words


def _np_rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Rng:
    """xoshiro256** 随机数生成器，所有随机操作都显式传入"""

    algorithm = 'xoshiro256**'

    def __init__(self, seed: int = 0):
        if seed < 0:
            raise ContractError(f"种子必须为非负整数: {seed}")
        self.seed = int(seed) & _MASK
        self._s = _expand_seed(self.seed)

    # ---- 状态 ----

    def get_state(self) -> Dict[str, Any]:
        return {'algorithm': self.algorithm, 'seed': self.seed, 'state': [str(w) for w in self._s]}

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> 'Rng':
        if state.get('algorithm') != cls.algorithm:
            raise ContractError(f"随机数状态算法不匹配: {state.get('algorithm')}")
        rng = cls(int(state['seed']))
        rng._s = [int(w) for w in state['state']]
        return rng

    def substream(self, label: str) -> 'Rng':
        """
        派生带标签的子随机流（只依赖根种子与标签，与当前状态无关）

        Args:
            label: 子流标签，如 'data'、'init'、'shuffle'、'eval'
        """
        digest = hashlib.blake2b(f"{self.seed}:{label}".encode('utf-8'), digest_size=8).digest()
        return Rng(int.from_bytes(digest, 'little'))

    # ---- 原始输出 ----

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def _bulk_u64(self, n: int) -> np.ndarray:
        """n 个 uint64；规模较大时各通道由主流派生种子后同步推进"""
        if n < BULK_THRESHOLD:
            return np.array([self.next_u64() for _ in range(n)], dtype=np.uint64)

        lanes = np.empty((4, BULK_LANES), dtype=np.uint64)
        for j in range(BULK_LANES):
            words = _expand_seed(self.next_u64())
            for i in range(4):
                lanes[i, j] = words[i]
        s0, s1, s2, s3 = lanes[0].copy(), lanes[1].copy(), lanes[2].copy(), lanes[3].copy()

        rows = -(-n // BULK_LANES)
        out = np.empty((rows, BULK_LANES), dtype=np.uint64)
        five, nine, seventeen = np.uint64(5), np.uint64(9), np.uint64(17)
        with np.errstate(over='ignore'):
            for r in range(rows):
                out[r] = _np_rotl(s1 * five, 7) * nine
                t = s1 << seventeen
                s2 ^= s0
                s3 ^= s1
                s1 ^= s2
                s0 ^= s3
                s2 ^= t
                s3 = _np_rotl(s3, 45)
        return out.reshape(-1)[:n]

    # ---- 分布 ----

    def random(self) -> float:
        """[0, 1) 上的均匀浮点数（53位精度）"""
        return (self.next_u64() >> 11) / _TWO_POW_53

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Optional[Sequence[int]] = None):
        if size is None:
            return low + (high - low) * self.random()
        shape = (int(size),) if isinstance(size, (int, np.integer)) else tuple(int(s) for s in size)
        count = int(np.prod(shape)) if shape else 1
        raw = self._bulk_u64(count)
        unit = (raw >> np.uint64(11)).astype(np.float64) / _TWO_POW_53
        return (low + (high - low) * unit).reshape(shape)

    def normal(self, mean: float = 0.0, std: float = 1.0, size: Optional[Sequence[int]] = None):
        """Box-Muller 正态分布"""
        if size is None:
            u1 = 1.0 - self.random()
            u2 = self.random()
            return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        shape = (int(size),) if isinstance(size, (int, np.integer)) else tuple(int(s) for s in size)
        count = int(np.prod(shape)) if shape else 1
        u = self.uniform(size=(2 * count,))
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (mean + std * z).reshape(shape)

    def integers(self, low: int, high: Optional[int] = None) -> int:
        """[low, high) 上的无偏整数（拒绝采样）"""
        if high is None:
            low, high = 0, low
        span = high - low
        if span <= 0:
            raise ContractError(f"整数区间为空: [{low}, {high})")
        limit = ((1 << 64) // span) * span
        while True:
            x = self.next_u64()
            if x < limit:
                return low + x % span

    def permutation(self, n: int) -> List[int]:
        """Fisher-Yates 洗牌得到 0..n-1 的随机排列"""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def derangement(self, n: int) -> List[int]:
        """Sattolo 算法：单循环排列，没有不动点"""
        if n < 2:
            raise ContractError(f"错排至少需要2个元素: n={n}")
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice(self, seq: Sequence[Any]) -> Any:
        if len(seq) == 0:
            raise ContractError("不能从空序列中抽样")
        return seq[self.integers(0, len(seq))]

    def weighted_index(self, weights: np.ndarray) -> int:
        """按非负权重抽取下标"""
        weights = np.asarray(weights, dtype=np.float64)
        total = float(weights.sum())
        if not total > 0:
            return self.integers(0, len(weights))
        cumulative = np.cumsum(weights)
        target = self.random() * total
        index = int(np.searchsorted(cumulative, target, side='right'))
        return min(index, len(weights) - 1)
