#!/usr/bin/env python3
"""
包表示编码器 (BRE)
双向 LSTM 迭代池化，以及注意力、门控注意力、均值、最大值池化基线
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ContractError, DimensionError
from ..numerics import ops
from ..numerics.rng import Rng
from ..numerics.tensor import Tensor
from .parameters import xavier_uniform

logger = logging.getLogger(__name__)

POOLING_KINDS = ('bilstm', 'attention', 'gated_attention', 'mean', 'max')

# 门的排列顺序
GATES = ('i', 'f', 'o', 'g')


@dataclass
class LstmParams:
    """
    单方向 LSTM 参数

    Attributes:
        weight: [4h×(n+h)]，按 i,f,o,g 分块，每块即 W_* ∈ R^{h×(n+h)}
        bias: [4h]，同样分块
    """

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.weight.shape[0] % 4 != 0:
            raise DimensionError(f"LSTM 权重形状非法: {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"LSTM 偏置形状 {self.bias.shape} 与权重 {self.weight.shape} 不匹配")
        if self.weight.shape[1] <= self.hidden:
            raise DimensionError(f"LSTM 权重列数 {self.weight.shape[1]} 必须大于隐藏宽度 {self.hidden}")

    @property
    def hidden(self) -> int:
        return self.weight.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1] - self.hidden

    def gate_matrix(self, gate: str) -> np.ndarray:
        """取某个门的权重矩阵 W_*"""
        k = GATES.index(gate)
        h = self.hidden
        return self.weight.data[k * h:(k + 1) * h]

    def gate_bias(self, gate: str) -> np.ndarray:
        k = GATES.index(gate)
        h = self.hidden
        return self.bias.data[k * h:(k + 1) * h]

    def prepare(self) -> 'PreparedLstm':
        """拆出输入部分与循环部分的转置权重"""
        n = self.input_dim
        return PreparedLstm(
            wx_t=ops.transpose(self.weight[:, :n]),
            wh_t=ops.transpose(self.weight[:, n:]),
            bias=self.bias,
            hidden=self.hidden,
        )


@dataclass
class PreparedLstm:
    wx_t: Tensor
    wh_t: Tensor
    bias: Tensor
    hidden: int


@dataclass
class BagRepresentation:
    """
    包表示

    Attributes:
        S: 包向量（bilstm 为 2h，其余为 n）
        trace: 前向方向每一步的 (h_t, c_t)
        backward_trace: 反向方向每一步的 (h_t, c_t)，按处理顺序
        attention: 注意力权重（注意力池化时）
    """

    S: Tensor
    trace: List[Tuple[Tensor, Tensor]] = field(default_factory=list)
    backward_trace: List[Tuple[Tensor, Tensor]] = field(default_factory=list)
    attention: Optional[np.ndarray] = None


def init_lstm(input_dim: int, hidden: int, rng: Rng) -> Dict[str, np.ndarray]:
    """均匀 ±1/√h 初始化；遗忘门偏置为 1，其余偏置为 0"""
    bound = 1.0 / math.sqrt(hidden)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    return {
        'weight': rng.uniform(-bound, bound, size=(4 * hidden, input_dim + hidden)),
        'bias': bias,
    }


def init_bilstm(input_dim: int, hidden: int, rng: Rng) -> Dict[str, np.ndarray]:
    params = {}
    for direction in ('fwd', 'bwd'):
        for name, value in init_lstm(input_dim, hidden, rng.substream(direction)).items():
            params[f"{direction}.{name}"] = value
    return params


def init_attention(input_dim: int, attention_dim: int, gated: bool, rng: Rng) -> Dict[str, np.ndarray]:
    """V ∈ R^{d×n}, w ∈ R^d，门控时再加 U ∈ R^{d×n}；无偏置"""
    params = {
        'V': xavier_uniform(rng, (attention_dim, input_dim), input_dim, attention_dim),
        'w': xavier_uniform(rng, (attention_dim,), attention_dim, 1),
    }
    if gated:
        params['U'] = xavier_uniform(rng, (attention_dim, input_dim), input_dim, attention_dim)
    return params


def init_pooling(kind: str, input_dim: int, hidden: int, attention_dim: int, rng: Rng) -> Dict[str, np.ndarray]:
    if kind == 'bilstm':
        return init_bilstm(input_dim, hidden, rng)
    if kind in ('attention', 'gated_attention'):
        return init_attention(input_dim, attention_dim, kind == 'gated_attention', rng)
    if kind in ('mean', 'max'):
        return {}
    raise ContractError(f"未知池化方式: {kind}（可选 {POOLING_KINDS}）")


def pooled_dim(kind: str, input_dim: int, hidden: int) -> int:
    """包向量宽度：bilstm 为 2h，其余为 n"""
    return 2 * hidden if kind == 'bilstm' else input_dim


# ---- LSTM ----

def _gated_update(z: Tensor, c: Tensor, hidden: int) -> Tuple[Tensor, Tensor]:
    """z [1×4h] 为门的仿射输入，c [1×h]"""
    h = hidden
    i = ops.sigmoid(z[:, 0:h])
    f = ops.sigmoid(z[:, h:2 * h])
    o = ops.sigmoid(z[:, 2 * h:3 * h])
    g = ops.tanh(z[:, 3 * h:4 * h])
    c_next = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_next = ops.mul(o, ops.tanh(c_next))
    return h_next, c_next


def lstm_step(f_t: Tensor, h: Tensor, c: Tensor, params: LstmParams) -> Tuple[Tensor, Tensor]:
    """
    单步门控循环

    Args:
        f_t: 输入 [n]
        h: 隐藏状态 [h]
        c: 细胞状态 [h]
        params: 单方向参数

    Returns:
        (h', c')
    """
    hidden, n = params.hidden, params.input_dim
    if f_t.shape != (n,) or h.shape != (hidden,) or c.shape != (hidden,):
        raise DimensionError(
            f"lstm_step: 形状不匹配 f_t={f_t.shape}, h={h.shape}, c={c.shape}，期望 n={n}, h={hidden}"
        )
    prepared = params.prepare()
    z = ops.add(
        ops.add(ops.matmul(ops.reshape(f_t, (1, n)), prepared.wx_t),
                ops.matmul(ops.reshape(h, (1, hidden)), prepared.wh_t)),
        prepared.bias,
    )
    h_next, c_next = _gated_update(z, ops.reshape(c, (1, hidden)), hidden)
    return ops.reshape(h_next, (hidden,)), ops.reshape(c_next, (hidden,))


def _run_direction(F: Tensor, params: LstmParams, reverse: bool) -> List[Tuple[Tensor, Tensor]]:
    """从零状态按顺序（或逆序）处理所有行，返回每一步的 (h_t, c_t)，形状 [1×h]"""
    m = F.shape[0]
    if F.ndim != 2 or F.shape[1] != params.input_dim:
        raise DimensionError(f"特征矩阵 {F.shape} 与 LSTM 输入宽度 {params.input_dim} 不匹配")
    prepared = params.prepare()
    hidden = prepared.hidden
    projected = ops.add(ops.matmul(F, prepared.wx_t), prepared.bias)
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    steps = []
    order = range(m - 1, -1, -1) if reverse else range(m)
    for t in order:
        z = ops.add(projected[t:t + 1], ops.matmul(h, prepared.wh_t))
        h, c = _gated_update(z, c, hidden)
        steps.append((h, c))
    return steps


def _flatten_steps(steps: List[Tuple[Tensor, Tensor]]) -> List[Tuple[Tensor, Tensor]]:
    return [(ops.reshape(h, (h.shape[1],)), ops.reshape(c, (c.shape[1],))) for h, c in steps]


def bilstm_pool(F: Tensor, fwd: LstmParams, bwd: LstmParams) -> BagRepresentation:
    """
    双向 LSTM 池化：前向看 1..m，反向看 m..1，S 为两个方向最终隐藏状态的拼接

    Args:
        F: 实例特征 [m×n]
        fwd: 前向参数
        bwd: 反向参数

    Raises:
        ContractError: 空包
    """
    if F.ndim != 2 or F.shape[0] == 0:
        raise ContractError(f"bilstm_pool 需要非空的特征矩阵，当前形状 {F.shape}")
    forward_steps = _run_direction(F, fwd, reverse=False)
    backward_steps = _run_direction(F, bwd, reverse=True)
    S = ops.reshape(ops.concat([forward_steps[-1][0], backward_steps[-1][0]], axis=1), (fwd.hidden + bwd.hidden,))
    return BagRepresentation(S=S, trace=_flatten_steps(forward_steps), backward_trace=_flatten_steps(backward_steps))


def state_trace(F: Tensor, fwd: LstmParams) -> List[np.ndarray]:
    """前向方向每个实例观察后的隐藏向量 h_t"""
    if F.ndim != 2 or F.shape[0] == 0:
        return []
    return [np.array(h.data[0]) for h, _ in _run_direction(F, fwd, reverse=False)]


def state_jump_statistic(traces: Sequence[Sequence[np.ndarray]], instance_labels: Sequence[Sequence[int]],
                         witnesses: Sequence[int]) -> Dict[str, float]:
    """
    隐藏状态跳变统计：见证位置的平均 ‖h_t − h_{t−1}‖ 与非见证位置跳变的中位数

    Args:
        traces: 每个包的 h_t 序列
        instance_labels: 每个包的潜在标签
        witnesses: 见证类别
    """
    witness_jumps, other_jumps = [], []
    for trace, labels in zip(traces, instance_labels):
        previous = np.zeros_like(trace[0]) if len(trace) else None
        for h_t, label in zip(trace, labels):
            jump = float(np.linalg.norm(h_t - previous))
            (witness_jumps if label in witnesses else other_jumps).append(jump)
            previous = h_t
    return {
        'witness_mean_jump': float(np.mean(witness_jumps)) if witness_jumps else float('nan'),
        'non_witness_median_jump': float(np.median(other_jumps)) if other_jumps else float('nan'),
        'n_witness_steps': len(witness_jumps),
        'n_non_witness_steps': len(other_jumps),
    }


# ---- 置换不变基线 ----

def attention_pool(F: Tensor, V: Tensor, w: Tensor, U: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
    """
    注意力池化 a = softmax(wᵀ tanh(V fᵀ))；门控时 tanh 分支乘以 sigmoid(U fᵀ)

    Args:
        F: [m×n]
        V: [d×n]
        w: [d]
        U: [d×n]，门控变体

    Returns:
        (S [n], a [m])
    """
    if F.ndim != 2 or F.shape[0] == 0:
        raise ContractError(f"attention_pool 需要非空的特征矩阵，当前形状 {F.shape}")
    m, n = F.shape
    hidden = ops.tanh(ops.matmul(F, ops.transpose(V)))
    if U is not None:
        hidden = ops.mul(hidden, ops.sigmoid(ops.matmul(F, ops.transpose(U))))
    scores = ops.reshape(ops.matmul(hidden, ops.reshape(w, (w.shape[0], 1))), (m,))
    weights = ops.softmax(scores, axis=-1)
    S = ops.reshape(ops.matmul(ops.reshape(weights, (1, m)), F), (n,))
    return S, weights


def mean_pool(F: Tensor) -> Tensor:
    if F.ndim != 2 or F.shape[0] == 0:
        raise ContractError(f"mean_pool 需要非空的特征矩阵，当前形状 {F.shape}")
    return ops.mean(F, axis=0)


def max_pool(F: Tensor) -> Tensor:
    if F.ndim != 2 or F.shape[0] == 0:
        raise ContractError(f"max_pool 需要非空的特征矩阵，当前形状 {F.shape}")
    return ops.max_reduce(F, axis=0)


def pool_bag(kind: str, F: Tensor, params: Mapping[str, Tensor]) -> BagRepresentation:
    """按池化方式把 F 汇聚成包表示；params 的键不带 'bre.' 前缀"""
    if kind == 'bilstm':
        return bilstm_pool(
            F,
            LstmParams(params['fwd.weight'], params['fwd.bias']),
            LstmParams(params['bwd.weight'], params['bwd.bias']),
        )
    if kind in ('attention', 'gated_attention'):
        S, weights = attention_pool(F, params['V'], params['w'], params.get('U') if kind == 'gated_attention' else None)
        return BagRepresentation(S=S, attention=np.array(weights.data))
    if kind == 'mean':
        return BagRepresentation(S=mean_pool(F))
    if kind == 'max':
        return BagRepresentation(S=max_pool(F))
    raise ContractError(f"未知池化方式: {kind}（可选 {POOLING_KINDS}）")
