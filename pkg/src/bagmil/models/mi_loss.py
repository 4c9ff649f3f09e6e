#!/usr/bin/env python3
"""
互信息正则
全局互信息、局部互信息（Jensen-Shannon 下界）与先验匹配，作用在 IDU 输出上
"""

import math
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..core.exceptions import ContractError, DimensionError
from ..numerics import ops
from ..numerics.rng import Rng
from ..numerics.tensor import Tensor
from .parameters import kaiming_uniform, xavier_uniform

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class MiWeights:
    """α 全局项、β 局部项、γ 先验匹配项"""

    alpha: float = 0.5
    beta: float = 1.0
    gamma: float = 0.1

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ContractError(f"互信息权重必须非负: α={self.alpha}, β={self.beta}, γ={self.gamma}")

    @property
    def active(self) -> bool:
        return max(self.alpha, self.beta, self.gamma) > 0

    def to_dict(self) -> Dict[str, float]:
        return {'alpha': self.alpha, 'beta': self.beta, 'gamma': self.gamma}


def init_mi_heads(feature_dim: int, map_shape: Tuple[int, int, int], hidden: int, rng: Rng) -> Dict[str, np.ndarray]:
    """
    初始化三个判别器

    global: 拼接 [f, 展平特征图] 的两层 MLP
    local: 双线性打分 (f W_f)·(u W_u)，对每个空间单元独立计算
    prior: sigmoid(f) 上的两层 MLP
    """
    channels, height, width = map_shape
    joint = feature_dim + channels * height * width
    return {
        'global.w1': kaiming_uniform(rng, (joint, hidden), joint),
        'global.b1': np.zeros(hidden),
        'global.w2': xavier_uniform(rng, (hidden, 1), hidden, 1),
        'global.b2': np.zeros(1),
        'local.wf': xavier_uniform(rng, (feature_dim, hidden), feature_dim, hidden),
        'local.wu': xavier_uniform(rng, (channels, hidden), channels, hidden),
        'prior.w1': kaiming_uniform(rng, (feature_dim, hidden), feature_dim),
        'prior.b1': np.zeros(hidden),
        'prior.w2': xavier_uniform(rng, (hidden, 1), hidden, 1),
        'prior.b2': np.zeros(1),
    }


class MiHeads:
    """判别器集合；params 的键不带 'mi.' 前缀"""

    def __init__(self, params: Mapping[str, Tensor]):
        self.params = dict(params)

    def global_scores(self, f: Tensor, map_flat: Tensor) -> Tensor:
        """T_g：[B×n] 与 [B×CHW] -> [B]"""
        p = self.params
        joint = ops.concat([f, map_flat], axis=1)
        hidden = ops.relu(ops.add(ops.matmul(joint, p['global.w1']), p['global.b1']))
        out = ops.add(ops.matmul(hidden, p['global.w2']), p['global.b2'])
        return ops.reshape(out, (f.shape[0],))

    def local_embeddings(self, f: Tensor, local_map: Tensor) -> Tuple[Tensor, Tensor]:
        """返回 (f W_f [B×E], 每个单元 u W_u [(B·P)×E])，单元按 (样本, 行, 列) 排列"""
        batch, channels, height, width = local_map.shape
        cells = ops.reshape(ops.permute(local_map, (0, 2, 3, 1)), (batch * height * width, channels))
        return ops.matmul(f, self.params['local.wf']), ops.matmul(cells, self.params['local.wu'])

    def prior_logits(self, x: Tensor, detach_params: bool = False) -> Tensor:
        """D 的 logit；detach_params 时判别器参数不接收梯度"""
        p = {k: (Tensor(v.data) if detach_params else v) for k, v in self.params.items() if k.startswith('prior.')}
        hidden = ops.relu(ops.add(ops.matmul(x, p['prior.w1']), p['prior.b1']))
        out = ops.add(ops.matmul(hidden, p['prior.w2']), p['prior.b2'])
        return ops.reshape(out, (x.shape[0],))

    def prior_probability(self, x: Tensor) -> np.ndarray:
        return ops.sigmoid_array(self.prior_logits(x).data)


def jsd_loss(positive: Tensor, negative: Tensor) -> Tensor:
    """mean softplus(−T_pos) + mean softplus(T_neg)；最小化即最大化 JS 互信息下界"""
    return ops.add(ops.mean(ops.softplus(ops.neg(positive))), ops.mean(ops.softplus(negative)))


def _check_batch(f_batch: Tensor, map_batch: Optional[Tensor], op: str) -> None:
    if map_batch is None:
        raise ContractError(f"{op} 需要特征图（互信息模式未开启）")
    if f_batch.ndim != 2 or map_batch.ndim != 4 or f_batch.shape[0] != map_batch.shape[0]:
        raise DimensionError(f"{op}: 特征 {f_batch.shape} 与特征图 {map_batch.shape} 不匹配")
    if f_batch.shape[0] < 2:
        raise ContractError(f"{op} 的批大小至少为 2（负样本来自批内错排），当前 {f_batch.shape[0]}")


def mi_global(f_batch: Tensor, map_batch: Tensor, heads: MiHeads, rng: Rng) -> Tensor:
    """
    全局互信息损失

    正样本为 (f_i, map_i)，负样本为 (f_i, map_π(i))，π 为无不动点的错排

    Args:
        f_batch: [B×n]
        map_batch: [B×C×H×W]
        heads: 判别器
        rng: 负样本随机流
    """
    _check_batch(f_batch, map_batch, 'mi_global')
    batch = f_batch.shape[0]
    map_flat = ops.reshape(map_batch, (batch, int(np.prod(map_batch.shape[1:]))))
    shuffled = ops.gather_rows(map_flat, rng.derangement(batch))
    return jsd_loss(heads.global_scores(f_batch, map_flat), heads.global_scores(f_batch, shuffled))


def mi_local(f_batch: Tensor, map_batch: Optional[Tensor], heads: MiHeads, rng: Rng) -> Tensor:
    """
    局部互信息损失：与全局项相同的估计量，额外在 H×W 个空间单元上平均

    Raises:
        ContractError: 缺少特征图或批大小为 1
    """
    _check_batch(f_batch, map_batch, 'mi_local')
    batch, _, height, width = map_batch.shape
    cells_per_map = height * width
    f_embed, cell_embed = heads.local_embeddings(f_batch, map_batch)

    owner = np.repeat(np.arange(batch), cells_per_map)
    f_per_cell = ops.gather_rows(f_embed, owner)
    positive = ops.sum(ops.mul(f_per_cell, cell_embed), axis=1)

    perm = np.asarray(rng.derangement(batch), dtype=np.int64)
    cell_offsets = np.tile(np.arange(cells_per_map), batch)
    shuffled_cells = ops.gather_rows(cell_embed, perm[owner] * cells_per_map + cell_offsets)
    negative = ops.sum(ops.mul(f_per_cell, shuffled_cells), axis=1)
    return jsd_loss(positive, negative)


def prior_matching(f_batch: Tensor, heads: MiHeads, rng: Rng) -> Tuple[Tensor, Tensor]:
    """
    先验匹配：sigmoid(f) 对抗 Uniform[0,1]^n 样本

    Returns:
        (编码器项, 判别器项)
        判别器项只对 D 参数求导（特征被截断）；编码器项只对特征求导（D 参数被截断）
    """
    if f_batch.ndim != 2 or f_batch.shape[0] < 1:
        raise ContractError(f"prior_matching 需要非空批次，当前形状 {f_batch.shape}")
    squashed = ops.sigmoid(f_batch)
    prior = Tensor(rng.uniform(0.0, 1.0, size=f_batch.shape))

    real_logits = heads.prior_logits(prior)
    fake_logits = heads.prior_logits(squashed.detach())
    discriminator_term = ops.mul(
        ops.add(ops.mean(ops.softplus(ops.neg(real_logits))), ops.mean(ops.softplus(fake_logits))), 0.5
    )
    encoder_term = ops.mean(ops.softplus(ops.neg(heads.prior_logits(squashed, detach_params=True))))
    return encoder_term, discriminator_term


@dataclass
class MiComponents:
    """各项互信息损失；权重为 0 的项不计算"""

    global_term: Optional[Tensor] = None
    local_term: Optional[Tensor] = None
    prior_encoder_term: Optional[Tensor] = None
    prior_discriminator_term: Optional[Tensor] = None

    def values(self) -> Dict[str, float]:
        out = {}
        for key in ('global_term', 'local_term', 'prior_encoder_term', 'prior_discriminator_term'):
            value = getattr(self, key)
            if value is not None:
                out[key] = value.item()
        return out


def mi_components(f_batch: Tensor, map_batch: Optional[Tensor], heads: MiHeads, weights: MiWeights,
                  rng: Rng) -> MiComponents:
    """按权重计算需要的各项"""
    components = MiComponents()
    if weights.alpha > 0:
        components.global_term = mi_global(f_batch, map_batch, heads, rng.substream('global'))
    if weights.beta > 0:
        components.local_term = mi_local(f_batch, map_batch, heads, rng.substream('local'))
    if weights.gamma > 0:
        components.prior_encoder_term, components.prior_discriminator_term = prior_matching(
            f_batch, heads, rng.substream('prior')
        )
    return components


def mi_total(components: MiComponents, weights: MiWeights) -> Tensor:
    """
    α·全局 + β·局部 + γ·(编码器项 + 判别器项)

    两个先验项的梯度落在互不相交的参数上，所以合在一起反向传播时各自只更新自己的一方
    """
    total: Tensor = Tensor(0.0)
    terms = (
        (weights.alpha, components.global_term),
        (weights.beta, components.local_term),
        (weights.gamma, components.prior_encoder_term),
        (weights.gamma, components.prior_discriminator_term),
    )
    for weight, term in terms:
        if weight > 0 and term is not None:
            total = ops.add(total, ops.mul(term, weight))
    return total
