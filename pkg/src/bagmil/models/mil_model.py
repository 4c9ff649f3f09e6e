#!/usr/bin/env python3
"""
多示例模型
IDU + BRE + 预测单元 g(S)，可选互信息判别器
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Mapping, Optional

import numpy as np

from ..core.exceptions import ContractError
from ..numerics import ops
from ..numerics.rng import Rng
from ..numerics.tensor import Tensor
from .encoders import IduConfig, encode_bag, init_idu
from .mi_loss import MiHeads, init_mi_heads
from .parameters import ParameterSet, xavier_uniform
from .pooling import POOLING_KINDS, BagRepresentation, init_pooling, pool_bag, pooled_dim

logger = logging.getLogger(__name__)

HeadVariant = Literal['classifier', 'regressor']


@dataclass(frozen=True)
class ModelSpec:
    """模型结构描述，写入检查点"""

    task: str
    pooling: str = 'bilstm'
    idu: IduConfig = field(default_factory=IduConfig)
    hidden_dim: int = 500
    attention_dim: int = 128
    mi_hidden: Optional[int] = None

    def __post_init__(self):
        if self.pooling not in POOLING_KINDS:
            raise ContractError(f"未知池化方式: {self.pooling}（可选 {POOLING_KINDS}）")

    @property
    def head_variant(self) -> HeadVariant:
        return 'regressor' if self.task == 'counting' else 'classifier'

    @property
    def pooled_dim(self) -> int:
        return pooled_dim(self.pooling, self.idu.feature_dim, self.hidden_dim)

    @property
    def mi_enabled(self) -> bool:
        return self.mi_hidden is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'task': self.task,
            'pooling': self.pooling,
            'idu': {
                'conv1_channels': self.idu.conv1_channels,
                'conv2_channels': self.idu.conv2_channels,
                'fc1_units': self.idu.fc1_units,
                'feature_dim': self.idu.feature_dim,
                'input_size': self.idu.input_size,
            },
            'hidden_dim': self.hidden_dim,
            'attention_dim': self.attention_dim,
            'mi_hidden': self.mi_hidden,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ModelSpec':
        return cls(
            task=data['task'],
            pooling=data['pooling'],
            idu=IduConfig(**data['idu']),
            hidden_dim=int(data['hidden_dim']),
            attention_dim=int(data['attention_dim']),
            mi_hidden=data.get('mi_hidden'),
        )


@dataclass
class Prediction:
    """
    包级预测

    Attributes:
        raw: 头部原始输出（分类为 logit，回归为连续值）
        probability: 分类概率，回归时为 None
        label: 阈值化标签或四舍五入后的非负计数
    """

    raw: float
    probability: Optional[float]
    label: int


@dataclass(frozen=True)
class PredictionHead:
    """g(S)：分类为仿射 + sigmoid，回归为仿射"""

    variant: HeadVariant

    def apply(self, S: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        """返回标量原始输出"""
        out = ops.add(ops.matmul(ops.reshape(S, (1, S.shape[0])), weight), bias)
        return ops.reshape(out, ())

    def interpret(self, raw: float) -> Prediction:
        if self.variant == 'classifier':
            probability = float(ops.sigmoid_array(np.array([raw]))[0])
            return Prediction(raw=raw, probability=probability, label=int(probability >= 0.5))
        return Prediction(raw=raw, probability=None, label=round_count(raw))


def round_count(raw: float) -> int:
    """四舍五入到最近的非负整数"""
    return max(0, int(math.floor(raw + 0.5)))


@dataclass
class ForwardResult:
    output: Tensor
    representation: BagRepresentation
    features: Tensor
    local_map: Optional[Tensor] = None


class MilModel:
    """
    多示例学习模型

    参数名前缀: idu.* / bre.* / head.* / mi.*
    """

    def __init__(self, spec: ModelSpec, params: ParameterSet):
        self.spec = spec
        self.params = params
        self.head = PredictionHead(spec.head_variant)

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int) -> 'MilModel':
        """
        从运行种子的 'init' 子流初始化；各部件使用各自的子流，
        开启互信息不会改变其他参数
        """
        init_rng = Rng(seed).substream('init')
        params = ParameterSet()
        params.merge('idu', init_idu(spec.idu, init_rng.substream('idu')))
        params.merge('bre', init_pooling(spec.pooling, spec.idu.feature_dim, spec.hidden_dim,
                                         spec.attention_dim, init_rng.substream('bre')))
        head_rng = init_rng.substream('head')
        params.merge('head', {
            'weight': xavier_uniform(head_rng, (spec.pooled_dim, 1), spec.pooled_dim, 1),
            'bias': np.zeros(1),
        })
        if spec.mi_enabled:
            params.merge('mi', init_mi_heads(spec.idu.feature_dim, spec.idu.map_shape, spec.mi_hidden,
                                             init_rng.substream('mi')))
        logger.info(f"🚀 模型已初始化: {spec.task}/{spec.pooling}, {params.num_values()} 个参数")
        return cls(spec, params)

    def leaves(self, requires_grad: bool = False) -> Dict[str, Tensor]:
        return self.params.leaves(requires_grad=requires_grad)

    @staticmethod
    def _strip(leaves: Mapping[str, Tensor], prefix: str) -> Dict[str, Tensor]:
        cut = len(prefix) + 1
        return {name[cut:]: value for name, value in leaves.items() if name.startswith(prefix + '.')}

    def encode(self, images: np.ndarray, leaves: Optional[Mapping[str, Tensor]] = None,
               keep_map: bool = False):
        leaves = leaves if leaves is not None else self.leaves()
        return encode_bag(images, self._strip(leaves, 'idu'), self.spec.idu, keep_map)

    def forward(self, images: np.ndarray, leaves: Optional[Mapping[str, Tensor]] = None,
                keep_map: bool = False) -> ForwardResult:
        """
        前向计算

        Args:
            images: [m×H×W] 包实例
            leaves: 参数张量（训练时由调用方提供需要梯度的叶子）
            keep_map: 是否保留 conv2 特征图（互信息用）
        """
        leaves = leaves if leaves is not None else self.leaves()
        features, local_map = self.encode(images, leaves, keep_map)
        return self.from_features(features, leaves, local_map)

    def from_features(self, features: Tensor, leaves: Mapping[str, Tensor],
                      local_map: Optional[Tensor] = None) -> ForwardResult:
        """由实例特征 F 继续池化与预测"""
        representation = pool_bag(self.spec.pooling, features, self._strip(leaves, 'bre'))
        output = self.head.apply(representation.S, leaves['head.weight'], leaves['head.bias'])
        return ForwardResult(output=output, representation=representation, features=features, local_map=local_map)

    def mi_heads(self, leaves: Mapping[str, Tensor]) -> MiHeads:
        if not self.spec.mi_enabled:
            raise ContractError("模型未启用互信息判别器")
        return MiHeads(self._strip(leaves, 'mi'))

    def predict_images(self, images: np.ndarray) -> Prediction:
        return self.head.interpret(self.forward(images).output.item())

    def representation(self, images: np.ndarray) -> np.ndarray:
        """包向量 S（numpy）"""
        return np.array(self.forward(images).representation.S.data)

    def copy(self) -> 'MilModel':
        return MilModel(self.spec, self.params.copy())


def predict(model: MilModel, bag) -> Prediction:
    """
    包级预测：分类给出概率与 0.5 阈值标签，回归给出原始值与四舍五入的非负计数
    """
    return model.predict_images(bag.instances)
