#!/usr/bin/env python3
"""
实例描述单元 (IDU)
LeNet 结构：conv(5×5)-relu-maxpool ×2，fc1-relu，fc2 得到实例特征 f
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..core.exceptions import DimensionError
from ..numerics import ops
from ..numerics.rng import Rng
from ..numerics.tensor import Tensor
from .parameters import kaiming_uniform

logger = logging.getLogger(__name__)

KERNEL = 5
POOL = 2


@dataclass(frozen=True)
class IduConfig:
    """LeNet 通道规划；feature_dim 即池化层输入宽度 n"""

    conv1_channels: int = 20
    conv2_channels: int = 50
    fc1_units: int = 500
    feature_dim: int = 500
    input_size: int = 28

    @property
    def map_size(self) -> int:
        """conv2 池化后的空间边长（floor 模式）"""
        size = (self.input_size - KERNEL + 1) // POOL
        return (size - KERNEL + 1) // POOL

    @property
    def flat_dim(self) -> int:
        return self.conv2_channels * self.map_size * self.map_size

    @property
    def map_shape(self) -> Tuple[int, int, int]:
        return (self.conv2_channels, self.map_size, self.map_size)


@dataclass
class InstanceFeature:
    """
    单个实例的特征

    Attributes:
        vector: f ∈ R^n
        local_map: conv2 池化后的激活 (C×H×W)，只在启用互信息时保留
    """

    vector: Tensor
    local_map: Optional[Tensor] = None


def init_idu(config: IduConfig, rng: Rng) -> Dict[str, np.ndarray]:
    """
    初始化 IDU 参数（卷积与全连接 Kaiming 均匀，偏置为零）

    全连接权重按 [输入×输出] 存放
    """
    c1, c2 = config.conv1_channels, config.conv2_channels
    return {
        'conv1.weight': kaiming_uniform(rng, (c1, 1, KERNEL, KERNEL), KERNEL * KERNEL),
        'conv1.bias': np.zeros(c1),
        'conv2.weight': kaiming_uniform(rng, (c2, c1, KERNEL, KERNEL), c1 * KERNEL * KERNEL),
        'conv2.bias': np.zeros(c2),
        'fc1.weight': kaiming_uniform(rng, (config.flat_dim, config.fc1_units), config.flat_dim),
        'fc1.bias': np.zeros(config.fc1_units),
        'fc2.weight': kaiming_uniform(rng, (config.fc1_units, config.feature_dim), config.fc1_units),
        'fc2.bias': np.zeros(config.feature_dim),
    }


def normalize_pixels(images: np.ndarray) -> np.ndarray:
    """uint8 像素除以 255"""
    return np.asarray(images, dtype=np.float64) / 255.0


def _check_spatial(images: np.ndarray, config: IduConfig) -> None:
    expected = (config.input_size, config.input_size)
    if images.shape[-2:] != expected:
        raise DimensionError(f"实例尺寸 {images.shape[-2:]} 与 IDU 输入 {expected} 不兼容")


def encode_bag(images: np.ndarray, params: Mapping[str, Tensor], config: IduConfig,
               keep_map: bool = False) -> Tuple[Tensor, Optional[Tensor]]:
    """
    编码整个包：所有实例作为一个 N×1×H×W 批次逐行独立计算

    Args:
        images: [m×H×W] uint8 或已归一化的 float 数组
        params: IDU 参数张量（键不带 'idu.' 前缀）
        config: IDU 配置
        keep_map: 是否返回 conv2 特征图

    Returns:
        (F [m×n], local_map [m×C×h×w] 或 None)
    """
    images = np.asarray(images)
    if images.ndim != 3:
        raise DimensionError(f"包图像必须是 m×H×W，当前形状 {images.shape}")
    _check_spatial(images, config)
    pixels = normalize_pixels(images) if images.dtype == np.uint8 else np.asarray(images, dtype=np.float64)
    x = Tensor(pixels[:, None, :, :])

    h = ops.conv2d(x, params['conv1.weight'])
    h = ops.max_pool2d(ops.relu(ops.add_channel_bias(h, params['conv1.bias'])), POOL)
    h = ops.conv2d(h, params['conv2.weight'])
    local_map = ops.max_pool2d(ops.relu(ops.add_channel_bias(h, params['conv2.bias'])), POOL)

    flat = ops.reshape(local_map, (images.shape[0], config.flat_dim))
    hidden = ops.relu(ops.add(ops.matmul(flat, params['fc1.weight']), params['fc1.bias']))
    features = ops.add(ops.matmul(hidden, params['fc2.weight']), params['fc2.bias'])
    return features, (local_map if keep_map else None)


def encode_instance(image: np.ndarray, params: Mapping[str, Tensor], config: IduConfig,
                    keep_map: bool = False) -> InstanceFeature:
    """
    编码单个实例 f = τ(x)

    Args:
        image: [H×W] 图像
        params: IDU 参数张量
        config: IDU 配置
        keep_map: 是否保留 conv2 特征图
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise DimensionError(f"实例图像必须是二维，当前形状 {image.shape}")
    features, local_map = encode_bag(image[None], params, config, keep_map)
    vector = ops.reshape(features, (config.feature_dim,))
    if local_map is not None:
        local_map = ops.reshape(local_map, config.map_shape)
    return InstanceFeature(vector=vector, local_map=local_map)
