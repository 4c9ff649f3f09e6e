#!/usr/bin/env python3
"""
MNIST IDX 文件读写
大端格式：图像魔数 2051，标签魔数 2049
"""

import struct
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Union

import numpy as np

from ..core.exceptions import DataConsistencyError, DataFormatError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

Split = Literal['train', 'test']

PathLike = Union[str, Path]


@dataclass(frozen=True)
class InstancePool:
    """
    实例池

    Attributes:
        images: [N×H×W] uint8，像素保持 0-255
        labels: [N] 数字类别 0-9
        split: 'train' 或 'test'
    """

    images: np.ndarray
    labels: np.ndarray
    split: str = 'train'

    def __post_init__(self):
        if self.images.ndim != 3:
            raise DataFormatError(f"实例池图像必须是 N×H×W，当前形状 {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataConsistencyError(f"图像数 {len(self.images)} 与标签数 {len(self.labels)} 不一致")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataConsistencyError("标签必须在 0-9 之间")

    def __len__(self) -> int:
        return int(len(self.labels))

    @property
    def image_shape(self):
        return tuple(int(s) for s in self.images.shape[1:])

    def class_indices(self) -> Dict[int, np.ndarray]:
        """每个类别对应的样本下标"""
        return {c: np.flatnonzero(self.labels == c) for c in range(10)}

    def histogram(self) -> Dict[int, int]:
        counts = np.bincount(self.labels.astype(np.int64), minlength=10)
        return {c: int(counts[c]) for c in range(10)}

    def crop(self, size: int) -> 'InstancePool':
        """左上角裁剪到 size×size（27×27 输入）"""
        if size == self.images.shape[1] and size == self.images.shape[2]:
            return self
        return InstancePool(np.ascontiguousarray(self.images[:, :size, :size]), self.labels, self.split)


def _read_exact(data: bytes, offset: int, length: int, path: Path) -> bytes:
    if offset + length > len(data):
        raise DataFormatError(f"文件被截断: {path}（需要 {offset + length} 字节，实际 {len(data)} 字节）")
    return data[offset:offset + length]


def _read_images(path: Path) -> np.ndarray:
    data = path.read_bytes()
    magic, count, rows, cols = struct.unpack('>IIII', _read_exact(data, 0, 16, path))
    if magic != IMAGES_MAGIC:
        raise DataFormatError(f"图像文件魔数错误: {path}（期望 {IMAGES_MAGIC}，实际 {magic}）")
    body = _read_exact(data, 16, count * rows * cols, path)
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols).copy()


def _read_labels(path: Path) -> np.ndarray:
    data = path.read_bytes()
    magic, count = struct.unpack('>II', _read_exact(data, 0, 8, path))
    if magic != LABELS_MAGIC:
        raise DataFormatError(f"标签文件魔数错误: {path}（期望 {LABELS_MAGIC}，实际 {magic}）")
    body = _read_exact(data, 8, count, path)
    return np.frombuffer(body, dtype=np.uint8).copy()


def load_mnist_idx(images_path: PathLike, labels_path: PathLike, split: Split = 'train') -> InstancePool:
    """
    读取 IDX 图像与标签文件

    Args:
        images_path: 图像文件
        labels_path: 标签文件
        split: 划分标签

    Returns:
        InstancePool

    Raises:
        DataFormatError: 文件不存在、魔数错误或文件截断
        DataConsistencyError: 图像数与标签数不同
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    for path in (images_path, labels_path):
        if not path.exists():
            raise DataFormatError(f"文件不存在: {path}")

    images = _read_images(images_path)
    labels = _read_labels(labels_path)
    if len(images) != len(labels):
        raise DataConsistencyError(
            f"图像数与标签数不一致: {images_path} 有 {len(images)} 张，{labels_path} 有 {len(labels)} 个标签"
        )
    if len(labels) and labels.max() > 9:
        raise DataConsistencyError(f"标签超出 0-9 范围: 最大值 {int(labels.max())}")

    pool = InstancePool(images, labels, split)
    logger.info(f"✅ 已读取 {split} 实例池: {len(pool)} 张 {images.shape[1]}×{images.shape[2]} 图像")
    return pool


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: PathLike, labels_path: PathLike) -> None:
    """
    写出 IDX 图像与标签文件（load_mnist_idx 的逆操作）

    Args:
        images: [N×H×W] uint8
        labels: [N] 0-9
        images_path: 图像文件路径
        labels_path: 标签文件路径
    """
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise DataFormatError(f"图像必须是 N×H×W，当前形状 {images.shape}")
    if len(images) != len(labels):
        raise DataConsistencyError(f"图像数 {len(images)} 与标签数 {len(labels)} 不一致")

    images_path, labels_path = Path(images_path), Path(labels_path)
    images_path.parent.mkdir(parents=True, exist_ok=True)
    labels_path.parent.mkdir(parents=True, exist_ok=True)
    n, rows, cols = images.shape
    with open(images_path, 'wb') as f:
        f.write(struct.pack('>IIII', IMAGES_MAGIC, n, rows, cols))
        f.write(np.ascontiguousarray(images).tobytes())
    with open(labels_path, 'wb') as f:
        f.write(struct.pack('>II', LABELS_MAGIC, n))
        f.write(labels.tobytes())
    logger.debug(f"💾 IDX 文件已写出: {images_path}, {labels_path}")
