#!/usr/bin/env python3
"""
合成字形实例池
离线环境下替代 MNIST：用 OpenCV Hershey 字体绘制 0-9，再加平移抖动与噪声
"""

import logging

import cv2
import numpy as np

from ..core.exceptions import ContractError
from ..numerics.rng import Rng
from .mnist import InstancePool

logger = logging.getLogger(__name__)

GLYPH_SIZE = 28

FONT_FACES = (
    cv2.FONT_HERSHEY_SIMPLEX,
    cv2.FONT_HERSHEY_DUPLEX,
    cv2.FONT_HERSHEY_COMPLEX,
    cv2.FONT_HERSHEY_TRIPLEX,
)
MAX_SHIFT = 2
NOISE_STD = 12.0


def render_glyph(digit: int, font_face: int, scale: float, thickness: int, size: int = GLYPH_SIZE) -> np.ndarray:
    """
    居中绘制单个数字

    Args:
        digit: 0-9
        font_face: Hershey 字体
        scale: 字号
        thickness: 笔画粗细

    Returns:
        [size×size] uint8 图像
    """
    canvas = np.zeros((size, size), dtype=np.uint8)
    text = str(int(digit))
    (width, height), _ = cv2.getTextSize(text, font_face, scale, thickness)
    origin = ((size - width) // 2, (size + height) // 2)
    cv2.putText(canvas, text, origin, font_face, scale, 255, thickness, cv2.LINE_AA)
    return canvas


def jitter_glyph(glyph: np.ndarray, rng: Rng) -> np.ndarray:
    """±2 像素平移加截断高斯噪声"""
    dx = rng.integers(-MAX_SHIFT, MAX_SHIFT + 1)
    dy = rng.integers(-MAX_SHIFT, MAX_SHIFT + 1)
    matrix = np.float32([[1, 0, dx], [0, 1, dy]])
    size = glyph.shape[0]
    shifted = cv2.warpAffine(glyph, matrix, (size, size), flags=cv2.INTER_NEAREST,
                             borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    noise = rng.normal(0.0, NOISE_STD, size=glyph.shape)
    return np.clip(shifted.astype(np.float64) + noise, 0, 255).astype(np.uint8)


def synth_glyphs(n_per_class: int, seed: int, split: str = 'train') -> InstancePool:
    """
    生成合成字形实例池

    Args:
        n_per_class: 每类样本数
        seed: 随机种子
        split: 划分标签

    Returns:
        10 × n_per_class 张 28×28 图像的实例池，类别按 0..9 轮流排列
    """
    if n_per_class < 1:
        raise ContractError(f"n_per_class 必须 >= 1，当前 {n_per_class}")

    rng = Rng(seed).substream(f"glyphs/{split}")
    images = np.empty((10 * n_per_class, GLYPH_SIZE, GLYPH_SIZE), dtype=np.uint8)
    labels = np.empty(10 * n_per_class, dtype=np.uint8)
    index = 0
    for _ in range(n_per_class):
        for digit in range(10):
            font_face = FONT_FACES[rng.integers(0, len(FONT_FACES))]
            scale = rng.uniform(0.7, 0.9)
            thickness = 1 + rng.integers(1, 3)
            glyph = render_glyph(digit, font_face, scale, thickness)
            images[index] = jitter_glyph(glyph, rng)
            labels[index] = digit
            index += 1

    logger.info(f"✅ 已生成合成字形: {len(labels)} 张（每类 {n_per_class} 张，种子 {seed}）")
    return InstancePool(images, labels, split)
