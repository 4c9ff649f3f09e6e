#!/usr/bin/env python3
"""
实例池缓存
每个划分保存为一对 IDX 文件，manifest.json 记录数量、类别直方图和 SHA-256
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from ..core.exceptions import DataConsistencyError, DataFormatError
from ..utils.run_utils import bytes_sha256, file_sha256
from .mnist import InstancePool, load_mnist_idx, write_idx

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'

# 与官方 MNIST 发布文件同名
IDX_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


def load_mnist_dir(mnist_dir: Union[str, Path]) -> Dict[str, InstancePool]:
    """
    读取官方 MNIST 目录中的训练与测试划分

    Raises:
        DataFormatError: 文件缺失或格式错误
    """
    mnist_dir = Path(mnist_dir)
    pools = {}
    for split, (images_name, labels_name) in IDX_FILES.items():
        pools[split] = load_mnist_idx(mnist_dir / images_name, mnist_dir / labels_name, split)
    return pools


def _manifest_hash(splits: Mapping[str, Any], source: str) -> str:
    canonical = json.dumps({'source': source, 'splits': splits}, sort_keys=True, separators=(',', ':'))
    return bytes_sha256(canonical.encode('utf-8'))


def save_pool(pools: Mapping[str, InstancePool], directory: Union[str, Path], source: str) -> Dict[str, Any]:
    """
    保存实例池并写出清单

    Args:
        pools: 划分名 -> 实例池
        directory: 目标目录
        source: 数据来源描述（'mnist' 或 'synthetic:N:seed'）

    Returns:
        清单字典（含 manifest_hash）
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    splits: Dict[str, Any] = {}
    for split, pool in sorted(pools.items()):
        images_name, labels_name = IDX_FILES[split]
        write_idx(pool.images, pool.labels, directory / images_name, directory / labels_name)
        splits[split] = {
            'count': len(pool),
            'image_shape': list(pool.image_shape),
            'histogram': {str(k): v for k, v in pool.histogram().items()},
            'images_file': images_name,
            'labels_file': labels_name,
            'images_sha256': file_sha256(directory / images_name),
            'labels_sha256': file_sha256(directory / labels_name),
        }

    manifest = {'source': source, 'splits': splits, 'manifest_hash': _manifest_hash(splits, source)}
    with open(directory / MANIFEST_NAME, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True)
    counts = ", ".join(f"{k}={v['count']}" for k, v in splits.items())
    logger.info(f"💾 实例池已保存: {directory} ({counts})")
    return manifest


def read_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DataFormatError(f"实例池清单不存在: {path}（请先运行 data prepare）")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"实例池清单不是合法JSON: {path}: {e}") from e


def load_pool(directory: Union[str, Path], split: str, verify: bool = True,
              manifest: Optional[Dict[str, Any]] = None) -> InstancePool:
    """
    读取缓存的实例池划分，校验清单中的 SHA-256

    Raises:
        DataFormatError: 清单缺失或文件格式错误
        DataConsistencyError: 校验和不符
    """
    directory = Path(directory)
    manifest = manifest or read_manifest(directory)
    entry = manifest.get('splits', {}).get(split)
    if entry is None:
        raise DataFormatError(f"实例池中没有划分 {split}: {directory}")

    images_path = directory / entry['images_file']
    labels_path = directory / entry['labels_file']
    if verify:
        for path, key in ((images_path, 'images_sha256'), (labels_path, 'labels_sha256')):
            if not path.exists():
                raise DataFormatError(f"文件不存在: {path}")
            actual = file_sha256(path)
            if actual != entry[key]:
                raise DataConsistencyError(f"校验和不符: {path}（清单 {entry[key][:12]}，实际 {actual[:12]}）")
    return load_mnist_idx(images_path, labels_path, split)
