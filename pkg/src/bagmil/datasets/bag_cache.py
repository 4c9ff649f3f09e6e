#!/usr/bin/env python3
"""
包缓存文件
格式: b"MILBAGS1" + u32 小端头长度 + UTF-8 JSON 头 + uint8 实例数据
"""

import json
import struct
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..core.exceptions import ContractError, DataFormatError
from ..utils.run_utils import file_sha256
from .bags import Bag, BagTarget, ScenarioSpec

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"MILBAGS1"


@dataclass
class BagCache:
    """缓存中的包列表及其元数据"""

    bags: List[Bag]
    task: str
    split: str
    scenario: Optional[ScenarioSpec] = None
    pool_manifest_hash: Optional[str] = None


def save_bags(path: Union[str, Path], bags: List[Bag], task: str, split: str,
              scenario: Optional[ScenarioSpec] = None, pool_manifest_hash: Optional[str] = None) -> str:
    """
    写出包缓存

    Args:
        path: 目标文件
        bags: 包列表
        task: 任务名
        split: 划分名
        scenario: 生成时的场景规格
        pool_manifest_hash: 来源实例池清单哈希

    Returns:
        文件 SHA-256
    """
    if not bags:
        raise DataFormatError("不能缓存空的包列表")
    image_shape = list(bags[0].instances.shape[1:])
    header: Dict[str, Any] = {
        'task': task,
        'split': split,
        'n_bags': len(bags),
        'image_shape': image_shape,
        'scenario': scenario.to_dict() if scenario is not None else None,
        'seed': scenario.seed if scenario is not None else None,
        'm': scenario.mean_cardinality if scenario is not None else None,
        'sigma': scenario.std_cardinality if scenario is not None else None,
        'pool_manifest_hash': pool_manifest_hash,
        'bags': [
            {
                'bag_id': b.bag_id,
                'cardinality': b.cardinality,
                'labels': list(b.instance_labels),
                'target': None if b.target is None else {'variant': b.target.variant, 'value': b.target.value},
            }
            for b in bags
        ],
    }
    for bag in bags:
        if list(bag.instances.shape[1:]) != image_shape:
            raise DataFormatError(f"包 {bag.bag_id} 的图像尺寸 {bag.instances.shape[1:]} 与 {image_shape} 不一致")

    encoded = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack('<I', len(encoded)))
        f.write(encoded)
        for bag in bags:
            f.write(np.ascontiguousarray(bag.instances, dtype=np.uint8).tobytes())
    digest = file_sha256(path)
    logger.info(f"💾 包缓存已保存: {path} ({len(bags)} 个包, sha256 {digest[:12]})")
    return digest


def load_bags(path: Union[str, Path]) -> BagCache:
    """
    读取包缓存

    Raises:
        DataFormatError: 文件不存在、魔数错误、头部损坏或数据截断
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"包缓存不存在: {path}")
    data = path.read_bytes()
    if data[:len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise DataFormatError(f"包缓存魔数错误: {path}（期望 {CACHE_MAGIC!r}，实际 {data[:len(CACHE_MAGIC)]!r}）")
    offset = len(CACHE_MAGIC)
    if len(data) < offset + 4:
        raise DataFormatError(f"包缓存被截断: {path}")
    (header_len,) = struct.unpack('<I', data[offset:offset + 4])
    offset += 4
    try:
        header = json.loads(data[offset:offset + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"包缓存头部损坏: {path}: {e}") from e
    offset += header_len

    try:
        task, split = str(header['task']), str(header['split'])
        rows, cols = (int(v) for v in header['image_shape'])
        pixels = rows * cols
        bags = []
        for entry in header['bags']:
            size = int(entry['cardinality']) * pixels
            if offset + size > len(data):
                raise DataFormatError(f"包缓存数据被截断: {path}（包 {entry['bag_id']}）")
            instances = np.frombuffer(data, dtype=np.uint8, count=size, offset=offset)
            offset += size
            target = entry['target']
            bags.append(Bag(
                instances=instances.reshape(int(entry['cardinality']), rows, cols).copy(),
                instance_labels=tuple(entry['labels']),
                target=None if target is None else BagTarget(target['variant'], target['value']),
                bag_id=entry['bag_id'],
            ))
        scenario = ScenarioSpec.from_dict(header['scenario']) if header.get('scenario') else None
    except (KeyError, TypeError, ValueError, AttributeError, ContractError) as e:
        raise DataFormatError(f"包缓存头部损坏: {path}: {e!r}") from e
    if offset != len(data):
        raise DataFormatError(f"包缓存末尾有多余数据: {path}")

    logger.info(f"✅ 已读取包缓存: {path} ({len(bags)} 个 {task} 包)")
    return BagCache(bags=bags, task=task, split=split, scenario=scenario,
                    pool_manifest_hash=header.get('pool_manifest_hash'))
