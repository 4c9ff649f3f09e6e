#!/usr/bin/env python3
"""
检查点读写
小端二进制: b"MILB" + u32 版本 + u32 元数据长度 + JSON 元数据 + 按声明顺序排列的 f64 张量
"""

import json
import struct
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .. import __version__
from ..core.exceptions import ContractError, DataFormatError, DimensionError, MigrationError
from ..models.mil_model import MilModel, ModelSpec
from ..models.parameters import ParameterSet

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MILB"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """
    检查点

    Attributes:
        spec: 模型结构
        params: 全部参数（idu / bre / head / mi）
        train_config: 训练配置回显
        rng_state: 训练随机流状态
        epoch: 保存时的轮次
        extra: 其他元数据（任务、配置哈希等）
    """

    spec: ModelSpec
    params: ParameterSet
    train_config: Dict[str, Any] = field(default_factory=dict)
    rng_state: Optional[Dict[str, Any]] = None
    epoch: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: MilModel, **kwargs) -> 'Checkpoint':
        return cls(spec=model.spec, params=model.params.copy(), **kwargs)

    def to_model(self) -> MilModel:
        return MilModel(self.spec, self.params.copy())


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """
    写出检查点

    Args:
        checkpoint: 检查点
        path: 目标路径

    Returns:
        文件路径
    """
    names = checkpoint.params.names()
    metadata = {
        'format_version': FORMAT_VERSION,
        'tool_version': __version__,
        'model_spec': checkpoint.spec.to_dict(),
        'tensors': [{'name': n, 'shape': list(checkpoint.params[n].shape)} for n in names],
        'train_config': checkpoint.train_config,
        'rng_state': checkpoint.rng_state,
        'epoch': checkpoint.epoch,
        'extra': checkpoint.extra,
    }
    encoded = json.dumps(metadata, sort_keys=True, separators=(',', ':')).encode('utf-8')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<II', FORMAT_VERSION, len(encoded)))
        f.write(encoded)
        for name in names:
            f.write(np.ascontiguousarray(checkpoint.params[name], dtype='<f8').tobytes())
    logger.info(f"💾 检查点已保存: {path} ({len(names)} 个张量, 第 {checkpoint.epoch} 轮)")
    return path


def _check_layout(spec: ModelSpec, params: ParameterSet, path: Path) -> None:
    """参数名与形状必须和模型结构一致"""
    expected = MilModel.initialize(spec, 0).params.shapes()
    actual = params.shapes()
    missing = sorted(set(expected) - set(actual))
    unexpected = sorted(set(actual) - set(expected))
    if missing or unexpected:
        raise DataFormatError(f"检查点参数与模型结构不一致: {path}（缺少 {missing}，多余 {unexpected}）")
    for name, shape in expected.items():
        if actual[name] != shape:
            raise DataFormatError(f"检查点张量 {name} 形状 {actual[name]} 与模型结构 {shape} 不一致: {path}")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    读取检查点

    Raises:
        DataFormatError: 文件不存在、魔数错误、元数据损坏或数据截断
        MigrationError: 格式版本不匹配
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"检查点不存在: {path}")
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"检查点魔数错误: {path}（期望 {CHECKPOINT_MAGIC!r}，实际 {data[:4]!r}）")
    if len(data) < 12:
        raise DataFormatError(f"检查点被截断: {path}")
    version, meta_len = struct.unpack('<II', data[4:12])
    if version != FORMAT_VERSION:
        raise MigrationError(f"检查点格式版本 {version} 与当前版本 {FORMAT_VERSION} 不兼容，需要迁移: {path}")
    try:
        metadata = json.loads(data[12:12 + meta_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"检查点元数据损坏: {path}: {e}") from e

    offset = 12 + meta_len
    params = ParameterSet()
    try:
        spec = ModelSpec.from_dict(metadata['model_spec'])
        for entry in metadata['tensors']:
            shape = tuple(int(d) for d in entry['shape'])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            if offset + nbytes > len(data):
                raise DataFormatError(f"检查点数据被截断: {path}（张量 {entry['name']}）")
            values = np.frombuffer(data, dtype='<f8', count=count, offset=offset).reshape(shape)
            params.add(entry['name'], values.astype(np.float64))
            offset += nbytes
        if offset != len(data):
            raise DataFormatError(f"检查点末尾有多余数据: {path}")
        _check_layout(spec, params, path)
    except (KeyError, TypeError, ValueError, AttributeError, ContractError, DimensionError) as e:
        raise DataFormatError(f"检查点元数据损坏: {path}: {e!r}") from e

    checkpoint = Checkpoint(
        spec=spec,
        params=params,
        train_config=metadata.get('train_config') or {},
        rng_state=metadata.get('rng_state'),
        epoch=int(metadata.get('epoch', 0)),
        extra=metadata.get('extra') or {},
    )
    logger.info(f"✅ 已读取检查点: {path} ({checkpoint.spec.task}/{checkpoint.spec.pooling}, 第 {checkpoint.epoch} 轮)")
    return checkpoint


def load_model(path: Union[str, Path]) -> MilModel:
    return load_checkpoint(path).to_model()
