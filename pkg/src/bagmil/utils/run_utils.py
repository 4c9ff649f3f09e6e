#!/usr/bin/env python3
"""
运行目录与结果文件工具
提供运行目录创建、带溯源信息的JSON结果保存、CSV写入与校验和计算
"""

import csv
import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .. import __version__

logger = logging.getLogger(__name__)


def create_run_dir(base_dir: str, run_id: str) -> Path:
    """
    创建运行目录

    Args:
        base_dir: 基础目录
        run_id: 运行标识

    Returns:
        创建的运行目录路径
    """
    run_dir = Path(base_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"📁 运行目录: {run_dir}")
    return run_dir


def provenance(config_hash: str, seed: int) -> Dict[str, Any]:
    """每个结果文件都要嵌入的溯源字段"""
    return {'tool_version': __version__, 'config_hash': config_hash, 'seed': seed}


def save_artifact_json(path: Path, payload: Dict[str, Any], config_hash: str, seed: int) -> Path:
    """
    保存结果JSON（写入溯源字段，不含时间戳，相同输入得到相同文件）

    Args:
        path: 输出路径
        payload: 结果内容
        config_hash: 配置哈希
        seed: 运行种子

    Returns:
        文件路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = dict(provenance(config_hash, seed))
    document.update(payload)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, ensure_ascii=False, indent=2, sort_keys=True, default=_json_default)
    logger.info(f"💾 结果已保存: {path}")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]],
              comment: Optional[Dict[str, Any]] = None) -> Path:
    """
    写入CSV文件

    Args:
        path: 输出路径
        header: 列名
        rows: 数据行
        comment: 写在首行的溯源信息（以 # 开头）

    Returns:
        文件路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        if comment:
            f.write('# ' + json.dumps(comment, sort_keys=True) + '\n')
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
            count += 1
    logger.info(f"💾 CSV已保存: {path} ({count} 行)")
    return path


def read_csv_rows(path: Path) -> List[Dict[str, str]]:
    """读取write_csv写出的CSV（跳过注释行）"""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        lines = [line for line in f if not line.startswith('#')]
    return list(csv.DictReader(lines))


def bytes_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path: Path, chunk_size: int = 1 << 20) -> str:
    """计算文件的SHA-256"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()


def _format_cell(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value


def _json_default(value: Any) -> Any:
    # numpy 标量/数组
    if hasattr(value, 'tolist'):
        return value.tolist()
    if hasattr(value, 'item'):
        return value.item()
    raise TypeError(f"无法序列化类型: {type(value)}")
