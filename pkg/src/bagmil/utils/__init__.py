#!/usr/bin/env python3
"""
工具模块
提供日志设置、运行目录与结果文件读写
"""

from .log_utils import setup_logging
from .run_utils import create_run_dir, save_artifact_json, write_csv, file_sha256, bytes_sha256

__all__ = ['setup_logging', 'create_run_dir', 'save_artifact_json', 'write_csv', 'file_sha256', 'bytes_sha256']
