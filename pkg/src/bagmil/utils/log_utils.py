#!/usr/bin/env python3
"""
日志设置
控制台输出到stderr，可选写入日志文件
"""

import sys
import logging
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

_HANDLER_TAG = '_bagmil_handler'


def setup_logging(level: Union[str, int] = 'INFO', log_file: Optional[Union[str, Path]] = None) -> logging.Logger:
    """
    设置日志配置

    Args:
        level: 日志级别
        log_file: 日志文件路径，为None时只输出到控制台

    Returns:
        bagmil 根 logger
    """
    logger = logging.getLogger('bagmil')
    logger.setLevel(level)
    logger.propagate = False

    formatter = logging.Formatter(LOG_FORMAT)

    # 避免重复添加 handler
    for handler in list(logger.handlers):
        if getattr(handler, _HANDLER_TAG, False):
            logger.removeHandler(handler)
            handler.close()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    setattr(console_handler, _HANDLER_TAG, True)
    logger.addHandler(console_handler)

    if log_file is not None:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path, encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        setattr(file_handler, _HANDLER_TAG, True)
        logger.addHandler(file_handler)

    return logger
