#!/usr/bin/env python3
"""
核心模块
提供运行配置与异常定义
"""

from .exceptions import (
    BagMilError,
    InputDataError,
    DataFormatError,
    DataConsistencyError,
    ConfigError,
    GenerationError,
    CompatibilityError,
    MigrationError,
    NumericAbortError,
    DimensionError,
    ContractError,
)
from .config import RunConfig, load_config, save_config, config_hash

__all__ = [
    'BagMilError', 'InputDataError', 'DataFormatError', 'DataConsistencyError', 'ConfigError',
    'GenerationError', 'CompatibilityError', 'MigrationError', 'NumericAbortError',
    'DimensionError', 'ContractError',
    'RunConfig', 'load_config', 'save_config', 'config_hash',
]
