#!/usr/bin/env python3
"""
异常定义
每个异常类携带命令行退出码：0成功，2输入/数据错误，3生成错误，4兼容性错误，5数值中止
"""

from typing import Any, Dict, Optional


class BagMilError(Exception):
    """bagmil 所有异常的基类"""

    exit_code = 1


class DimensionError(BagMilError, ValueError):
    """张量形状不匹配"""


class ContractError(BagMilError, ValueError):
    """调用前置条件不满足"""


class InputDataError(BagMilError):
    """输入文件或数据问题"""

    exit_code = 2


class DataFormatError(InputDataError):
    """文件格式错误（魔数错误、截断、损坏）"""


class DataConsistencyError(InputDataError):
    """数据内部不一致（例如图像数与标签数不同）"""


class ConfigError(InputDataError):
    """配置无效"""


class GenerationError(BagMilError):
    """包生成规格无法满足"""

    exit_code = 3


class CompatibilityError(BagMilError):
    """检查点与任务/池化方式不兼容"""

    exit_code = 4


class MigrationError(CompatibilityError):
    """检查点版本不匹配"""


class NumericAbortError(BagMilError):
    """出现非有限数值，训练中止"""

    exit_code = 5

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"
