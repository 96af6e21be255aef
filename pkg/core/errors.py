"""
SliceTex异常定义

所有模块抛出的错误都继承 SliceTexError，便于CLI统一映射退出码
"""

from typing import Any, Dict, Optional


class SliceTexError(Exception):
    """SliceTex基础异常"""


class InvalidArgumentError(SliceTexError, ValueError):
    """参数非法（尺寸不匹配、数量为0、图像过小等）"""


class ConfigError(SliceTexError):
    """配置错误（层标签不存在、权重校验失败、配置项非法）"""


class NumericalError(SliceTexError, ArithmeticError):
    """数值异常，可附带优化轨迹和诊断信息"""

    def __init__(self, message: str, trace: Any = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.trace = trace
        self.diagnostics = diagnostics or {}


class FeatureDisabledError(SliceTexError):
    """可选后端不可用"""


class UsageError(SliceTexError):
    """命令行用法错误，退出码2"""
