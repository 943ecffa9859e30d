import os
from datetime import datetime
from typing import Any, Dict


def new_error_id() -> str:
    """生成错误编号（时间戳 + 随机十六进制）"""
    return f"{datetime.now().strftime('%Y%m%d%H%M%S')}_{os.urandom(4).hex()}"


class LabError(Exception):
    """实验室异常基类"""

    kind = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message
        self.error_id = new_error_id()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.kind,
            "detail": self.message,
            "error_id": self.error_id,
        }


class DomainError(LabError):
    """前置条件不满足（时间越界、点不在边界上、形状不匹配等）"""

    kind = "domain"


class NumericError(LabError):
    """数值迭代不收敛"""

    kind = "numeric"

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class BlowUpError(LabError):
    """积分过程中出现非有限值"""

    kind = "blow_up"

    def __init__(self, message: str, last_time: float, last_state: Any = None, partial: Any = None):
        super().__init__(f"{message} (last finite t={last_time:.6g})")
        self.last_time = last_time
        self.last_state = last_state
        # 部分结果（报告或监控序列）
        self.partial = partial


class ConfigError(LabError):
    """配置错误，带出错路径"""

    kind = "config"

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["path"] = self.path
        data["reason"] = self.reason
        return data
