from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field


@dataclass
class MonitorSeries:
    """监控序列：f(t)、极大点、回避间距、Dini 估计与标记"""
    times: List[float] = field(default_factory=list)
    f: List[float] = field(default_factory=list)
    argmax: List[int] = field(default_factory=list)
    margins: Optional[List[float]] = None
    dini: List[float] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        """记录间隔（中位数）"""
        if len(self.times) < 2:
            return 0.0
        return float(np.median(np.diff(self.times)))

    @property
    def max_f(self) -> float:
        return float(max(self.f)) if self.f else 0.0

    @property
    def min_margin(self) -> Optional[float]:
        return float(min(self.margins)) if self.margins else None

    def add_flag(self, j: int, flag: str):
        self.flags[j] = f"{self.flags[j]};{flag}" if self.flags[j] else flag

    def to_frame(self) -> pd.DataFrame:
        """导出为表，列 t, f, argmax_node, margin, dini, flags"""
        n = len(self.times)
        return pd.DataFrame({
            't': self.times,
            'f': self.f,
            'argmax_node': self.argmax,
            'margin': self.margins if self.margins is not None else [np.nan] * n,
            'dini': self.dini if len(self.dini) == n else [np.nan] * n,
            'flags': self.flags if len(self.flags) == n else [''] * n,
        })


@dataclass
class DiniOfSup:
    """上确界函数的 Dini 导数与极大集上 ∂g/∂t 的最大值"""
    times: np.ndarray
    f: np.ndarray
    dini: np.ndarray
    argmax_derivative: np.ndarray

    def violations(self, slack: float) -> np.ndarray:
        """d⁺f > max ∂g/∂t + slack 的时刻下标"""
        return np.where(self.dini > self.argmax_derivative + slack)[0]

    def holds(self, slack: float) -> bool:
        return len(self.violations(slack)) == 0


class ProbeReport(BaseModel):
    """半连续性探测结果"""
    model_config = ConfigDict(extra="forbid")

    right_continuity_flags: List[int] = Field(default_factory=list)
    left_lsc_flags: List[int] = Field(default_factory=list)
    jump_tol: float
    lipschitz: float

    @property
    def is_empty(self) -> bool:
        return not self.right_continuity_flags and not self.left_lsc_flags


class TheoremVerdict(BaseModel):
    """定理层面的判定：四个布尔量与细节"""
    model_config = ConfigDict(extra="forbid")

    hypothesis_ok: Optional[bool] = None
    containment_ok: bool
    avoidance_ok: bool
    gronwall_ok: bool
    details: Dict[str, Any] = Field(default_factory=dict)

    def verdicts(self) -> Dict[str, Optional[bool]]:
        return {
            'hypothesis_ok': self.hypothesis_ok,
            'containment_ok': self.containment_ok,
            'avoidance_ok': self.avoidance_ok,
            'gronwall_ok': self.gronwall_ok,
        }
