from dataclasses import dataclass
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.expressions import compile_expression
from modules.geometry.models import ConeVerdict, TimeFn, MAX_FIBER_DIM

# 表达式场中可用的变量
FIBER_SYMBOLS = tuple(f"s{i}" for i in range(MAX_FIBER_DIM))


class _FieldBase(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def fiber_dim(self) -> Optional[int]:
        """要求的纤维维数，None 表示任意"""
        return None


class ZeroField(_FieldBase):
    """F = 0"""
    kind: Literal["zero"] = "zero"


class SquareField(_FieldBase):
    """逐分量平方 F(σ) = σ^2"""
    kind: Literal["square"] = "square"


class ConstantField(_FieldBase):
    """常向量场 F = c"""
    kind: Literal["constant"] = "constant"
    value: List[float] = Field(..., min_length=1, max_length=MAX_FIBER_DIM)

    @property
    def fiber_dim(self):
        return len(self.value)


class LinearField(_FieldBase):
    """线性场 F(σ, t) = A(t) σ"""
    kind: Literal["linear"] = "linear"
    matrix: List[List[TimeFn]]

    @model_validator(mode="after")
    def _square(self):
        k = len(self.matrix)
        if not 1 <= k <= MAX_FIBER_DIM or any(len(row) != k for row in self.matrix):
            raise ValueError("matrix 必须是 k x k 矩阵，1 <= k <= 4")
        return self

    @property
    def fiber_dim(self):
        return len(self.matrix)


class RotationField(_FieldBase):
    """平面旋转 F(σ) = ω(-σ2, σ1)，仅 k=2"""
    kind: Literal["rotation"] = "rotation"
    omega: float = 1.0

    @property
    def fiber_dim(self):
        return 2


class RadialBumpField(_FieldBase):
    """光滑开关的定向推力 F(σ) = β S((σ·d - θ)/w) d"""
    kind: Literal["radial_bump"] = "radial_bump"
    strength: float
    direction: List[float] = Field(..., min_length=1, max_length=MAX_FIBER_DIM)
    threshold: float
    width: float = Field(..., gt=0)

    @field_validator("direction")
    @classmethod
    def _nonzero(cls, v):
        if float(np.linalg.norm(v)) == 0.0:
            raise ValueError("direction 不能为零向量")
        return v

    @property
    def fiber_dim(self):
        return len(self.direction)


class ExpressionField(_FieldBase):
    """表达式场：每个纤维分量一个表达式，变量 s0..s3, x, y, t"""
    kind: Literal["expression"] = "expression"
    components: List[str] = Field(..., min_length=1, max_length=MAX_FIBER_DIM)

    @model_validator(mode="after")
    def _compile(self):
        k = len(self.components)
        allowed = FIBER_SYMBOLS[:k] + ("x", "y", "t")
        for text in self.components:
            compile_expression(text, allowed)
        return self

    @property
    def fiber_dim(self):
        return len(self.components)


ReactionFieldSpec = Annotated[
    Union[ZeroField, SquareField, ConstantField, LinearField, RotationField, RadialBumpField, ExpressionField],
    Field(discriminator="kind"),
]


@dataclass
class Trajectory:
    """纤维 ODE 的解轨迹"""
    times: np.ndarray
    values: np.ndarray
    dt: float
    error_estimate: float = 0.0

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


class HypothesisSample(BaseModel):
    """一个边界样本 (v, t) 的判定"""
    model_config = ConfigDict(extra="forbid")

    point: List[float]
    time: float
    verdict: Optional[ConeVerdict] = None
    excluded_by_avoidance: bool = False


class HypothesisReport(BaseModel):
    """ODE 切锥条件检验报告"""
    model_config = ConfigDict(extra="forbid")

    samples: List[HypothesisSample]
    holds_everywhere_tested: bool
    failure_locus: List[HypothesisSample]
    n_space_samples: int
    n_time_samples: int
    time_grid: List[float]
    static: bool = False
    tested: int = 0
    excluded: int = 0
    inconclusive: int = 0

    @property
    def decisive_failure(self) -> bool:
        return len(self.failure_locus) > 0


class ExitEvent(BaseModel):
    """轨迹首次离开 K 或首次进入 A 的事件"""
    model_config = ConfigDict(extra="forbid")

    start: List[float]
    time: float


class PreservationReport(BaseModel):
    """ODE 保持性检验报告"""
    model_config = ConfigDict(extra="forbid")

    max_excursion: float
    first_exit: Optional[ExitEvent] = None
    first_entry: Optional[ExitEvent] = None
    starts: List[List[float]] = Field(default_factory=list)
    excursions: List[float] = Field(default_factory=list)
    skipped_in_avoidance: int = 0
    dt: float
    tol_ode: float
