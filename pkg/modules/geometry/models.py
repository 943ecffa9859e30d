import enum
import math
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

MAX_FIBER_DIM = 4


class TimeFnKind(str, enum.Enum):
    """时间函数类型枚举"""
    CONSTANT = "constant"
    LINEAR = "linear"
    RECIPROCAL = "reciprocal"
    SINUSOID = "sinusoid"
    POLYNOMIAL = "polynomial"


# 各类型参数个数范围
_PARAM_COUNTS = {
    TimeFnKind.CONSTANT: (1, 1),
    TimeFnKind.LINEAR: (2, 2),
    TimeFnKind.RECIPROCAL: (1, 3),
    TimeFnKind.SINUSOID: (4, 4),
    TimeFnKind.POLYNOMIAL: (1, 16),
}


class TimeFn(BaseModel):
    """时间函数

    constant [c]: c
    linear [a, b]: a + b*t
    reciprocal [T*, scale=1, offset=0]: scale/(T* - t) + offset
    sinusoid [a, b, w, phi]: a + b*sin(w*t + phi)
    polynomial [c0, c1, ...]: sum c_i t^i

    JSON 中可以直接写数字，表示常数。
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: TimeFnKind = TimeFnKind.CONSTANT
    params: List[float]

    @model_validator(mode="before")
    @classmethod
    def _accept_number(cls, data):
        if isinstance(data, (int, float)) and not isinstance(data, bool):
            return {"kind": TimeFnKind.CONSTANT, "params": [float(data)]}
        return data

    @model_validator(mode="after")
    def _check_params(self):
        low, high = _PARAM_COUNTS[self.kind]
        if not low <= len(self.params) <= high:
            raise ValueError(f"{self.kind.value} 需要 {low}..{high} 个参数，实际 {len(self.params)}")
        if not all(math.isfinite(p) for p in self.params):
            raise ValueError("参数必须为有限实数")
        return self

    @classmethod
    def const(cls, c: float) -> "TimeFn":
        return cls(kind=TimeFnKind.CONSTANT, params=[float(c)])

    def value(self, t):
        """在 t 处求值（标量或数组）"""
        p = self.params
        if self.kind == TimeFnKind.CONSTANT:
            return p[0] + 0.0 * np.asarray(t, dtype=float)
        if self.kind == TimeFnKind.LINEAR:
            return p[0] + p[1] * np.asarray(t, dtype=float)
        if self.kind == TimeFnKind.RECIPROCAL:
            t_star = p[0]
            scale = p[1] if len(p) > 1 else 1.0
            offset = p[2] if len(p) > 2 else 0.0
            return scale / (t_star - np.asarray(t, dtype=float)) + offset
        if self.kind == TimeFnKind.SINUSOID:
            return p[0] + p[1] * np.sin(p[2] * np.asarray(t, dtype=float) + p[3])
        # 多项式：numpy 需要高次在前
        return np.polyval(list(reversed(p)), np.asarray(t, dtype=float))

    def derivative(self, t):
        """在 t 处的导数"""
        p = self.params
        t = np.asarray(t, dtype=float)
        if self.kind == TimeFnKind.CONSTANT:
            return 0.0 * t
        if self.kind == TimeFnKind.LINEAR:
            return p[1] + 0.0 * t
        if self.kind == TimeFnKind.RECIPROCAL:
            scale = p[1] if len(p) > 1 else 1.0
            return scale / (p[0] - t) ** 2
        if self.kind == TimeFnKind.SINUSOID:
            return p[1] * p[2] * np.cos(p[2] * t + p[3])
        coeffs = list(reversed(p))
        return np.polyval(np.polyder(coeffs), t) if len(coeffs) > 1 else 0.0 * t

    def check_domain(self, horizon: Tuple[float, float]):
        """检查在时间区间上有定义且有限"""
        if self.kind == TimeFnKind.RECIPROCAL:
            t_star = self.params[0]
            if horizon[0] <= t_star <= horizon[1]:
                raise ValueError(f"reciprocal 的奇点 T*={t_star} 落在区间 {list(horizon)} 内")


class _SetSpecBase(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    def time_functions(self) -> List[TimeFn]:
        raise NotImplementedError

    def check_domain(self, horizon: Tuple[float, float]):
        for fn in self.time_functions():
            fn.check_domain(horizon)


class BallSpec(_SetSpecBase):
    """球 Ball(center, radius)"""
    variant: Literal["ball"] = "ball"
    center: List[TimeFn]
    radius: TimeFn

    @property
    def fiber_dim(self) -> int:
        return len(self.center)

    def time_functions(self):
        return [*self.center, self.radius]


class BoxSpec(_SetSpecBase):
    """盒子 Box(lower, upper)，逐坐标"""
    variant: Literal["box"] = "box"
    lower: List[TimeFn]
    upper: List[TimeFn]

    @model_validator(mode="after")
    def _same_length(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower 与 upper 维数不一致")
        return self

    @property
    def fiber_dim(self) -> int:
        return len(self.lower)

    def time_functions(self):
        return [*self.lower, *self.upper]


class HalfSpaceSpec(BaseModel):
    """半空间 normal . v <= offset"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    normal: List[TimeFn]
    offset: TimeFn


class PolytopeSpec(_SetSpecBase):
    """多面体，由半空间约束给出"""
    variant: Literal["polytope"] = "polytope"
    constraints: List[HalfSpaceSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _same_length(self):
        dims = {len(c.normal) for c in self.constraints}
        if len(dims) != 1:
            raise ValueError("约束法向量维数不一致")
        return self

    @property
    def fiber_dim(self) -> int:
        return len(self.constraints[0].normal)

    def time_functions(self):
        fns = []
        for c in self.constraints:
            fns.extend(c.normal)
            fns.append(c.offset)
        return fns


class EllipsoidSpec(_SetSpecBase):
    """椭球 {v : (v-c)^T Q (v-c) <= 1}，Q 为对称正定形状矩阵"""
    variant: Literal["ellipsoid"] = "ellipsoid"
    center: List[TimeFn]
    shape: List[List[TimeFn]]

    @model_validator(mode="after")
    def _square(self):
        k = len(self.center)
        if len(self.shape) != k or any(len(row) != k for row in self.shape):
            raise ValueError("shape 必须是 k x k 矩阵")
        return self

    @property
    def fiber_dim(self) -> int:
        return len(self.center)

    def time_functions(self):
        return [*self.center, *[fn for row in self.shape for fn in row]]


class CapSpec(_SetSpecBase):
    """球冠 Ball(center, radius) ∩ {v : direction . v >= threshold}"""
    variant: Literal["cap"] = "cap"
    center: List[TimeFn]
    radius: TimeFn
    direction: List[float]
    threshold: TimeFn

    @model_validator(mode="after")
    def _direction(self):
        if len(self.direction) != len(self.center):
            raise ValueError("direction 与 center 维数不一致")
        if float(np.linalg.norm(self.direction)) == 0.0:
            raise ValueError("direction 不能为零向量")
        return self

    @property
    def fiber_dim(self) -> int:
        return len(self.center)

    def time_functions(self):
        return [*self.center, self.radius, self.threshold]


ConvexSetSpec = Annotated[
    Union[BallSpec, BoxSpec, PolytopeSpec, EllipsoidSpec, CapSpec],
    Field(discriminator="variant"),
]


def check_fiber_dim(spec) -> int:
    k = spec.fiber_dim
    if not 1 <= k <= MAX_FIBER_DIM:
        raise ValueError(f"纤维维数 k={k} 超出范围 1..{MAX_FIBER_DIM}")
    return k


class TrackSpec(BaseModel):
    """时空轨道配置：主凸集族与可选的回避集族"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    main: ConvexSetSpec
    avoidance: Optional[ConvexSetSpec] = None

    @model_validator(mode="after")
    def _dims(self):
        k = check_fiber_dim(self.main)
        if self.avoidance is not None and self.avoidance.fiber_dim != k:
            raise ValueError("avoidance 与 main 的纤维维数不一致")
        return self


class ConeVerdictValue(str, enum.Enum):
    """时间类切锥判定值"""
    MEMBER = "Member"
    NON_MEMBER = "NonMember"
    INCONCLUSIVE = "Inconclusive"


class ConeVerdict(BaseModel):
    """切锥判定结果及商序列证据 q_k"""
    model_config = ConfigDict(extra="forbid")

    value: ConeVerdictValue
    evidence: List[float] = Field(default_factory=list)
    schedule: List[float] = Field(default_factory=list)
    threshold: Optional[float] = None

    @field_validator("evidence", "schedule", mode="before")
    @classmethod
    def _to_list(cls, v):
        return [float(x) for x in v]

    @property
    def is_member(self) -> bool:
        return self.value == ConeVerdictValue.MEMBER

    @property
    def is_non_member(self) -> bool:
        return self.value == ConeVerdictValue.NON_MEMBER
