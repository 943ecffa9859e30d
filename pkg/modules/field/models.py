import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.config import config_manager
from utils.expressions import compile_expression
from modules.geometry.models import TimeFn, TrackSpec
from modules.dynamics.models import ReactionFieldSpec

MIN_NODES = config_manager.getint('field', 'min_nodes', 8)
SPATIAL_VARIABLES = ("x", "y")
GRADIENT_VARIABLES = ("x", "y", "t")


class Topology(str, enum.Enum):
    """底流形类型"""
    CIRCLE = "circle"
    TORUS = "torus"


class ManifoldGridSpec(BaseModel):
    """周期网格：圆周 N 个节点或环面 Nx x Ny 个节点，周期 2π

    度量 g(t) = ρ(t)^2 · 平坦度量，ρ 由 metric_scale 给出。
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    topology: Topology = Topology.CIRCLE
    nodes: List[int]
    metric_scale: TimeFn = Field(default_factory=lambda: TimeFn.const(1.0))

    @model_validator(mode="after")
    def _nodes(self):
        expected = 1 if self.topology == Topology.CIRCLE else 2
        if len(self.nodes) != expected:
            raise ValueError(f"{self.topology.value} 需要 {expected} 个节点数，实际 {len(self.nodes)}")
        if any(n < MIN_NODES for n in self.nodes):
            raise ValueError(f"每个方向的节点数必须 >= {MIN_NODES}")
        return self

    @property
    def dims(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.nodes)

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(2.0 * np.pi / n for n in self.nodes)


class GradientSpec(BaseModel):
    """对角梯度项系数 u^i(x, t)，每个网格方向一个表达式；空表示 u ≡ 0"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    components: List[str] = Field(default_factory=list)

    @field_validator("components")
    @classmethod
    def _compile(cls, v):
        for text in v:
            compile_expression(text, GRADIENT_VARIABLES)
        return v

    @property
    def is_zero(self) -> bool:
        return all(compile_expression(text, GRADIENT_VARIABLES).expr == 0 for text in self.components)


class PdeConfigSpec(BaseModel):
    """反应扩散方程配置"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    grid: ManifoldGridSpec
    field: ReactionFieldSpec
    gradient: GradientSpec = Field(default_factory=GradientSpec)
    track: TrackSpec
    initial: List[str] = Field(..., min_length=1)
    horizon: Tuple[float, float]
    dt: Optional[float] = Field(default=None, gt=0)
    representative_point: List[float] = Field(default_factory=lambda: [0.0, 0.0])

    @field_validator("initial")
    @classmethod
    def _compile_initial(cls, v):
        for text in v:
            compile_expression(text, SPATIAL_VARIABLES)
        return v

    @field_validator("horizon")
    @classmethod
    def _horizon(cls, v):
        if not v[0] < v[1]:
            raise ValueError(f"horizon 必须满足 t_start < t_end，实际 {list(v)}")
        return v

    @model_validator(mode="after")
    def _dims(self):
        k = self.track.main.fiber_dim
        if len(self.initial) != k:
            raise ValueError(f"initial 需要 {k} 个分量表达式，实际 {len(self.initial)}")
        if self.field.fiber_dim is not None and self.field.fiber_dim != k:
            raise ValueError(f"反应场维数 {self.field.fiber_dim} 与凸集维数 {k} 不一致")
        if self.gradient.components and len(self.gradient.components) != self.grid.dims:
            raise ValueError(f"gradient 需要 {self.grid.dims} 个分量，实际 {len(self.gradient.components)}")
        return self

    @property
    def fiber_dim(self) -> int:
        return self.track.main.fiber_dim


@dataclass
class Section:
    """网格上每个节点一个纤维向量：values 形状为 (*grid_shape, k)"""
    values: np.ndarray
    time: float

    @property
    def fiber_dim(self) -> int:
        return self.values.shape[-1]

    def flat(self) -> np.ndarray:
        """按节点展平为 (节点数, k)，节点序为 C 序"""
        return self.values.reshape(-1, self.fiber_dim)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def to_frame(self) -> pd.DataFrame:
        """导出为表：圆周为 node 列，环面为 ix, iy 列，随后是各分量"""
        grid_shape = self.values.shape[:-1]
        data = {}
        if len(grid_shape) == 1:
            data['node'] = np.arange(grid_shape[0])
        else:
            ix, iy = np.meshgrid(np.arange(grid_shape[0]), np.arange(grid_shape[1]), indexing='ij')
            data['ix'] = ix.reshape(-1)
            data['iy'] = iy.reshape(-1)
        flat = self.flat()
        for i in range(self.fiber_dim):
            data[f"s{i}"] = flat[:, i]
        return pd.DataFrame(data)
