from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.config import config_manager
from modules.field.models import PdeConfigSpec


class SamplingSpec(BaseModel):
    """ODE 检验的抽样设置"""
    model_config = ConfigDict(extra="forbid")

    n_space_samples: int = Field(default=config_manager.getint('dynamics', 'n_space_samples', 256), ge=1)
    n_time_samples: int = Field(default=config_manager.getint('dynamics', 'n_time_samples', 64), ge=1)
    n_starts: int = Field(default=config_manager.getint('dynamics', 'n_starts', 16), ge=1)
    ode_dt: float = Field(default=config_manager.getfloat('dynamics', 'ode_dt', 1e-4), gt=0)
    seed: int = 0
    jitter: bool = False


class ToleranceSpec(BaseModel):
    """容差覆盖；未给出时使用默认值"""
    model_config = ConfigDict(extra="forbid")

    tol_contain: Optional[float] = Field(default=None, gt=0)
    c_tol: float = Field(default=config_manager.getfloat('field', 'c_tol', 10.0), gt=0)
    tol_ode: float = Field(default=config_manager.getfloat('dynamics', 'tol_ode', 1e-5), gt=0)
    epsilon_avoid: float = Field(default=0.0, ge=0)
    margin_floor: Optional[float] = Field(default=None, ge=0)

    def resolved_margin_floor(self) -> float:
        """默认 3ε"""
        return self.margin_floor if self.margin_floor is not None else 3.0 * self.epsilon_avoid


class ExpectedVerdict(BaseModel):
    """期望判定；None 表示不作要求"""
    model_config = ConfigDict(extra="forbid")

    hypothesis_ok: Optional[bool] = None
    containment_ok: Optional[bool] = None
    avoidance_ok: Optional[bool] = None
    gronwall_ok: Optional[bool] = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.hypothesis_ok is False and self.containment_ok is True:
            raise ValueError("切锥假设不成立时不能要求包含性通过")
        return self

    def compare(self, actual: Dict[str, Optional[bool]]) -> Dict[str, bool]:
        """逐项比较，只返回有期望的项"""
        return {key: actual.get(key) == want for key, want in self.model_dump().items() if want is not None}


class RunConfig(BaseModel):
    """一次运行的完整配置（也是内置场景的序列化形式）"""
    model_config = ConfigDict(extra="forbid")

    name: str
    description: str = ""
    provenance: str = ""
    pde: PdeConfigSpec
    ode_only: bool = False
    record_every: int = Field(default=config_manager.getint('field', 'record_every', 10), ge=1)
    output_dir: str = "output"
    sampling: SamplingSpec = Field(default_factory=SamplingSpec)
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)
    expected: ExpectedVerdict = Field(default_factory=ExpectedVerdict)
