import logging
import math
from typing import List

from modules.geometry.models import (
    BallSpec, BoxSpec, CapSpec, EllipsoidSpec, TimeFn, TimeFnKind, TrackSpec,
)
from modules.dynamics.models import (
    ConstantField, ExpressionField, RadialBumpField, RotationField, SquareField, ZeroField,
)
from modules.field.models import GradientSpec, ManifoldGridSpec, PdeConfigSpec, Topology
from modules.field.field_manager import stable_dt
from modules.cli.models import ExpectedVerdict, RunConfig, ToleranceSpec

logger = logging.getLogger(__name__)

# 内置场景即 RunConfig
Scenario = RunConfig

ALL_PASS = ExpectedVerdict(hypothesis_ok=True, containment_ok=True, avoidance_ok=True, gronwall_ok=True)


def _c(value: float) -> TimeFn:
    return TimeFn.const(value)


def _sin(a: float, b: float, omega: float, phase: float) -> TimeFn:
    return TimeFn(kind=TimeFnKind.SINUSOID, params=[a, b, omega, phase])


def _pde(grid: ManifoldGridSpec, field, track: TrackSpec, initial: List[str], horizon,
         gradient: GradientSpec = None, **kwargs) -> PdeConfigSpec:
    gradient = gradient or GradientSpec()
    with_gradient = bool(gradient.components) and not gradient.is_zero
    dt = stable_dt(grid, horizon, with_gradient)
    return PdeConfigSpec(grid=grid, field=field, gradient=gradient, track=track, initial=initial,
                         horizon=horizon, dt=dt, **kwargs)


def _circle(n: int, metric_scale: TimeFn = None) -> ManifoldGridSpec:
    if metric_scale is None:
        return ManifoldGridSpec(topology=Topology.CIRCLE, nodes=[n])
    return ManifoldGridSpec(topology=Topology.CIRCLE, nodes=[n], metric_scale=metric_scale)


def _unit_box() -> TrackSpec:
    return TrackSpec(main=BoxSpec(lower=[_c(-1.0)], upper=[_c(1.0)]))


def _s1() -> RunConfig:
    return RunConfig(
        name="S1",
        description="静态区间上的热流：F=0，K=[-1,1]，σ₀=0.9cos x",
        provenance="凸包性质：扩散不会离开初值的凸包",
        pde=_pde(_circle(256), ZeroField(), _unit_box(), ["0.9*cos(x)"], (0.0, 1.0)),
        tolerances=ToleranceSpec(tol_contain=1e-8),
        expected=ALL_PASS,
    )


def _s2() -> RunConfig:
    # 上界 b(t) = 1/(1-t) 满足 db/dt = b^2
    track = TrackSpec(main=BoxSpec(lower=[_c(-10.0)], upper=[TimeFn(kind=TimeFnKind.RECIPROCAL, params=[1.0])]))
    return RunConfig(
        name="S2",
        description="爆破界：F=σ²，K(t)=[-10, 1/(1-t)]，σ₀=0.5+0.3cos x",
        provenance="附加变量 r 满足 ∂r/∂t = Δr + r²，其空间常数解为 1/(T*-t)，T*=1",
        pde=_pde(_circle(256), SquareField(), track, ["0.5 + 0.3*cos(x)"], (0.0, 0.9)),
        expected=ALL_PASS,
    )


def _s3() -> RunConfig:
    # Q(t) = R(t) diag(1, 4) R(t)^T
    shape = [
        [_sin(2.5, 1.5, 2.0, -math.pi / 2.0), _sin(0.0, -1.5, 2.0, 0.0)],
        [_sin(0.0, -1.5, 2.0, 0.0), _sin(2.5, 1.5, 2.0, math.pi / 2.0)],
    ]
    track = TrackSpec(main=EllipsoidSpec(center=[_c(0.0), _c(0.0)], shape=shape))
    return RunConfig(
        name="S3",
        description="旋转椭球：F=旋转(ω=1)，K(t) 为 diag(1,4) 椭球旋转角 t",
        provenance="旋转场与集合同步旋转，边界上的反应向量与边界相切",
        pde=_pde(_circle(256), RotationField(omega=1.0), track, ["0.8*cos(x)", "0.32*sin(x)"], (0.0, 1.0)),
        expected=ALL_PASS,
    )


def _s4() -> RunConfig:
    track = TrackSpec(
        main=BallSpec(center=[_c(0.0), _c(0.0)], radius=_c(1.0)),
        avoidance=CapSpec(center=[_c(0.0), _c(0.0)], radius=_c(1.0), direction=[1.0, 0.0], threshold=_c(0.8)),
    )
    field = RadialBumpField(strength=1.0, direction=[1.0, 0.0], threshold=0.8, width=0.1)
    theta = "pi + pi/2*cos(x)"
    return RunConfig(
        name="S4",
        description="回避球冠：F 为支撑在球冠上的径向推力，A(t)={v∈K: v·e₁>=0.8}",
        provenance="切锥条件只在回避轨道上失败，回避集外的条件足以保证包含与回避",
        pde=_pde(_circle(256), field, track, [f"0.8*cos({theta})", f"0.8*sin({theta})"], (0.0, 1.0)),
        tolerances=ToleranceSpec(epsilon_avoid=0.1, margin_floor=0.3),
        expected=ALL_PASS,
    )


def _s5() -> RunConfig:
    return RunConfig(
        name="S5",
        description="向外推的失败例：F=+1，K=[-1,1]，σ₀≡1",
        provenance="精确解 σ=1+t 线性离开 [-1,1]",
        pde=_pde(_circle(128), ConstantField(value=[1.0]), _unit_box(), ["1"], (0.0, 0.1)),
        expected=ExpectedVerdict(hypothesis_ok=False, containment_ok=False, avoidance_ok=True, gronwall_ok=False),
    )


def _s6() -> RunConfig:
    return RunConfig(
        name="S6",
        description="时变度量：同 S1，ρ(t)=1+0.5 sin t，u¹=0.1",
        provenance="扩散加标量输运，值保持在初值凸包内",
        pde=_pde(_circle(256, _sin(1.0, 0.5, 1.0, 0.0)), ZeroField(), _unit_box(), ["0.9*cos(x)"], (0.0, 1.0),
                 gradient=GradientSpec(components=["0.1"])),
        expected=ALL_PASS,
    )


def _s7() -> RunConfig:
    grid = ManifoldGridSpec(topology=Topology.TORUS, nodes=[32, 32])
    track = TrackSpec(main=BoxSpec(lower=[_c(0.0)], upper=[_c(1.0)]))
    return RunConfig(
        name="S7",
        description="环面 Fisher-KPP：F=s0(1-s0)，K=[0,1]，σ₀=0.5+0.4 sin x cos y",
        provenance="F 在区间端点为零，[0,1] 为不变集",
        pde=_pde(grid, ExpressionField(components=["s0*(1 - s0)"]), track, ["0.5 + 0.4*sin(x)*cos(y)"], (0.0, 1.0)),
        expected=ALL_PASS,
    )


def catalog() -> List[RunConfig]:
    """内置场景，顺序固定"""
    return [_s1(), _s2(), _s3(), _s4(), _s5(), _s6(), _s7()]


def get_scenario(name: str) -> RunConfig:
    """按名称取场景

    Raises:
        KeyError: 名称不存在
    """
    for scenario in catalog():
        if scenario.name == name:
            return scenario
    raise KeyError(f"未知场景: {name}，可用: {[s.name for s in catalog()]}")
