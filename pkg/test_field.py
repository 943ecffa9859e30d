#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
线方法离散与 PDE 模拟测试
"""

import logging
import math
import os
import sys

import numpy as np
import pytest

# 添加项目根目录到Python路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.errors import BlowUpError, ConfigError, DomainError
from modules.geometry.models import BallSpec, BoxSpec, TimeFn, TimeFnKind, TrackSpec
from modules.dynamics.models import SquareField, ZeroField
from modules.field.field_manager import ManifoldGrid, PdeProblem, field_manager, stable_dt
from modules.field.models import GradientSpec, ManifoldGridSpec, PdeConfigSpec, Section, Topology
from modules.monitor.models import MonitorSeries
from modules.scenarios.catalog import get_scenario

# 配置日志
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)


def c(value):
    return TimeFn.const(value)


def circle(n=256, rho=1.0):
    return ManifoldGridSpec(topology=Topology.CIRCLE, nodes=[n], metric_scale=c(rho))


def interval_track(lower=-1.0, upper=1.0):
    return TrackSpec(main=BoxSpec(lower=[c(lower)], upper=[c(upper)]))


def problem(initial, grid=None, field=None, track=None, horizon=(0.0, 1.0), dt=None, gradient=None):
    spec = PdeConfigSpec(
        grid=grid or circle(),
        field=field or ZeroField(),
        gradient=gradient or GradientSpec(),
        track=track or interval_track(),
        initial=initial,
        horizon=horizon,
        dt=dt,
    )
    return PdeProblem(spec)


def cos_section(grid, t=0.0):
    return Section(values=np.cos(grid.x)[:, None], time=t)


def test_laplacian_examples():
    """Δ cos x = -cos x，ρ=2 时缩放 1/4，常数截面为零"""
    logger.info("测试拉普拉斯...")
    grid = ManifoldGrid(circle(256))
    s = cos_section(grid)
    np.testing.assert_allclose(field_manager.laplacian(grid, 0.0, s).values, -s.values, atol=1e-3)
    scaled = ManifoldGrid(circle(256, rho=2.0))
    np.testing.assert_allclose(field_manager.laplacian(scaled, 0.0, cos_section(scaled)).values,
                               -cos_section(scaled).values / 4.0, atol=2.5e-4)
    const = Section(values=np.full((256, 2), 0.7), time=0.0)
    np.testing.assert_array_equal(field_manager.laplacian(grid, 0.0, const).values, 0.0)


def test_laplacian_grid_refinement():
    """加密一倍网格，热模态误差约缩小 4 倍"""
    errors = []
    for n in (64, 128):
        grid = ManifoldGrid(circle(n))
        s = cos_section(grid)
        errors.append(float(np.max(np.abs(field_manager.laplacian(grid, 0.0, s).values + s.values))))
    assert 3.5 <= errors[0] / errors[1] <= 4.5


def test_laplacian_on_torus():
    grid = ManifoldGrid(ManifoldGridSpec(topology=Topology.TORUS, nodes=[64, 64]))
    s = Section(values=(np.sin(grid.x) * np.cos(grid.y))[..., None], time=0.0)
    np.testing.assert_allclose(field_manager.laplacian(grid, 0.0, s).values, -2.0 * s.values, atol=1e-2)


def test_laplacian_shape_mismatch():
    grid = ManifoldGrid(circle(256))
    with pytest.raises(DomainError):
        field_manager.laplacian(grid, 0.0, Section(values=np.zeros((128, 1)), time=0.0))


def test_gradient_term_examples():
    """u ≡ 0 为零；u¹=1 时 sin → cos；u¹=t 在 t=2 时为 2cos"""
    logger.info("测试梯度项...")
    grid = ManifoldGrid(circle(256))
    s = Section(values=np.sin(grid.x)[:, None], time=0.0)
    np.testing.assert_array_equal(field_manager.gradient_term([], grid, 0.0, s).values, 0.0)
    np.testing.assert_allclose(field_manager.gradient_term(["1"], grid, 0.0, s).values,
                               np.cos(grid.x)[:, None], atol=1e-3)
    np.testing.assert_allclose(field_manager.gradient_term(GradientSpec(components=["t"]), grid, 2.0, s).values,
                               2.0 * np.cos(grid.x)[:, None], atol=2e-3)


def test_step_keeps_constant_section():
    p = problem(["0.5"])
    state = p.initial_section()
    for _ in range(5):
        state = field_manager.step_pde(p, state)
    np.testing.assert_array_equal(state.values, 0.5)


def test_stable_dt_respects_bound():
    grid_spec = circle(256)
    dt = stable_dt(grid_spec, (0.0, 1.0), with_gradient=False)
    bound = ManifoldGrid(grid_spec).dt_bound((0.0, 1.0), with_gradient=False)
    assert dt <= bound
    assert (1.0 / dt) == pytest.approx(round(1.0 / dt))
    assert stable_dt(grid_spec, (0.0, 1.0), with_gradient=True) < dt


def test_dt_over_cfl_is_config_error():
    """dt=1.0 在 N=256 上违反稳定性上界"""
    with pytest.raises(ConfigError) as info:
        problem(["0.9*cos(x)"], dt=1.0)
    assert info.value.path == "dt"
    assert "CFL" in info.value.reason


def test_initial_outside_set_is_config_error():
    with pytest.raises(ConfigError) as info:
        problem(["1.5*cos(x)"])
    assert info.value.path == "initial"


def test_avoidance_not_contained_is_config_error():
    track = TrackSpec(main=BallSpec(center=[c(0.0), c(0.0)], radius=c(1.0)),
                      avoidance=BallSpec(center=[c(0.0), c(0.0)], radius=c(2.0)))
    with pytest.raises(ConfigError) as info:
        problem(["0.1", "0.1"], track=track)
    assert info.value.path == "track.avoidance"


def test_heat_flow_stays_in_interval():
    """S1：扩散保持在 [-1, 1] 内"""
    logger.info("测试 S1 热流...")
    p = PdeProblem(get_scenario("S1").pde)
    final, series = field_manager.run_simulation(p)
    assert max(series.f) <= 1e-8
    assert series.times[0] == 0.0 and series.times[-1] == 1.0
    assert float(np.max(np.abs(final.values))) < 0.9


def test_outward_push_leaves_interval():
    """S5：σ = 1 + t 线性离开"""
    p = PdeProblem(get_scenario("S5").pde)
    _, series = field_manager.run_simulation(p)
    early = [f for t, f in zip(series.times, series.f) if t < 0.1]
    assert max(early) > 0.05
    assert series.f[-1] == pytest.approx(0.1, abs=1e-9)


def test_fisher_kpp_on_torus():
    """S7：环面上 [0, 1] 不变"""
    p = PdeProblem(get_scenario("S7").pde)
    final, series = field_manager.run_simulation(p, record_every=50)
    assert max(series.f) <= 1e-8
    frame = final.to_frame()
    assert list(frame.columns) == ["ix", "iy", "s0"]
    assert len(frame) == 32 * 32


def test_spatially_constant_oracle():
    """空间常数初值：PDE 与纤维 ODE 一致"""
    track = TrackSpec(main=BoxSpec(lower=[c(-10.0)], upper=[TimeFn(kind=TimeFnKind.RECIPROCAL, params=[1.0])]))
    p = problem(["0.5"], grid=circle(16), field=SquareField(), track=track, horizon=(0.0, 0.9))
    final, series = field_manager.run_simulation(p, record_every=1)
    oracle = field_manager.spatially_constant_oracle(p)
    np.testing.assert_allclose(final.values[:, 0], oracle.final[0], rtol=1e-10)
    assert oracle.final[0] == pytest.approx(0.5 / (1.0 - 0.45), abs=1e-4)
    assert max(series.f) == 0.0


def test_simulation_blow_up_keeps_partial_series():
    p = problem(["1"], grid=circle(8), field=SquareField(), track=interval_track(-10.0, 100.0), horizon=(0.0, 2.0))
    with pytest.raises(BlowUpError) as info:
        field_manager.run_simulation(p, record_every=1)
    assert isinstance(info.value.partial, MonitorSeries)
    assert len(info.value.partial) >= 1
    assert info.value.last_time < 2.0


def test_heat_mode_decay_and_refinement():
    """σ₀ = 0.9cos x 到 t=1 接近 0.9e^{-1}cos x，网格加密一倍误差约缩小 4 倍"""
    logger.info("测试热模态衰减...")
    errors = []
    for n in (64, 128):
        p = problem(["0.9*cos(x)"], grid=circle(n))
        final, _ = field_manager.run_simulation(p, record_every=10 ** 6)
        assert final.time == 1.0
        exact = 0.9 * math.exp(-1.0) * np.cos(p.grid.x)
        errors.append(float(np.max(np.abs(final.values[:, 0] - exact))))
    assert errors[1] <= 1.5e-4
    assert 3.5 <= errors[0] / errors[1] <= 4.5


def test_laplacian_sign_at_maximizer():
    """任一单位方向 n 上，n·σ 的极大节点处 n·Δσ <= 0"""
    rng = np.random.default_rng(3)
    grids = [
        ManifoldGrid(circle(64)),
        ManifoldGrid(circle(64, rho=0.5)),
        ManifoldGrid(ManifoldGridSpec(topology=Topology.TORUS, nodes=[16, 16])),
    ]
    for i in range(100):
        grid = grids[i % 3]
        k = 1 + (i // 3) % 3
        s = Section(values=rng.standard_normal(grid.shape + (k,)), time=0.0)
        n = rng.standard_normal(k)
        n /= np.linalg.norm(n)
        node = int(np.argmax(s.flat() @ n))
        lap = field_manager.laplacian(grid, 0.0, s).flat()
        assert float(lap[node] @ n) <= 1e-12


def test_step_commutes_with_circle_rotation():
    """圆周网格平移若干节点后推进一步，与推进后再平移逐位相同"""
    for name in ("S3", "S6"):
        p = PdeProblem(get_scenario(name).pde)
        state = p.initial_section()
        shifted = Section(values=np.roll(state.values, 37, axis=0), time=state.time)
        np.testing.assert_array_equal(field_manager.step_pde(p, shifted).values,
                                      np.roll(field_manager.step_pde(p, state).values, 37, axis=0))


def test_section_frame_on_circle():
    s = Section(values=np.zeros((8, 2)), time=0.0)
    frame = s.to_frame()
    assert list(frame.columns) == ["node", "s0", "s1"]


def main():
    """主测试函数"""
    logger.info("开始测试线方法模块...")

    tests = [
        ("拉普拉斯", test_laplacian_examples),
        ("网格加密", test_laplacian_grid_refinement),
        ("梯度项", test_gradient_term_examples),
        ("常数截面", test_step_keeps_constant_section),
        ("CFL", test_dt_over_cfl_is_config_error),
        ("S1 热流", test_heat_flow_stays_in_interval),
        ("S5 外推", test_outward_push_leaves_interval),
        ("空间常数参照", test_spatially_constant_oracle),
        ("热模态", test_heat_mode_decay_and_refinement),
        ("极大点符号", test_laplacian_sign_at_maximizer),
        ("平移交换", test_step_commutes_with_circle_rotation),
    ]

    results = []
    for test_name, test_func in tests:
        logger.info(f"\n=== {test_name} ===")
        try:
            test_func()
            results.append((test_name, True))
        except Exception as e:
            logger.error(f"{test_name} 失败: {e}")
            results.append((test_name, False))

    passed = sum(1 for _, result in results if result)
    logger.info(f"\n测试完成: {passed}/{len(results)} 通过")


if __name__ == "__main__":
    main()
