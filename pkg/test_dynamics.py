#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
纤维 ODE 与 ODE 层面切锥条件测试
"""

import logging
import math
import os
import sys

import numpy as np
import pytest
from pydantic import ValidationError

# 添加项目根目录到Python路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.errors import BlowUpError, DomainError
from modules.geometry.geometry_manager import ConvexFamily, SpaceTimeTrack
from modules.geometry.models import BallSpec, BoxSpec, CapSpec, TimeFn, TimeFnKind
from modules.dynamics.dynamics_manager import dynamics_manager, time_grid
from modules.dynamics.models import (
    ConstantField, ExpressionField, LinearField, RadialBumpField, RotationField, SquareField, ZeroField,
)
from modules.dynamics.reaction import ReactionField, smooth_step
from modules.field.field_manager import PdeProblem
from modules.scenarios.catalog import catalog

# 配置日志
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)


def c(value):
    return TimeFn.const(value)


def blowup_track(horizon=(0.0, 0.9)):
    """[-10, 1/(1-t)]"""
    spec = BoxSpec(lower=[c(-10.0)], upper=[TimeFn(kind=TimeFnKind.RECIPROCAL, params=[1.0])])
    return SpaceTimeTrack(ConvexFamily(spec, horizon))


def unit_interval_track(horizon=(0.0, 0.1)):
    return SpaceTimeTrack(ConvexFamily(BoxSpec(lower=[c(-1.0)], upper=[c(1.0)]), horizon))


def capped_ball_track():
    main = ConvexFamily(BallSpec(center=[c(0.0), c(0.0)], radius=c(1.0)), (0.0, 1.0))
    cap = ConvexFamily(CapSpec(center=[c(0.0), c(0.0)], radius=c(1.0), direction=[1.0, 0.0],
                               threshold=c(0.8)), (0.0, 1.0))
    return SpaceTimeTrack(main, cap)


def test_time_grid_lands_on_end():
    grid = time_grid(0.0, 1.0, 0.3)
    assert grid[-1] == 1.0
    assert len(grid) == 5
    assert np.all(np.diff(grid) > 0)


def test_zero_field_trajectory_is_constant():
    """F=0 时轨迹为常数"""
    logger.info("测试零场积分...")
    field = ReactionField(ZeroField(), 2)
    traj = dynamics_manager.integrate_fiber(field, 0.0, [3.0, -1.0], 0.0, 2.5, 1e-2)
    np.testing.assert_array_equal(traj.values, np.tile([3.0, -1.0], (len(traj.times), 1)))
    assert traj.error_estimate == 0.0


def test_square_field_matches_reciprocal():
    """dv/dt = v², v(0)=1 → v(0.9) = 10"""
    logger.info("测试平方场积分...")
    field = ReactionField(SquareField(), 1)
    traj = dynamics_manager.integrate_fiber(field, 0.0, [1.0], 0.0, 0.9, 1e-4)
    assert traj.final[0] == pytest.approx(10.0, abs=1e-6)
    assert traj.error_estimate < 1e-6


def test_linear_field_exponential_decay():
    """A = -I：v(1) = e^{-1} v(0)"""
    field = ReactionField(LinearField(matrix=[[c(-1.0), c(0.0)], [c(0.0), c(-1.0)]]), 2)
    traj = dynamics_manager.integrate_fiber(field, 0.0, [1.0, 0.0], 0.0, 1.0, 1e-4)
    np.testing.assert_allclose(traj.final, [math.exp(-1.0), 0.0], atol=1e-8)


def test_rotation_field_preserves_norm():
    field = ReactionField(RotationField(omega=1.0), 2)
    traj = dynamics_manager.integrate_fiber(field, 0.0, [1.0, 0.0], 0.0, math.pi / 2.0, 1e-3)
    np.testing.assert_allclose(traj.final, [0.0, 1.0], atol=1e-9)


def test_expression_field_matches_builtin():
    """表达式 s0*(1 - s0) 与逐点求值一致"""
    field = ReactionField(ExpressionField(components=["s0*(1 - s0)"]), 1)
    V = np.array([[0.0], [0.25], [1.0], [2.0]])
    np.testing.assert_allclose(field(V, 0.0), V * (1.0 - V))
    assert field.spatially_homogeneous
    assert not ReactionField(ExpressionField(components=["sin(x)*s0"]), 1).spatially_homogeneous


def test_expression_field_rejects_unknown_symbols():
    with pytest.raises(ValidationError):
        ExpressionField(components=["s0 + z"])
    with pytest.raises(ValidationError):
        ExpressionField(components=["__import__('os')"])


def test_field_dimension_mismatch():
    with pytest.raises(DomainError):
        ReactionField(RotationField(), 3)


def test_blow_up_reports_last_finite_time():
    """v(0)=1 的平方场在 t=1 爆破"""
    field = ReactionField(SquareField(), 1)
    with pytest.raises(BlowUpError) as info:
        dynamics_manager.integrate_fiber(field, 0.0, [1.0], 0.0, 2.0, 1e-2)
    assert 0.9 < info.value.last_time < 2.0
    assert info.value.partial is not None


def test_smooth_step_is_switch():
    s = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(smooth_step(s), [0.0, 0.0, 0.5, 1.0, 1.0])


def test_lipschitz_estimate():
    field = ReactionField(LinearField(matrix=[[c(2.0)]]), 1)
    fam = ConvexFamily(BoxSpec(lower=[c(-1.0)], upper=[c(1.0)]), (0.0, 1.0))
    assert field.estimate_lipschitz(fam, n_samples=200) == pytest.approx(2.0, rel=1e-6)


def test_hypothesis_holds_for_blowup_barrier():
    """上界 b(t)=1/(1-t) 满足 db/dt = b²，平方场满足切锥条件"""
    logger.info("测试爆破界切锥条件...")
    report = dynamics_manager.check_ode_hypothesis(blowup_track(), ReactionField(SquareField(), 1),
                                                   n_space_samples=16, n_time_samples=16)
    assert report.holds_everywhere_tested
    assert report.failure_locus == []
    assert report.tested == 2 * 16


def test_hypothesis_fails_at_upper_endpoint():
    """F=+1 在 v=1 处向外推"""
    track = unit_interval_track()
    report = dynamics_manager.check_ode_hypothesis(track, ReactionField(ConstantField(value=[1.0]), 1),
                                                   n_space_samples=8, n_time_samples=8)
    assert not report.holds_everywhere_tested
    assert report.decisive_failure
    assert {s.time for s in report.failure_locus} == set(report.time_grid)
    assert all(s.point == [1.0] for s in report.failure_locus)


def test_hypothesis_static_path_matches():
    track = unit_interval_track()
    field = ReactionField(ConstantField(value=[1.0]), 1)
    report = dynamics_manager.check_ode_hypothesis(track, field, 8, 4, static=True)
    assert report.static
    assert len(report.failure_locus) == 4
    with pytest.raises(DomainError):
        dynamics_manager.check_ode_hypothesis(blowup_track(), ReactionField(SquareField(), 1), 8, 4, static=True)


def test_hypothesis_with_avoidance_cap():
    """径向推力只在球冠上非零，排除回避集附近样本后切锥条件成立"""
    logger.info("测试回避集切锥条件...")
    field = ReactionField(RadialBumpField(strength=1.0, direction=[1.0, 0.0], threshold=0.8, width=0.1), 2)
    report = dynamics_manager.check_ode_hypothesis(capped_ball_track(), field, n_space_samples=64,
                                                   n_time_samples=4, epsilon_avoid=0.0)
    assert report.holds_everywhere_tested
    assert report.excluded > 0
    for sample in report.samples:
        in_cap = sample.point[0] >= 0.8 - 1e-9
        assert sample.excluded_by_avoidance == in_cap


def test_hypothesis_jitter_is_reproducible():
    track = blowup_track()
    field = ReactionField(SquareField(), 1)
    a = dynamics_manager.check_ode_hypothesis(track, field, 4, 8, seed=7, jitter=True)
    b = dynamics_manager.check_ode_hypothesis(track, field, 4, 8, seed=7, jitter=True)
    assert a.time_grid == b.time_grid
    assert a.time_grid != dynamics_manager.check_ode_hypothesis(track, field, 4, 8).time_grid


def test_preservation_zero_field():
    track = SpaceTimeTrack(ConvexFamily(BallSpec(center=[c(0.0), c(0.0)], radius=c(1.0)), (0.0, 1.0)))
    report = dynamics_manager.check_ode_preservation(track, ReactionField(ZeroField(), 2), n_starts=8, dt=1e-2)
    assert report.max_excursion <= 1e-12
    assert report.first_exit is None


def test_preservation_blowup_barrier():
    """精确解 v0/(1 - v0 t) 在 v0 < 1 时保持在 1/(1-t) 以下"""
    logger.info("测试爆破界保持性...")
    starts = np.linspace(-1.0, 0.9, 8)[:, None]
    report = dynamics_manager.check_ode_preservation(blowup_track(), ReactionField(SquareField(), 1),
                                                     dt=1e-4, starts=starts)
    assert report.max_excursion <= 1e-6
    assert report.first_exit is None


def test_preservation_outward_push():
    """F=+1 从 v=1 出发立即离开"""
    report = dynamics_manager.check_ode_preservation(unit_interval_track(), ReactionField(ConstantField(value=[1.0]), 1),
                                                     dt=1e-4, starts=[[1.0]])
    assert report.first_exit is not None
    assert report.first_exit.time <= 1e-3
    assert report.max_excursion == pytest.approx(0.1, abs=1e-9)


def test_preservation_skips_starts_in_avoidance():
    starts = np.array([[0.9, 0.0], [-0.5, 0.0]])
    report = dynamics_manager.check_ode_preservation(capped_ball_track(), ReactionField(ZeroField(), 2),
                                                     dt=1e-2, starts=starts)
    assert report.skipped_in_avoidance == 1
    assert report.first_entry is None


def test_rk4_halving_ratio():
    """平方场到 t=0.9：步长减半误差缩小约 16 倍"""
    field = ReactionField(SquareField(), 1)
    errors = [abs(dynamics_manager.integrate_fiber(field, 0.0, [1.0], 0.0, 0.9, dt).final[0] - 10.0)
              for dt in (1e-3, 5e-4)]
    assert 12.0 <= errors[0] / errors[1] <= 20.0


def test_initial_value_continuity_on_catalog_fields():
    """初值扰动 δ=1e-6：终点偏差不超过 e^{C(t1-t0)}·δ（加离散余量）"""
    logger.info("测试初值连续依赖...")
    rng = np.random.default_rng(2)
    delta, dt = 1e-6, 1e-3
    for scenario in catalog():
        p = PdeProblem(scenario.pde)
        C = p.field.estimate_lipschitz(p.track.main, *p.x_star)
        t0, t1 = p.horizon
        v0 = p.track.main.realize(t0).interior_point()
        e = rng.standard_normal(v0.size)
        e /= np.linalg.norm(e)
        base = dynamics_manager.integrate_fiber(p.field, p.x_star, v0, t0, t1, dt)
        moved = dynamics_manager.integrate_fiber(p.field, p.x_star, v0 + delta * e, t0, t1, dt)
        gap = float(np.linalg.norm(moved.final - base.final))
        assert gap <= math.exp(C * (t1 - t0)) * delta * (1.0 + 10.0 * dt), scenario.name


def main():
    """主测试函数"""
    logger.info("开始测试纤维动力学模块...")

    tests = [
        ("零场积分", test_zero_field_trajectory_is_constant),
        ("平方场积分", test_square_field_matches_reciprocal),
        ("线性场积分", test_linear_field_exponential_decay),
        ("爆破", test_blow_up_reports_last_finite_time),
        ("爆破界切锥条件", test_hypothesis_holds_for_blowup_barrier),
        ("端点失败", test_hypothesis_fails_at_upper_endpoint),
        ("回避集", test_hypothesis_with_avoidance_cap),
        ("保持性", test_preservation_blowup_barrier),
        ("外推", test_preservation_outward_push),
        ("步长减半", test_rk4_halving_ratio),
        ("初值连续依赖", test_initial_value_continuity_on_catalog_fields),
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
