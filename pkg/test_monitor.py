#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
监控量与定理判定测试
"""

import logging
import math
import os
import sys

import numpy as np
import pytest

# 添加项目根目录到Python路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.errors import DomainError
from modules.geometry.geometry_manager import ConvexFamily, SpaceTimeTrack
from modules.geometry.models import BallSpec, BoxSpec, CapSpec, TimeFn
from modules.field.models import Section
from modules.monitor.models import MonitorSeries
from modules.monitor.monitor_manager import monitor_manager

# 配置日志
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)


def c(value):
    return TimeFn.const(value)


def ball_track(with_cap=False):
    main = ConvexFamily(BallSpec(center=[c(0.0), c(0.0)], radius=c(1.0)), (0.0, 1.0))
    cap = None
    if with_cap:
        cap = ConvexFamily(CapSpec(center=[c(0.0), c(0.0)], radius=c(1.0), direction=[1.0, 0.0],
                                   threshold=c(0.8)), (0.0, 1.0))
    return SpaceTimeTrack(main, cap)


def square_track():
    return SpaceTimeTrack(ConvexFamily(BoxSpec(lower=[c(-1.0)] * 2, upper=[c(1.0)] * 2), (0.0, 1.0)))


def test_sup_distance_examples():
    """零截面、常数截面 (2,0)、σ=(1+0.5cos x)e₁"""
    logger.info("测试 sup 距离...")
    zero = Section(values=np.zeros((16, 2)), time=0.0)
    assert monitor_manager.sup_distance(zero, ball_track(), 0.0)[0] == 0.0
    const = Section(values=np.tile([2.0, 0.0], (16, 1)), time=0.0)
    assert monitor_manager.sup_distance(const, ball_track(), 0.0) == (pytest.approx(1.0), 0)
    x = 2.0 * np.pi * np.arange(64) / 64
    bump = Section(values=np.column_stack([1.0 + 0.5 * np.cos(x), np.zeros(64)]), time=0.0)
    f, node = monitor_manager.sup_distance(bump, square_track(), 0.0)
    assert f == pytest.approx(0.5)
    assert node == 0


def test_avoidance_margin_examples():
    logger.info("测试回避间距...")
    s = Section(values=np.tile([-0.5, 0.0], (8, 1)), time=0.0)
    assert monitor_manager.avoidance_margin(s, ball_track(with_cap=True), 0.0) == pytest.approx(1.3, abs=1e-6)
    inside = Section(values=np.vstack([np.tile([-0.5, 0.0], (7, 1)), [[0.9, 0.0]]]), time=0.0)
    assert monitor_manager.avoidance_margin(inside, ball_track(with_cap=True), 0.0) == 0.0
    with pytest.raises(DomainError):
        monitor_manager.avoidance_margin(s, ball_track(), 0.0)


def test_dini_forward_examples():
    """t² 在 t=1 的导数为 2，|t| 在 0 处右导数为 1，常数为 0"""
    logger.info("测试 Dini 导数...")
    dt = 1e-3
    t = np.arange(0.0, 1.1, dt)
    j = int(round(1.0 / dt))
    assert monitor_manager.dini_forward(t ** 2, dt, j) == pytest.approx(2.0, abs=1e-2)
    s = np.arange(-10, 11) * dt
    assert monitor_manager.dini_forward(np.abs(s), dt, 10) == pytest.approx(1.0, abs=1e-9)
    assert monitor_manager.dini_forward(np.ones(20), dt, 5) == 0.0
    with pytest.raises(DomainError):
        monitor_manager.dini_forward(np.ones(20), dt, 19)


def test_dini_forward_convergence():
    """sin t 的前向差商随 dt 减半误差近似减半"""
    errors = []
    for dt in (1e-2, 5e-3):
        t = np.arange(0.0, 1.0 + 20 * dt, dt)
        j = int(round(0.5 / dt))
        errors.append(abs(monitor_manager.dini_forward(np.sin(t), dt, j, window=1) - math.cos(0.5)))
    assert errors[1] < errors[0]
    assert 1.5 <= errors[0] / errors[1] <= 2.5


def test_check_gronwall_examples():
    """f ≡ 0 成立；f = e^{2t}·0 成立；f = t 在 C=0 时不成立"""
    logger.info("测试 Grönwall 检验...")
    dt = 1e-3
    t = np.arange(0.0, 1.0, dt)
    assert monitor_manager.check_gronwall(np.zeros_like(t), dt, C=3.0, f_start_nonpositive=True)
    assert monitor_manager.check_gronwall(np.exp(2.0 * t) * 0.0, dt, C=2.0, f_start_nonpositive=True)
    assert not monitor_manager.check_gronwall(t, dt, C=0.0, f_start_nonpositive=True)


def test_check_gronwall_growth_within_rate():
    """f = e^{t}·f0 在 C=1 时满足 d⁺f <= C f"""
    dt = 1e-3
    t = np.arange(0.0, 1.0, dt)
    assert monitor_manager.check_gronwall(0.1 * np.exp(t), dt, C=1.0, f_start_nonpositive=False)
    assert not monitor_manager.check_gronwall(0.1 * np.exp(3.0 * t), dt, C=1.0, f_start_nonpositive=False)


def test_dini_of_sup_examples():
    """g 与 t 无关时两侧为 0；单点时等于 g 自身的差商"""
    dt = 1e-2
    t = np.arange(0.0, 1.0, dt)
    still = monitor_manager.dini_of_sup(np.tile([[0.1], [0.4], [0.2]], (1, len(t))), dt)
    np.testing.assert_array_equal(still.dini, 0.0)
    np.testing.assert_allclose(still.argmax_derivative, 0.0, atol=1e-12)
    single = monitor_manager.dini_of_sup(np.sin(t)[None, :], dt)
    expected = [monitor_manager.dini_forward(np.sin(t), dt, j) for j in range(len(t) - 1)]
    np.testing.assert_allclose(single.dini, expected)


def test_dini_of_sup_bounded_by_argmax_derivative():
    """极大集恒为第一行时，d⁺f 不超过该行的 ∂g/∂t（加离散误差）"""
    dt = 1e-3
    t = np.arange(0.0, 1.5, dt)
    g = np.vstack([np.sin(t), np.sin(t) - 1.0])
    dgdt = np.vstack([np.cos(t), np.cos(t)])
    result = monitor_manager.dini_of_sup(g, dt, dgdt=dgdt)
    assert result.holds(slack=10.0 * dt)


def test_dini_of_sup_moving_maximizer():
    """g(s, t) = s·t - s²，s ∈ [0, 1]：f(t) = t²/4，极大点 s = t/2 随时间移动"""
    logger.info("测试移动极大点...")
    dt = 1e-3
    t = dt * np.arange(2001)
    s = np.linspace(0.0, 1.0, 1001)
    g = s[:, None] * t[None, :] - (s ** 2)[:, None]
    dgdt = np.repeat(s[:, None], len(t), axis=1)
    result = monitor_manager.dini_of_sup(g, dt, dgdt=dgdt)
    np.testing.assert_allclose(result.f, t ** 2 / 4.0, atol=1e-6)
    assert result.f[-1] == pytest.approx(1.0)
    assert result.holds(slack=10.0 * dt)
    np.testing.assert_allclose(result.argmax_derivative, t[:-1] / 2.0, atol=1e-3)


def test_semicontinuity_probe_examples():
    """光滑序列无标记；一次向上跳跃产生一个左下半连续标记"""
    logger.info("测试半连续性探测...")
    dt = 1e-2
    t = np.arange(0.0, 1.0, dt)
    assert monitor_manager.semicontinuity_probe(np.sin(t), dt).is_empty
    jumped = np.sin(t)
    jumped[40:] += 1.0
    report = monitor_manager.semicontinuity_probe(jumped, dt)
    assert report.left_lsc_flags == [40]
    assert report.right_continuity_flags == []
    assert monitor_manager.semicontinuity_probe(np.zeros(50), dt).is_empty


def test_recorder_builds_series():
    track = ball_track(with_cap=True)
    recorder = monitor_manager.recorder(track)
    for k in range(5):
        recorder.record(Section(values=np.tile([-0.5, 0.0], (8, 1)), time=0.1 * k))
    series = recorder.series()
    assert len(series) == 5
    assert series.margins == pytest.approx([1.3] * 5, abs=1e-6)
    assert math.isnan(series.dini[-1])
    frame = series.to_frame()
    assert list(frame.columns) == ["t", "f", "argmax_node", "margin", "dini", "flags"]


def test_theorem_verdict():
    series = MonitorSeries(times=[0.0, 0.1, 0.2, 0.3], f=[0.0, 0.0, 0.0, 0.0], argmax=[0, 0, 0, 0],
                           margins=[0.5, 0.45, 0.4, 0.4])
    verdict = monitor_manager.theorem_verdict(None, series, tol_contain=1e-8, margin_floor=0.3, C=1.0)
    assert verdict.verdicts() == {'hypothesis_ok': None, 'containment_ok': True,
                                  'avoidance_ok': True, 'gronwall_ok': True}
    times = [0.01 * k for k in range(21)]
    failing = MonitorSeries(times=times, f=list(times), argmax=[0] * len(times))
    verdict = monitor_manager.theorem_verdict(None, failing, tol_contain=0.05, margin_floor=0.0, C=0.0)
    assert not verdict.containment_ok
    assert not verdict.gronwall_ok
    assert verdict.avoidance_ok


def main():
    """主测试函数"""
    logger.info("开始测试监控模块...")

    tests = [
        ("sup 距离", test_sup_distance_examples),
        ("回避间距", test_avoidance_margin_examples),
        ("Dini 导数", test_dini_forward_examples),
        ("Grönwall", test_check_gronwall_examples),
        ("上确界 Dini", test_dini_of_sup_examples),
        ("移动极大点", test_dini_of_sup_moving_maximizer),
        ("半连续性", test_semicontinuity_probe_examples),
        ("定理判定", test_theorem_verdict),
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
