import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from utils.config import config_manager
from utils.errors import DomainError
from utils.metrics import record_series
from modules.geometry.geometry_manager import EPS_GEO, SpaceTimeTrack
from modules.dynamics.models import HypothesisReport
from modules.field.models import Section
from modules.monitor.models import DiniOfSup, MonitorSeries, ProbeReport, TheoremVerdict

logger = logging.getLogger(__name__)

DINI_WINDOW = config_manager.getint('monitor', 'dini_window', 8)
EPS_NUM = config_manager.getfloat('monitor', 'eps_num', 1e-12)
EPS_TIE_REL = config_manager.getfloat('monitor', 'eps_tie_rel', 1e-9)
PROBE_FACTOR = config_manager.getfloat('monitor', 'probe_factor', 100.0)


class SeriesRecorder:
    """run_simulation 的监控回调：逐次记录 f(t) 与回避间距"""

    def __init__(self, manager: "MonitorManager", track: SpaceTimeTrack, window: int = DINI_WINDOW):
        self.manager = manager
        self.track = track
        self.window = window
        self._series = MonitorSeries(margins=[] if track.avoidance is not None else None)

    def record(self, s: Section):
        f, node = self.manager.sup_distance(s, self.track, s.time)
        self._series.times.append(float(s.time))
        self._series.f.append(f)
        self._series.argmax.append(node)
        if self.track.avoidance is not None:
            self._series.margins.append(self.manager.avoidance_margin(s, self.track, s.time))
        logger.debug(f"t={s.time:.6g}: f={f:.3e} @ {node}")

    def series(self) -> MonitorSeries:
        """补全 Dini 估计与半连续性标记后返回序列"""
        out = self._series
        n = len(out.times)
        out.dini = [
            self.manager.dini_forward(out.f, out.dt, j, self.window, times=out.times) if j < n - 1 else math.nan
            for j in range(n)
        ]
        out.flags = [''] * n
        if n >= 2:
            probe = self.manager.semicontinuity_probe(out.f, out.dt)
            for j in probe.right_continuity_flags:
                out.add_flag(j, 'right_jump')
            for j in probe.left_lsc_flags:
                out.add_flag(j, 'left_jump')
        record_series(out.max_f, out.min_margin)
        return out


class MonitorManager:
    """监控量：sup 距离、回避间距、Dini 导数、Grönwall 检验与定理判定"""

    def recorder(self, track: SpaceTimeTrack, window: int = DINI_WINDOW) -> SeriesRecorder:
        """新建监控记录器"""
        return SeriesRecorder(self, track, window)

    def sup_distance(self, s: Section, track: SpaceTimeTrack, t: float) -> Tuple[float, int]:
        """f(t) = max_x d(σ(x,t), K(t))，返回值与极大节点（并列取最小下标）"""
        d = track.main.realize(t).distance(s.flat())
        node = int(np.argmax(d))
        return float(d[node]), node

    def avoidance_margin(self, s: Section, track: SpaceTimeTrack, t: float) -> float:
        """min_x d(σ(x,t), A(t))"""
        if track.avoidance is None:
            raise DomainError("未配置回避集族，无法计算回避间距")
        return float(track.avoidance.realize(t).distance(s.flat()).min())

    def dini_forward(self, values: Sequence[float], dt: float, j: int, window: int = DINI_WINDOW,
                     times: Optional[Sequence[float]] = None) -> float:
        """前向 Dini 导数的有限窗口近似 max_w (f_{j+w} - f_j)/(w·dt)

        Args:
            values: 采样值
            dt: 均匀步长
            j: 下标
            window: 窗口长度上限
            times: 若给出则用实际时间差代替 w·dt

        Returns:
            估计值
        """
        n = len(values)
        if j < 0 or j >= n - 1:
            raise DomainError(f"下标 j={j} 没有前向邻点 (长度 {n})")
        f = np.asarray(values, dtype=float)
        w = np.arange(1, min(window, n - 1 - j) + 1)
        if times is not None:
            tt = np.asarray(times, dtype=float)
            spans = tt[j + w] - tt[j]
        else:
            spans = w * dt
        return float(np.max((f[j + w] - f[j]) / spans))

    def check_gronwall(self, values: Sequence[float], dt: float, C: float, f_start_nonpositive: bool,
                       times: Optional[Sequence[float]] = None, window: int = DINI_WINDOW) -> bool:
        """检验 d⁺f <= C·f + slack（对 f_j >= -ε_num），以及 f(t_0)<=0 时 f_j <= slack·e^{C(t_j-t_0)}"""
        f = np.asarray(values, dtype=float)
        n = len(f)
        slack = 10.0 * dt * (1.0 + C)
        tt = np.asarray(times, dtype=float) if times is not None else dt * np.arange(n)
        for j in range(n - 1):
            if f[j] < -EPS_NUM:
                continue
            d = self.dini_forward(f, dt, j, window, times=times)
            if d > C * f[j] + slack:
                logger.debug(f"Grönwall 不等式在 j={j} 失败: d⁺f={d:.3e} > C·f+slack={C * f[j] + slack:.3e}")
                return False
        if f_start_nonpositive:
            with np.errstate(over='ignore'):
                bound = slack * np.exp(C * (tt - tt[0]))
            if np.any(f > bound):
                j = int(np.argmax(f > bound))
                logger.debug(f"Grönwall 上界在 j={j} 失败: f={f[j]:.3e} > {bound[j]:.3e}")
                return False
        return True

    def dini_of_sup(self, g: np.ndarray, dt: float, dgdt: Optional[np.ndarray] = None,
                    times: Optional[Sequence[float]] = None, window: int = DINI_WINDOW) -> DiniOfSup:
        """f(t) = max_S g(s, t) 的 Dini 导数与极大集上 ∂g/∂t 的最大值

        Args:
            g: (|S|, n_t) 取值
            dt: 时间步长
            dgdt: ∂g/∂t，缺省用中心差分
            times: 时间网格，缺省为 dt·j

        Returns:
            DiniOfSup，下标 j = 0..n_t-2
        """
        g = np.atleast_2d(np.asarray(g, dtype=float))
        n_t = g.shape[1]
        if n_t < 2:
            raise DomainError("时间网格至少需要两个点")
        if dgdt is None:
            dgdt = np.gradient(g, dt, axis=1, edge_order=2) if n_t > 2 else np.gradient(g, dt, axis=1)
        tt = np.asarray(times, dtype=float) if times is not None else dt * np.arange(n_t)
        f = g.max(axis=0)
        scale = max(1.0, float(np.abs(g).max()))
        tie = EPS_TIE_REL * scale
        dini = np.array([self.dini_forward(f, dt, j, window) for j in range(n_t - 1)])
        arg_deriv = np.array([float(dgdt[g[:, j] >= f[j] - tie, j].max()) for j in range(n_t - 1)])
        return DiniOfSup(times=tt[:-1], f=f, dini=dini, argmax_derivative=arg_deriv)

    def semicontinuity_probe(self, values: Sequence[float], dt: float,
                             expected: Optional[Dict[str, bool]] = None,
                             factor: float = PROBE_FACTOR) -> ProbeReport:
        """跳跃探测：右连续性（f_{j+1} < f_j - tol）与左下半连续性（f_j > f_{j-1} + tol）

        jump_tol = factor·dt·L，L 为 |Δf|/dt 的中位数。
        """
        expected = expected or {'right_continuous': True, 'left_lsc': True}
        f = np.asarray(values, dtype=float)
        if len(f) < 2:
            return ProbeReport(jump_tol=0.0, lipschitz=0.0)
        diffs = np.diff(f)
        lipschitz = float(np.median(np.abs(diffs) / dt))
        jump_tol = max(factor * dt * lipschitz, EPS_NUM * max(1.0, float(np.abs(f).max())))
        right = np.where(diffs < -jump_tol)[0].tolist() if expected.get('right_continuous', True) else []
        left = (np.where(diffs > jump_tol)[0] + 1).tolist() if expected.get('left_lsc', True) else []
        return ProbeReport(right_continuity_flags=right, left_lsc_flags=left, jump_tol=jump_tol,
                           lipschitz=lipschitz)

    def theorem_verdict(self, hyp: Optional[HypothesisReport], series: MonitorSeries, tol_contain: float,
                        margin_floor: float, C: float) -> TheoremVerdict:
        """汇总四个判定：切锥假设、包含、回避与 Grönwall"""
        if len(series) == 0:
            raise DomainError("监控序列为空")
        f = np.asarray(series.f, dtype=float)
        containment_ok = bool(np.all(f <= tol_contain))
        avoidance_ok = True
        if series.margins is not None:
            avoidance_ok = bool(np.all(np.asarray(series.margins) >= margin_floor))
        gronwall_ok = self.check_gronwall(f, series.dt, C, f_start_nonpositive=bool(f[0] <= EPS_GEO),
                                          times=series.times)
        hypothesis_ok = hyp.holds_everywhere_tested if hyp is not None else None
        details = {
            'max_f': float(f.max()),
            'argmax_time': float(series.times[int(np.argmax(f))]),
            'min_margin': series.min_margin,
            'tol_contain': tol_contain,
            'margin_floor': margin_floor,
            'lipschitz_C': C,
            'record_dt': series.dt,
        }
        if hyp is not None:
            details['failure_count'] = len(hyp.failure_locus)
            details['tested_samples'] = hyp.tested
        verdict = TheoremVerdict(hypothesis_ok=hypothesis_ok, containment_ok=containment_ok,
                                 avoidance_ok=avoidance_ok, gronwall_ok=gronwall_ok, details=details)
        logger.info(f"定理判定: {verdict.verdicts()}")
        return verdict


# 创建全局监控管理器实例
monitor_manager = MonitorManager()
