import logging
import math
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from utils.config import config_manager
from utils.errors import BlowUpError, DomainError
from utils.metrics import record_hypothesis_samples, record_ode_steps
from modules.geometry.geometry_manager import EPS_GEO, SpaceTimeTrack, geometry_manager
from modules.geometry.models import ConeVerdict, ConeVerdictValue
from modules.dynamics.models import (
    ExitEvent, HypothesisReport, HypothesisSample, PreservationReport, Trajectory,
)
from modules.dynamics.reaction import ReactionField

logger = logging.getLogger(__name__)

N_SPACE_SAMPLES = config_manager.getint('dynamics', 'n_space_samples', 256)
N_TIME_SAMPLES = config_manager.getint('dynamics', 'n_time_samples', 64)
N_STARTS = config_manager.getint('dynamics', 'n_starts', 16)
ODE_DT = config_manager.getfloat('dynamics', 'ode_dt', 1e-4)
TOL_ODE = config_manager.getfloat('dynamics', 'tol_ode', 1e-5)


def time_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    """固定步长网格，最后一步缩短以落在 t1 上"""
    n = max(int(math.ceil((t1 - t0) / dt - 1e-9)), 1)
    times = t0 + dt * np.arange(n + 1, dtype=float)
    times[-1] = t1
    return times


class DynamicsManager:
    """纤维 ODE 积分与 ODE 层面的切锥条件检验"""

    def _rk4(self, field: ReactionField, V0: np.ndarray, times: np.ndarray, x=0.0, y=0.0,
             on_step: Optional[Callable[[int, float, np.ndarray], None]] = None,
             keep: bool = True) -> np.ndarray:
        """经典四阶 Runge-Kutta，批量推进 (m, k) 个初值"""
        V = np.array(V0, dtype=float)
        values = [V.copy()] if keep else None
        if on_step is not None:
            on_step(0, times[0], V)
        for i in range(len(times) - 1):
            t = times[i]
            h = times[i + 1] - t
            k1 = field(V, t, x, y)
            k2 = field(V + 0.5 * h * k1, t + 0.5 * h, x, y)
            k3 = field(V + 0.5 * h * k2, t + 0.5 * h, x, y)
            k4 = field(V + h * k3, t + h, x, y)
            nxt = V + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(nxt)):
                partial = np.array(values) if keep else None
                raise BlowUpError("纤维 ODE 积分出现非有限值", last_time=float(t), last_state=V, partial=partial)
            V = nxt
            if keep:
                values.append(V.copy())
            if on_step is not None:
                on_step(i + 1, times[i + 1], V)
        record_ode_steps(len(times) - 1)
        return np.array(values) if keep else V

    def integrate_fiber(self, field: ReactionField, x, v0, t0: float, t1: float, dt: float) -> Trajectory:
        """积分纤维 ODE dσ/dt = F(x, σ, t)

        Args:
            field: 反应场
            x: 空间坐标（标量或 (x, y)）
            v0: 初值
            t0: 起始时间
            t1: 终止时间
            dt: 步长

        Returns:
            Trajectory，error_estimate 为步长加倍的 Richardson 估计
        """
        if not t0 < t1:
            raise DomainError(f"需要 t0 < t1，实际 t0={t0}, t1={t1}")
        if not dt > 0:
            raise DomainError(f"步长必须为正: {dt}")
        v0 = np.asarray(v0, dtype=float).reshape(-1)
        if v0.size != field.dim:
            raise DomainError(f"初值维数 {v0.size} 与反应场维数 {field.dim} 不一致")
        xs, ys = (tuple(x) + (0.0,))[:2] if isinstance(x, (tuple, list)) else (x, 0.0)
        times = time_grid(t0, t1, dt)
        try:
            values = self._rk4(field, v0[None, :], times, xs, ys)[:, 0, :]
        except BlowUpError as e:
            if e.partial is not None:
                partial = np.asarray(e.partial)[:, 0, :]
                e.partial = Trajectory(times=times[:len(partial)], values=partial, dt=dt)
            raise
        error = 0.0
        coarse_times = time_grid(t0, t1, 2.0 * dt)
        if len(coarse_times) > 2:
            coarse = self._rk4(field, v0[None, :], coarse_times, xs, ys, keep=False)[0]
            error = float(np.linalg.norm(coarse - values[-1])) / 15.0
        logger.debug(f"纤维积分完成: [{t0}, {t1}], dt={dt}, 误差估计 {error:.3e}")
        return Trajectory(times=times, values=values, dt=dt, error_estimate=error)

    def check_ode_hypothesis(self, track: SpaceTimeTrack, field: ReactionField,
                             n_space_samples: int = N_SPACE_SAMPLES, n_time_samples: int = N_TIME_SAMPLES,
                             x_star: Sequence[float] = (0.0, 0.0), epsilon_avoid: float = 0.0,
                             static: bool = False, seed: Optional[int] = None,
                             jitter: bool = False) -> HypothesisReport:
        """在 ∂T \\ AT 的边界样本上检验 (F(v,t), 1) ∈ C_{(v,t)}L

        Args:
            track: 时空轨道
            field: 反应场
            n_space_samples: 每个时刻的边界样本数
            n_time_samples: 时间样本数（均匀，不含终点）
            x_star: 代表空间点
            epsilon_avoid: 回避缓冲 ε，距 A(t) 不超过 2ε 的样本被排除
            static: 使用静态切锥判定（仅限不随时间变化的凸集族）
            seed: 抖动随机种子
            jitter: 是否对样本位置加抖动

        Returns:
            HypothesisReport
        """
        if n_space_samples < 1 or n_time_samples < 1:
            raise DomainError("样本数必须 >= 1")
        if static and not track.main.is_time_constant:
            raise DomainError("静态判定只适用于不随时间变化的凸集族")
        t0, t1 = track.horizon
        times = t0 + (t1 - t0) * np.arange(n_time_samples) / n_time_samples
        rng = np.random.default_rng(seed) if jitter else None
        if rng is not None:
            times = times + rng.uniform(0.0, 0.5, n_time_samples) * (t1 - t0) / n_time_samples
        xs, ys = (tuple(x_star) + (0.0, 0.0))[:2]
        samples = []
        excluded_total = 0
        for t in times:
            s = track.main.realize(t)
            phase = float(rng.uniform(0.0, 2.0 * np.pi / n_space_samples)) if rng is not None else 0.0
            B = s.boundary_samples(n_space_samples, phase)
            excluded = np.zeros(len(B), dtype=bool)
            if track.avoidance is not None:
                avoid = track.avoidance.realize(t)
                excluded = avoid.distance(B) <= 2.0 * epsilon_avoid + EPS_GEO * max(1.0, avoid.diameter)
            W = field(B, t, xs, ys)
            tested = np.where(~excluded)[0]
            verdicts = {}
            if static:
                for i in tested:
                    ok = geometry_manager.cone_member_static(track.main, t, B[i], W[i])
                    verdicts[i] = ConeVerdict(value=ConeVerdictValue.MEMBER if ok else ConeVerdictValue.NON_MEMBER)
            elif len(tested):
                batch = geometry_manager.cone_verdicts(track, B[tested], t, W[tested])
                verdicts = dict(zip(tested, batch))
            for i in range(len(B)):
                samples.append(HypothesisSample(point=B[i].tolist(), time=float(t), verdict=verdicts.get(i),
                                                excluded_by_avoidance=bool(excluded[i])))
            excluded_total += int(excluded.sum())
        checked = [smp for smp in samples if not smp.excluded_by_avoidance]
        failures = [smp for smp in checked if smp.verdict.is_non_member]
        inconclusive = sum(1 for smp in checked if smp.verdict.value == ConeVerdictValue.INCONCLUSIVE)
        holds = all(smp.verdict.is_member for smp in checked)
        record_hypothesis_samples(len(checked), excluded_total)
        logger.info(f"ODE 切锥条件检验: 测试 {len(checked)} 个样本, 排除 {excluded_total}, "
                    f"失败 {len(failures)}, 不确定 {inconclusive}, 成立={holds}")
        return HypothesisReport(
            samples=samples,
            holds_everywhere_tested=holds,
            failure_locus=failures,
            n_space_samples=n_space_samples,
            n_time_samples=n_time_samples,
            time_grid=[float(t) for t in times],
            static=static,
            tested=len(checked),
            excluded=excluded_total,
            inconclusive=inconclusive,
        )

    def preservation_starts(self, track: SpaceTimeTrack, n_starts: int) -> np.ndarray:
        """起始点：t_start 时刻凸集的边界与内部样本各取约一半"""
        s = track.main.realize(track.horizon[0])
        boundary = s.boundary_samples(n_starts)
        interior = s.interior_samples(n_starts)
        n_boundary = min(len(boundary), (n_starts + 1) // 2)
        n_interior = min(len(interior), n_starts - n_boundary)
        pick_b = np.unique(np.linspace(0, len(boundary) - 1, n_boundary).round().astype(int))
        pick_i = np.unique(np.linspace(0, len(interior) - 1, max(n_interior, 1)).round().astype(int))
        chosen = [boundary[pick_b]]
        if n_interior > 0:
            chosen.append(interior[pick_i])
        return np.vstack(chosen)

    def check_ode_preservation(self, track: SpaceTimeTrack, field: ReactionField, n_starts: int = N_STARTS,
                               dt: float = ODE_DT, x_star: Sequence[float] = (0.0, 0.0),
                               starts=None, tol_ode: float = TOL_ODE) -> PreservationReport:
        """从 t_start 的样本点积分纤维 ODE，记录离开 K(t) 的最大距离与首次进入 A(t) 的时间"""
        if n_starts < 1:
            raise DomainError("n_starts 必须 >= 1")
        t0, t1 = track.horizon
        S = np.atleast_2d(np.asarray(starts, dtype=float)) if starts is not None \
            else self.preservation_starts(track, n_starts)
        skipped = 0
        if track.avoidance is not None:
            inside = track.avoidance.realize(t0).distance(S) <= EPS_GEO
            skipped = int(inside.sum())
            S = S[~inside]
        if len(S) == 0:
            raise DomainError("所有起始点都位于回避集内")
        xs, ys = (tuple(x_star) + (0.0, 0.0))[:2]
        excursion = np.zeros(len(S))
        exit_time = np.full(len(S), np.inf)
        entry_time = np.full(len(S), np.inf)

        def observe(i, t, V):
            d = track.main.realize(t).distance(V)
            np.maximum(excursion, d, out=excursion)
            exit_time[(d > tol_ode) & np.isinf(exit_time)] = t
            if track.avoidance is not None:
                a = track.avoidance.realize(t).distance(V)
                entry_time[(a <= EPS_GEO) & np.isinf(entry_time)] = t

        def build():
            return PreservationReport(
                max_excursion=float(excursion.max()),
                first_exit=self._first_event(S, exit_time),
                first_entry=self._first_event(S, entry_time),
                starts=S.tolist(),
                excursions=excursion.tolist(),
                skipped_in_avoidance=skipped,
                dt=dt,
                tol_ode=tol_ode,
            )

        try:
            self._rk4(field, S, time_grid(t0, t1, dt), xs, ys, on_step=observe, keep=False)
        except BlowUpError as e:
            e.partial = build()
            raise
        report = build()
        logger.info(f"ODE 保持性检验: {len(S)} 个起点, 最大偏离 {report.max_excursion:.3e}, "
                    f"首次离开 {report.first_exit.time if report.first_exit else None}")
        return report

    def _first_event(self, S: np.ndarray, times: np.ndarray) -> Optional[ExitEvent]:
        if not np.any(np.isfinite(times)):
            return None
        i = int(np.argmin(times))
        return ExitEvent(start=S[i].tolist(), time=float(times[i]))


# 创建全局动力学管理器实例
dynamics_manager = DynamicsManager()
