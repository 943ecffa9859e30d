import functools
import logging
from typing import Optional, Tuple

import numpy as np

from utils.config import config_manager
from utils.errors import DomainError
from utils.metrics import record_cone_verdicts
from modules.geometry.convex_sets import ConvexSet, Polytope, realize, unit_directions
from modules.geometry.models import ConeVerdict, ConeVerdictValue, TimeFnKind, TrackSpec, check_fiber_dim

logger = logging.getLogger(__name__)

EPS_ACT_REL = config_manager.getfloat('geometry', 'eps_act_rel', 1e-9)
EPS_GEO = config_manager.getfloat('geometry', 'eps_geo', 1e-9)
VALIDATION_POINTS = config_manager.getint('geometry', 'validation_points', 33)
SUPPORT_DIRECTIONS = config_manager.getint('geometry', 'support_directions', 64)

CONE_S_MAX = config_manager.getfloat('cone', 's_max', 1e-2)
CONE_LEVELS = config_manager.getint('cone', 'levels', 20)
CONE_EPS_ABS = config_manager.getfloat('cone', 'eps_abs', 1e-8)
CONE_C_LIN_FACTOR = config_manager.getfloat('cone', 'c_lin_factor', 10.0)
CONE_DELTA_MIN = config_manager.getfloat('cone', 'delta_min', 1e-4)
CONE_NONMEMBER_FROM = config_manager.getint('cone', 'nonmember_from', 10)


class ConvexFamily:
    """随时间变化的有界闭凸集族 K(t)"""

    def __init__(self, spec, horizon: Tuple[float, float], validate: bool = True):
        """初始化凸集族

        Args:
            spec: ConvexSetSpec 变体
            horizon: 时间区间 [t_start, t_end]
            validate: 是否在验证网格上检查凸集有效性与连续性
        """
        t0, t1 = float(horizon[0]), float(horizon[1])
        if not t0 < t1:
            raise DomainError(f"时间区间无效: [{t0}, {t1}]")
        self.spec = spec
        self.horizon = (t0, t1)
        try:
            self.dim = check_fiber_dim(spec)
            spec.check_domain(self.horizon)
        except ValueError as e:
            raise DomainError(str(e))
        self._realize = functools.lru_cache(maxsize=2048)(self._build)
        if validate:
            self.validate()

    def _build(self, t: float) -> ConvexSet:
        return realize(self.spec, t)

    @property
    def is_time_constant(self) -> bool:
        return all(fn.kind == TimeFnKind.CONSTANT for fn in self.spec.time_functions())

    @property
    def time_tol(self) -> float:
        return 1e-12 * max(1.0, abs(self.horizon[0]), abs(self.horizon[1]))

    def check_time(self, t: float):
        if not (self.horizon[0] - self.time_tol <= t <= self.horizon[1] + self.time_tol):
            raise DomainError(f"时间 t={t} 超出区间 {list(self.horizon)}")

    def realize(self, t: float) -> ConvexSet:
        """实现 t 时刻的凸集（带缓存）"""
        self.check_time(t)
        return self._realize(float(t))

    def validation_grid(self) -> np.ndarray:
        return np.linspace(self.horizon[0], self.horizon[1], VALIDATION_POINTS)

    def directions(self) -> np.ndarray:
        return unit_directions(self.dim, SUPPORT_DIRECTIONS)

    def support(self, t: float, U: np.ndarray) -> np.ndarray:
        return self.realize(t).support(U)

    def hausdorff(self, t: float, s: float) -> float:
        """两时刻实现之间的 Hausdorff 距离（支撑函数差的上确界）"""
        U = self.directions()
        return float(np.max(np.abs(self.support(t, U) - self.support(s, U))))

    def speed(self, t: float) -> float:
        """t 附近的 Hausdorff 速度估计"""
        span = self.horizon[1] - self.horizon[0]
        ds = 1e-4 * span
        if t + ds <= self.horizon[1]:
            return self.hausdorff(t, t + ds) / ds
        return self.hausdorff(t - ds, t) / ds

    def validate(self):
        """在验证网格上检查：凸集非空有界、Polytope 可行、随时间连续"""
        grid = self.validation_grid()
        for t in grid:
            s = self.realize(t)
            if isinstance(s, Polytope):
                s.validate()
            if not np.isfinite(s.diameter):
                raise DomainError(f"t={t} 时凸集直径非有限")
        step = (grid[1] - grid[0]) * 1e-2
        for t in grid[:-1]:
            far = self.hausdorff(t, t + step)
            near = self.hausdorff(t, t + step / 2.0)
            scale = max(1.0, self.realize(t).scale())
            if near > 0.75 * far + 1e-9 * scale:
                raise DomainError(f"凸集族在 t={t:.6g} 附近不连续 (Hausdorff {far:.3e} -> {near:.3e})")
        logger.debug(f"凸集族验证通过: {self.spec.variant}, 区间 {list(self.horizon)}")


class SpaceTimeTrack:
    """时空轨道：主凸集族 K(t) 与可选的回避集族 A(t)"""

    def __init__(self, main: ConvexFamily, avoidance: Optional[ConvexFamily] = None, validate: bool = True):
        if avoidance is not None:
            if avoidance.horizon != main.horizon:
                raise DomainError("回避集族与主凸集族的时间区间不一致")
            if avoidance.dim != main.dim:
                raise DomainError("回避集族与主凸集族的纤维维数不一致")
        self.main = main
        self.avoidance = avoidance
        if validate and avoidance is not None:
            self.check_containment()

    @classmethod
    def from_spec(cls, spec: TrackSpec, horizon: Tuple[float, float], validate: bool = True) -> "SpaceTimeTrack":
        main = ConvexFamily(spec.main, horizon, validate=validate)
        avoidance = ConvexFamily(spec.avoidance, horizon, validate=validate) if spec.avoidance is not None else None
        return cls(main, avoidance, validate=validate)

    @property
    def horizon(self) -> Tuple[float, float]:
        return self.main.horizon

    @property
    def dim(self) -> int:
        return self.main.dim

    def check_containment(self):
        """抽样检查 A(t) ⊆ K(t)"""
        for t in self.main.validation_grid():
            inner = self.avoidance.realize(t)
            outer = self.main.realize(t)
            pts = np.vstack([inner.boundary_samples(SUPPORT_DIRECTIONS), inner.interior_point()[None, :]])
            excess = float(outer.distance(pts).max())
            if excess > EPS_GEO * max(1.0, outer.diameter):
                raise DomainError(f"回避集在 t={t:.6g} 时不包含于主凸集 (超出 {excess:.3e})")


class GeometryManager:
    """凸几何运算：距离、投影、外法向、支撑间隙与切锥判定"""

    def _point(self, family: ConvexFamily, p) -> np.ndarray:
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.size != family.dim:
            raise DomainError(f"向量维数 {p.size} 与纤维维数 {family.dim} 不一致")
        if not np.all(np.isfinite(p)):
            raise DomainError("向量包含非有限值")
        return p

    def _points(self, family: ConvexFamily, P) -> np.ndarray:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] != family.dim:
            raise DomainError(f"向量维数 {P.shape[1]} 与纤维维数 {family.dim} 不一致")
        if not np.all(np.isfinite(P)):
            raise DomainError("向量包含非有限值")
        return P

    def distance(self, family: ConvexFamily, t: float, p) -> float:
        """点到 K(t) 的欧氏距离"""
        return float(family.realize(t).distance(self._point(family, p)[None, :])[0])

    def distances(self, family: ConvexFamily, t: float, P) -> np.ndarray:
        """批量距离，P 为 (m, k)"""
        return family.realize(t).distance(self._points(family, P))

    def project(self, family: ConvexFamily, t: float, p) -> np.ndarray:
        """K(t) 上的最近点"""
        return family.realize(t).project(self._point(family, p)[None, :])[0]

    def support_gap(self, family: ConvexFamily, t: float, p) -> float:
        """sup_{v ∈ ∂K, n ∈ S_v} n·(p - v)：外部等于距离，内部非正"""
        return float(family.realize(t).support_gap(self._point(family, p)[None, :])[0])

    def support(self, family: ConvexFamily, t: float, u) -> float:
        """支撑函数 h(u) = max_{v ∈ K(t)} u·v"""
        return float(family.realize(t).support(self._point(family, u)[None, :])[0])

    def _active_tol(self, s: ConvexSet) -> float:
        return EPS_ACT_REL * max(s.diameter, 1e-12)

    def outward_normals(self, family: ConvexFamily, t: float, v) -> np.ndarray:
        """边界点处外法锥的生成元

        Args:
            family: 凸集族
            t: 时刻
            v: 边界点（距边界不超过 ε_act）

        Returns:
            (g, k) 单位法向量
        """
        v = self._point(family, v)
        s = family.realize(t)
        tol = self._active_tol(s)
        gap = float(s.support_gap(v[None, :])[0])
        if abs(gap) > tol:
            raise DomainError(f"点 {v.tolist()} 不在边界上 (间隙 {gap:.3e} > ε_act={tol:.3e})")
        return s.active_normals(v, tol)

    def cone_member_static(self, family: ConvexFamily, t: float, v, F) -> bool:
        """静态切锥判定：对所有外法向生成元 n·F <= 1e-9(|F|+1)"""
        F = self._point(family, F)
        normals = self.outward_normals(family, t, v)
        eps_cone = 1e-9 * (float(np.linalg.norm(F)) + 1.0)
        return bool(np.all(normals @ F <= eps_cone))

    def cone_schedule(self, track: SpaceTimeTrack, t: float) -> np.ndarray:
        """s_k = s_max·2^(-k)，s_max = min(1e-2, 剩余时长)"""
        remaining = track.horizon[1] - t
        if remaining <= track.main.time_tol:
            raise DomainError(f"t={t} 位于区间终点，不存在前向方向")
        s_max = min(CONE_S_MAX, remaining)
        return s_max * 2.0 ** (-np.arange(CONE_LEVELS + 1))

    def spacetime_quotients(self, track: SpaceTimeTrack, V, t: float, W) -> Tuple[np.ndarray, np.ndarray]:
        """批量计算商序列 q_k = d(v + s_k W, K(t + s_k)) / s_k

        Returns:
            (schedule, q)，q 形状为 (m, levels+1)
        """
        family = track.main
        family.check_time(t)
        V = self._points(family, V)
        W = self._points(family, W)
        schedule = self.cone_schedule(track, t)
        q = np.empty((len(V), len(schedule)))
        for i, s in enumerate(schedule):
            target = family.realize(min(t + s, track.horizon[1]))
            q[:, i] = target.distance(V + s * W) / s
        return schedule, q

    def lipschitz_estimate(self, family: ConvexFamily, t: float, W) -> np.ndarray:
        """局部 Lipschitz 估计 L = 1 + speed + |W|^2·κ"""
        W = np.atleast_2d(W)
        s = family.realize(t)
        return 1.0 + family.speed(t) + np.sum(W * W, axis=1) * s.curvature

    def classify(self, q: np.ndarray, schedule: np.ndarray, c_lin: float) -> ConeVerdict:
        """由商序列给出三值判定"""
        threshold = max(CONE_EPS_ABS, c_lin * schedule[-1])
        if q[-1] <= threshold:
            value = ConeVerdictValue.MEMBER
        elif np.all(q[CONE_NONMEMBER_FROM:] >= CONE_DELTA_MIN):
            value = ConeVerdictValue.NON_MEMBER
        else:
            value = ConeVerdictValue.INCONCLUSIVE
        return ConeVerdict(value=value, evidence=q, schedule=schedule, threshold=threshold)

    def cone_verdicts(self, track: SpaceTimeTrack, V, t: float, W) -> list:
        """同一时刻一批样本的时空切锥判定"""
        family = track.main
        V = self._points(family, V)
        s = family.realize(t)
        tol = self._active_tol(s)
        off = s.distance(V) > tol
        if np.any(off):
            bad = V[np.argmax(off)]
            raise DomainError(f"点 {bad.tolist()} 不在 t={t} 的时空轨道上")
        schedule, q = self.spacetime_quotients(track, V, t, W)
        c_lin = CONE_C_LIN_FACTOR * self.lipschitz_estimate(family, t, self._points(family, W))
        verdicts = [self.classify(q[i], schedule, float(c_lin[i])) for i in range(len(V))]
        counts = {}
        for verdict in verdicts:
            counts[verdict.value.value] = counts.get(verdict.value.value, 0) + 1
            if verdict.value == ConeVerdictValue.INCONCLUSIVE:
                logger.warning(f"切锥判定不确定: t={t:.6g}, q_末={verdict.evidence[-1]:.3e}")
        record_cone_verdicts(counts)
        return verdicts

    def cone_member_spacetime(self, track: SpaceTimeTrack, v, t: float, W) -> ConeVerdict:
        """时间类前向切锥判定 (W, 1) ∈ C_{(v,t)}L"""
        return self.cone_verdicts(track, np.atleast_2d(v), t, np.atleast_2d(W))[0]

    def track_convexity_defect(self, track: SpaceTimeTrack, n: int = 9, samples: int = 16) -> float:
        """时空轨道的非凸程度：轨道上两点中点到轨道的最大距离"""
        family = track.main
        times = np.linspace(track.horizon[0], track.horizon[1], max(n, 2))
        boundary = [family.realize(t).boundary_samples(samples) for t in times]
        defect = 0.0
        for i in range(len(times)):
            for j in range(i + 1, len(times)):
                mids = (boundary[i][:, None, :] + boundary[j][None, :, :]) / 2.0
                tau = (times[i] + times[j]) / 2.0
                d = family.realize(tau).distance(mids.reshape(-1, family.dim))
                defect = max(defect, float(d.max()))
        return defect


# 创建全局几何管理器实例
geometry_manager = GeometryManager()
