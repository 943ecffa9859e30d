import logging
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from utils.config import config_manager
from utils.errors import BlowUpError, ConfigError, DomainError
from utils.expressions import compile_expression
from utils.metrics import record_pde_steps
from modules.geometry.geometry_manager import EPS_GEO, ConvexFamily, SpaceTimeTrack
from modules.dynamics.dynamics_manager import dynamics_manager
from modules.dynamics.models import Trajectory
from modules.dynamics.reaction import ReactionField
from modules.field.models import (
    GRADIENT_VARIABLES, SPATIAL_VARIABLES, GradientSpec, ManifoldGridSpec, PdeConfigSpec, Section,
)

logger = logging.getLogger(__name__)

RECORD_EVERY = config_manager.getint('field', 'record_every', 10)
CFL_FRACTION = config_manager.getfloat('field', 'cfl_fraction', 1.0)
GRADIENT_CFL_FACTOR = config_manager.getfloat('field', 'gradient_cfl_factor', 0.8)


class ManifoldGrid:
    """圆周或平坦环面上的均匀周期网格"""

    def __init__(self, spec: ManifoldGridSpec):
        self.spec = spec
        self.shape = spec.shape
        self.dims = spec.dims
        self.spacing = spec.spacing
        axes = [h * np.arange(n) for h, n in zip(self.spacing, self.shape)]
        if self.dims == 1:
            self.x = axes[0]
            self.y = np.zeros_like(self.x)
        else:
            self.x, self.y = np.meshgrid(axes[0], axes[1], indexing='ij')

    @property
    def h(self) -> float:
        return min(self.spacing)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def rho(self, t: float) -> float:
        return float(self.spec.metric_scale.value(t))

    def rho_min(self, horizon) -> float:
        """区间上 ρ(t) 的最小值（密集抽样）"""
        self.spec.metric_scale.check_domain(tuple(horizon))
        ts = np.linspace(horizon[0], horizon[1], 2001)
        rho = np.asarray(self.spec.metric_scale.value(ts), dtype=float)
        if not np.all(np.isfinite(rho)) or rho.min() <= 0:
            raise DomainError("度量缩放 ρ(t) 在区间上必须为正且有限")
        return float(rho.min())

    def dt_bound(self, horizon, with_gradient: bool) -> float:
        """显式格式稳定性上界 0.5·ρ_min²·h²/(2·dims)，有梯度项时再乘 0.8"""
        bound = 0.5 * self.rho_min(horizon) ** 2 * self.h ** 2 / (2.0 * self.dims)
        return bound * GRADIENT_CFL_FACTOR if with_gradient else bound

    def check(self, s: Section):
        if s.values.shape[:-1] != self.shape:
            raise DomainError(f"截面形状 {s.values.shape[:-1]} 与网格 {self.shape} 不一致")


def stable_dt(grid_spec: ManifoldGridSpec, horizon, with_gradient: bool,
              fraction: float = CFL_FRACTION) -> float:
    """恰好整除区间长度且不超过稳定性上界的步长"""
    bound = ManifoldGrid(grid_spec).dt_bound(horizon, with_gradient)
    length = horizon[1] - horizon[0]
    return length / math.ceil(length / (fraction * bound))


class PdeProblem:
    """由 PdeConfigSpec 组装出的可运行问题"""

    def __init__(self, spec: PdeConfigSpec, validate: bool = True):
        """组装并校验

        Raises:
            ConfigError: 路径相对于 PdeConfig（track.avoidance、dt、initial 等）
        """
        self.spec = spec
        self.horizon = (float(spec.horizon[0]), float(spec.horizon[1]))
        self.grid = ManifoldGrid(spec.grid)
        self.track = self._build_track(validate)
        self.field = ReactionField(spec.field, self.track.dim)
        self.gradient = [compile_expression(text, GRADIENT_VARIABLES) for text in spec.gradient.components]
        self.has_gradient = bool(self.gradient) and not spec.gradient.is_zero
        try:
            bound = self.grid.dt_bound(self.horizon, self.has_gradient)
        except (DomainError, ValueError) as e:
            raise ConfigError("grid.metric_scale", str(e))
        self.dt_bound = bound
        self.dt = spec.dt if spec.dt is not None else stable_dt(spec.grid, self.horizon, self.has_gradient)
        if self.dt > bound * (1.0 + 1e-12):
            raise ConfigError("dt", f"dt={self.dt:.6g} 超过稳定性上界 {bound:.6g} (CFL: 0.5·ρ_min²·h²/(2·dims))")
        self.x_star = tuple((list(spec.representative_point) + [0.0, 0.0])[:2])
        if validate:
            self._check_initial()

    def _build_track(self, validate: bool) -> SpaceTimeTrack:
        track_spec = self.spec.track
        try:
            main = ConvexFamily(track_spec.main, self.horizon, validate=validate)
        except DomainError as e:
            raise ConfigError("track.main", e.message)
        if track_spec.avoidance is None:
            return SpaceTimeTrack(main)
        try:
            avoidance = ConvexFamily(track_spec.avoidance, self.horizon, validate=validate)
            return SpaceTimeTrack(main, avoidance, validate=validate)
        except DomainError as e:
            raise ConfigError("track.avoidance", e.message)

    def initial_section(self) -> Section:
        values = []
        for text in self.spec.initial:
            expr = compile_expression(text, SPATIAL_VARIABLES)
            values.append(expr(x=self.grid.x, y=self.grid.y))
        return Section(values=np.stack(values, axis=-1), time=self.horizon[0])

    def _check_initial(self):
        s = self.initial_section()
        if not s.is_finite():
            raise ConfigError("initial", "初值包含非有限值")
        t0 = self.horizon[0]
        main = self.track.main.realize(t0)
        excess = float(main.distance(s.flat()).max())
        if excess > EPS_GEO * max(1.0, main.diameter):
            raise ConfigError("initial", f"初值不在 K(t_start) 内 (超出 {excess:.3e})")
        if self.track.avoidance is not None:
            margin = float(self.track.avoidance.realize(t0).distance(s.flat()).min())
            if margin <= EPS_GEO:
                raise ConfigError("initial", "初值进入了回避集 A(t_start)")


class FieldManager:
    """线方法：周期差分的拉普拉斯与梯度项，RK4 时间推进"""

    def laplacian(self, grid: ManifoldGrid, t: float, s: Section) -> Section:
        """Δ(t)σ：各方向二阶中心差分（周期），乘以 ρ(t)^-2"""
        grid.check(s)
        return Section(values=self._laplacian(grid, t, s.values), time=s.time)

    def _laplacian(self, grid, t, v):
        out = np.zeros_like(v)
        for axis, h in enumerate(grid.spacing):
            out += (np.roll(v, -1, axis=axis) + np.roll(v, 1, axis=axis) - 2.0 * v) / (h * h)
        return out / grid.rho(t) ** 2

    def gradient_term(self, u: Sequence, grid: ManifoldGrid, t: float, s: Section) -> Section:
        """Σ_i u^i(x,t)·(中心差分)/(ρ(t)·h)

        Args:
            u: 每个方向的系数表达式（CompiledExpression 或字符串），空表示 u ≡ 0
        """
        grid.check(s)
        u = self._coefficients(u)
        return Section(values=self._gradient(u, grid, t, s.values), time=s.time)

    def _coefficients(self, u):
        if isinstance(u, GradientSpec):
            u = u.components
        return [compile_expression(c, GRADIENT_VARIABLES) if isinstance(c, str) else c for c in u]

    def _gradient(self, u, grid, t, v):
        out = np.zeros_like(v)
        if not u:
            return out
        if len(u) != grid.dims:
            raise DomainError(f"梯度系数个数 {len(u)} 与网格维数 {grid.dims} 不一致")
        rho = grid.rho(t)
        for axis, (coeff, h) in enumerate(zip(u, grid.spacing)):
            c = coeff(x=grid.x, y=grid.y, t=np.full(grid.shape, float(t)))
            diff = (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2.0 * rho * h)
            out += c[..., None] * diff
        return out

    def rhs(self, problem: PdeProblem, t: float, v: np.ndarray) -> np.ndarray:
        """半离散右端 Δσ + u(∇σ) + F"""
        grid = problem.grid
        out = self._laplacian(grid, t, v)
        if problem.has_gradient:
            out += self._gradient(problem.gradient, grid, t, v)
        if not problem.field.is_zero:
            out += problem.field(v, t, grid.x, grid.y)
        return out

    def step_pde(self, problem: PdeProblem, state: Section, dt: Optional[float] = None) -> Section:
        """一个 RK4 步"""
        problem.grid.check(state)
        h = problem.dt if dt is None else dt
        t = state.time
        v = state.values
        k1 = self.rhs(problem, t, v)
        k2 = self.rhs(problem, t + 0.5 * h, v + 0.5 * h * k1)
        k3 = self.rhs(problem, t + 0.5 * h, v + 0.5 * h * k2)
        k4 = self.rhs(problem, t + h, v + h * k3)
        nxt = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            raise BlowUpError("偏微分方程推进出现非有限值", last_time=t, last_state=state)
        return Section(values=nxt, time=t + h)

    def run_simulation(self, problem: PdeProblem, monitor=None, record_every: int = RECORD_EVERY,
                       hooks: Iterable[Callable[[Section], None]] = ()):
        """从 t_start 推进到 t_end，每 record_every 步（以及首末状态）调用监控

        Args:
            problem: PdeProblem
            monitor: 记录器，需提供 record(section) 与 series()；默认新建监控记录器
            record_every: 记录间隔步数
            hooks: 额外回调

        Returns:
            (最终截面, MonitorSeries)
        """
        if record_every < 1:
            raise DomainError("record_every 必须 >= 1")
        if monitor is None:
            from modules.monitor.monitor_manager import monitor_manager
            monitor = monitor_manager.recorder(problem.track)
        hooks = list(hooks)
        t0, t1 = problem.horizon
        n_steps = max(int(math.ceil((t1 - t0) / problem.dt - 1e-9)), 1)
        state = problem.initial_section()

        def observe(s):
            monitor.record(s)
            for hook in hooks:
                hook(s)

        observe(state)
        logger.info(f"开始模拟: 网格 {problem.grid.shape}, dt={problem.dt:.6g}, {n_steps} 步")
        for i in range(n_steps):
            target = t1 if i == n_steps - 1 else t0 + (i + 1) * problem.dt
            try:
                state = self.step_pde(problem, state, dt=target - state.time)
            except BlowUpError as e:
                e.partial = monitor.series()
                record_pde_steps(i)
                raise
            state = Section(values=state.values, time=target)
            if (i + 1) % record_every == 0 or i == n_steps - 1:
                observe(state)
        record_pde_steps(n_steps)
        series = monitor.series()
        logger.info(f"模拟完成: t={state.time:.6g}, max f = {max(series.f):.3e}")
        return state, series

    def spatially_constant_oracle(self, problem: PdeProblem, value: Optional[Sequence[float]] = None,
                                  dt: Optional[float] = None) -> Trajectory:
        """空间常数初值下 PDE 退化为纤维 ODE，直接积分作为精确参照"""
        if not problem.field.spatially_homogeneous:
            raise DomainError("反应场依赖空间坐标，无法退化为纤维 ODE")
        if value is None:
            flat = problem.initial_section().flat()
            if not np.allclose(flat, flat[0], rtol=0.0, atol=0.0):
                raise DomainError("初值不是空间常数")
            value = flat[0]
        t0, t1 = problem.horizon
        return dynamics_manager.integrate_fiber(problem.field, problem.x_star, value, t0, t1,
                                                problem.dt if dt is None else dt)


# 创建全局场管理器实例
field_manager = FieldManager()
