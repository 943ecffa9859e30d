import logging
from typing import Optional

import numpy as np

from utils.config import config_manager
from utils.errors import DomainError
from utils.expressions import compile_expression
from modules.dynamics.models import (
    FIBER_SYMBOLS, ConstantField, ExpressionField, LinearField, RadialBumpField, RotationField,
    SquareField, ZeroField,
)

logger = logging.getLogger(__name__)

LIPSCHITZ_SAMPLES = config_manager.getint('dynamics', 'lipschitz_samples', 2000)
LIPSCHITZ_SEED = config_manager.getint('dynamics', 'lipschitz_seed', 20020517)


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C∞ 开关函数：s<=0 为 0，s>=1 为 1"""
    s = np.asarray(s, dtype=float)

    def e(z):
        z = np.clip(z, 0.0, None)
        with np.errstate(divide='ignore'):
            return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    a = e(s)
    b = e(1.0 - s)
    return a / (a + b)


class ReactionField:
    """反应项 F(x, σ, t)"""

    def __init__(self, spec, dim: int):
        """初始化反应场

        Args:
            spec: ReactionFieldSpec 变体
            dim: 纤维维数 k
        """
        required = spec.fiber_dim
        if required is not None and required != dim:
            raise DomainError(f"反应场 {spec.kind} 需要纤维维数 {required}，实际为 {dim}")
        self.spec = spec
        self.dim = dim
        self.lipschitz: Optional[float] = None
        self._exprs = None
        if isinstance(spec, ExpressionField):
            allowed = FIBER_SYMBOLS[:dim] + ("x", "y", "t")
            self._exprs = [compile_expression(text, allowed) for text in spec.components]
        if isinstance(spec, RadialBumpField):
            d = np.asarray(spec.direction, dtype=float)
            self._direction = d / np.linalg.norm(d)

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def spatially_homogeneous(self) -> bool:
        if self._exprs is None:
            return True
        return not any(e.depends_on('x') or e.depends_on('y') for e in self._exprs)

    @property
    def is_zero(self) -> bool:
        return isinstance(self.spec, ZeroField)

    def __call__(self, V, t: float, x=0.0, y=0.0) -> np.ndarray:
        """在 (x, σ, t) 处求值

        Args:
            V: (..., k) 纤维向量
            t: 时刻
            x, y: 空间坐标（可按 V 的前导形状广播）

        Returns:
            与 V 同形状的数组
        """
        V = np.asarray(V, dtype=float)
        spec = self.spec
        if isinstance(spec, ZeroField):
            return np.zeros_like(V)
        if isinstance(spec, SquareField):
            return V * V
        if isinstance(spec, ConstantField):
            return np.broadcast_to(np.asarray(spec.value, dtype=float), V.shape).copy()
        if isinstance(spec, LinearField):
            A = np.array([[float(fn.value(t)) for fn in row] for row in spec.matrix])
            return V @ A.T
        if isinstance(spec, RotationField):
            return spec.omega * np.stack([-V[..., 1], V[..., 0]], axis=-1)
        if isinstance(spec, RadialBumpField):
            level = smooth_step((V @ self._direction - spec.threshold) / spec.width)
            return spec.strength * level[..., None] * self._direction
        values = {f"s{i}": V[..., i] for i in range(self.dim)}
        lead = V.shape[:-1]
        values['x'] = np.broadcast_to(np.asarray(x, dtype=float), lead)
        values['y'] = np.broadcast_to(np.asarray(y, dtype=float), lead)
        values['t'] = np.full(lead, float(t))
        return np.stack([e(**values) for e in self._exprs], axis=-1)

    def estimate_lipschitz(self, family, x=0.0, y=0.0, n_samples: int = LIPSCHITZ_SAMPLES,
                           seed: int = LIPSCHITZ_SEED) -> float:
        """在凸集族 2 倍直径邻域内抽样差商，估计关于 σ 的 Lipschitz 常数 C_F

        同时检查 F 在该邻域上有限。
        """
        rng = np.random.default_rng(seed)
        times = family.validation_grid()
        per_time = max(n_samples // len(times), 4)
        best = 0.0
        for t in times:
            s = family.realize(t)
            diam = max(s.diameter, 1e-6)
            center = s.interior_point()
            dirs = rng.standard_normal((per_time, self.dim))
            dirs /= np.linalg.norm(dirs, axis=1)[:, None]
            radii = 3.0 * diam * rng.uniform(0.0, 1.0, per_time) ** (1.0 / self.dim)
            P = center + radii[:, None] * dirs
            P = P[s.distance(P) <= 2.0 * diam]
            if len(P) == 0:
                continue
            h = 1e-4 * diam
            steps = rng.standard_normal(P.shape)
            steps *= h / np.linalg.norm(steps, axis=1)[:, None]
            Q = P + steps
            FP = self(P, t, x, y)
            FQ = self(Q, t, x, y)
            if not (np.all(np.isfinite(FP)) and np.all(np.isfinite(FQ))):
                raise DomainError(f"反应场在 t={t:.6g} 的 2 倍直径邻域内出现非有限值")
            quotients = np.linalg.norm(FQ - FP, axis=1) / np.linalg.norm(Q - P, axis=1)
            best = max(best, float(quotients.max()))
        self.lipschitz = best
        logger.info(f"反应场 {self.kind} 的 Lipschitz 估计 C_F = {best:.4g}")
        return best
