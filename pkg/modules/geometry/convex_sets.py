import itertools
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq, linprog, newton, nnls
from scipy.spatial.distance import pdist

from utils.config import config_manager
from utils.errors import DomainError, NumericError
from modules.geometry.models import BallSpec, BoxSpec, CapSpec, EllipsoidSpec, PolytopeSpec

logger = logging.getLogger(__name__)

EPS_PROJ = config_manager.getfloat('geometry', 'eps_proj', 1e-10)
MAX_NEWTON_ITER = config_manager.getint('geometry', 'max_newton_iter', 100)
MAX_DYKSTRA_ITER = config_manager.getint('geometry', 'max_dykstra_iter', 20000)


def unit_directions(k: int, n: int, phase: float = 0.0) -> np.ndarray:
    """单位方向的确定性采样

    Args:
        k: 维数
        n: 方向个数（k=1 时固定为 2）
        phase: 角度偏移（用于抖动）

    Returns:
        (m, k) 单位向量
    """
    if k == 1:
        return np.array([[1.0], [-1.0]])
    n = max(int(n), 2)
    if k == 2:
        angles = phase + 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(angles), np.sin(angles)])
    if k == 3:
        # Fibonacci 球面格点
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        golden = np.pi * (3.0 - np.sqrt(5.0))
        theta = phase + golden * np.arange(n)
        return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    rng = np.random.default_rng(0)
    d = rng.standard_normal((n, k))
    d = np.vstack([d, np.eye(k), -np.eye(k)])
    return d / np.linalg.norm(d, axis=1)[:, None]


def _rows(P) -> np.ndarray:
    return np.atleast_2d(np.asarray(P, dtype=float))


class ConvexSet:
    """某一时刻实现出的有界闭凸集"""

    dim: int = 0
    diameter: float = 0.0
    curvature: float = 0.0

    def project(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, P: np.ndarray) -> np.ndarray:
        P = _rows(P)
        return np.linalg.norm(P - self.project(P), axis=1)

    def support_gap(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def active_normals(self, v: np.ndarray, tol: float) -> np.ndarray:
        raise NotImplementedError

    def support(self, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_samples(self, n: int, phase: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def interior_point(self) -> np.ndarray:
        raise NotImplementedError

    def interior_samples(self, n: int) -> np.ndarray:
        """内部点：由内点向边界样本按比例收缩"""
        center = self.interior_point()
        boundary = self.boundary_samples(max(n, 4))
        levels = (0.25, 0.5, 0.75)
        pts = [center[None, :]]
        for lam in levels:
            pts.append(center + lam * (boundary - center))
        pts = np.vstack(pts)
        if len(pts) > n:
            idx = np.linspace(0, len(pts) - 1, n).round().astype(int)
            pts = pts[idx]
        return pts

    def scale(self) -> float:
        return max(1.0, self.diameter, float(np.linalg.norm(self.interior_point())))


class Ball(ConvexSet):
    """球 |v - c| <= R"""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise DomainError(f"球半径必须为正: {self.radius}")
        self.dim = self.center.size
        self.diameter = 2.0 * self.radius
        self.curvature = 1.0 / self.radius

    def project(self, P):
        P = _rows(P)
        d = P - self.center
        r = np.linalg.norm(d, axis=1)
        outside = r > self.radius
        scale = np.where(outside, self.radius / np.where(r > 0, r, 1.0), 1.0)
        return self.center + d * scale[:, None]

    def distance(self, P):
        P = _rows(P)
        return np.maximum(np.linalg.norm(P - self.center, axis=1) - self.radius, 0.0)

    def support_gap(self, P):
        P = _rows(P)
        return np.linalg.norm(P - self.center, axis=1) - self.radius

    def active_normals(self, v, tol):
        d = np.asarray(v, dtype=float) - self.center
        return (d / np.linalg.norm(d))[None, :]

    def support(self, U):
        U = _rows(U)
        return U @ self.center + self.radius * np.linalg.norm(U, axis=1)

    def boundary_samples(self, n, phase=0.0):
        return self.center + self.radius * unit_directions(self.dim, n, phase)

    def interior_point(self):
        return self.center.copy()


class Polytope(ConvexSet):
    """多面体 {v : A v <= b}（行已单位化）"""

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0) or A.shape[0] != b.size:
            raise DomainError("多面体约束的法向量不能为零，且行数需与 offset 一致")
        self.normals = A / norms[:, None]
        self.offsets = b / norms
        self.dim = A.shape[1]
        self._vertices: Optional[np.ndarray] = None
        self._faces: Optional[List[Tuple[np.ndarray, np.ndarray, np.ndarray]]] = None
        verts = self.vertices()
        if len(verts) == 0:
            raise DomainError("多面体为空或无界（没有顶点）")
        self.diameter = float(pdist(verts).max()) if len(verts) > 1 else 0.0
        self.curvature = 0.0

    def _feas_tol(self) -> float:
        return 1e-11 * max(1.0, float(np.abs(self.offsets).max()))

    def validate(self):
        """用线性规划检查可行且有界"""
        k = self.dim
        for i in range(k):
            for sign in (1.0, -1.0):
                c = np.zeros(k)
                c[i] = -sign
                res = linprog(c, A_ub=self.normals, b_ub=self.offsets, bounds=[(None, None)] * k, method='highs')
                if res.status == 2:
                    raise DomainError("多面体不可行（空集）")
                if res.status == 3:
                    raise DomainError("多面体无界")

    def vertices(self) -> np.ndarray:
        """枚举顶点：任取 k 个约束求交点并检查可行性"""
        if self._vertices is not None:
            return self._vertices
        k = self.dim
        tol = 1e-9 * max(1.0, float(np.abs(self.offsets).max()))
        found = []
        for subset in itertools.combinations(range(len(self.offsets)), k):
            M = self.normals[list(subset)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            x = np.linalg.solve(M, self.offsets[list(subset)])
            if np.max(self.normals @ x - self.offsets) <= tol:
                found.append(x)
        if not found:
            self._vertices = np.zeros((0, k))
        else:
            self._vertices = np.unique(np.round(np.array(found), 12), axis=0)
        return self._vertices

    def _subsets(self):
        """面枚举：所有线性无关的约束子集及其投影矩阵"""
        if self._faces is None:
            faces = []
            m = len(self.offsets)
            for size in range(1, self.dim + 1):
                for subset in itertools.combinations(range(m), size):
                    M = self.normals[list(subset)]
                    if np.linalg.matrix_rank(M) < size:
                        continue
                    faces.append((M, self.offsets[list(subset)], np.linalg.inv(M @ M.T)))
            self._faces = faces
        return self._faces

    def project(self, P):
        P = _rows(P)
        if self.dim <= 3:
            return self._project_faces(P)
        return np.array([self._project_dykstra(p) for p in P])

    def _project_faces(self, P):
        tol = self._feas_tol()
        feasible = np.max(P @ self.normals.T - self.offsets, axis=1) <= tol
        best = P.copy()
        best_dist = np.where(feasible, 0.0, np.inf)
        for M, b, G in self._subsets():
            X = P - ((P @ M.T - b) @ G) @ M
            ok = np.max(X @ self.normals.T - self.offsets, axis=1) <= tol
            dist = np.where(ok, np.linalg.norm(P - X, axis=1), np.inf)
            better = dist < best_dist
            best[better] = X[better]
            best_dist[better] = dist[better]
        if not np.all(np.isfinite(best_dist)):
            raise NumericError("多面体面枚举投影失败", residual=float("inf"))
        return best

    def _project_dykstra(self, p):
        """Dykstra 交替投影 + 活动集精修，并以非负最小二乘残差作为证书"""
        m = len(self.offsets)
        x = p.copy()
        incr = np.zeros((m, self.dim))
        tol = EPS_PROJ * max(1.0, float(np.linalg.norm(p)))
        for _ in range(MAX_DYKSTRA_ITER):
            x_prev = x.copy()
            for a in range(m):
                y = x + incr[a]
                viol = self.normals[a] @ y - self.offsets[a]
                x = y - max(viol, 0.0) * self.normals[a]
                incr[a] = y - x
            if np.max(self.normals @ x - self.offsets) <= tol and np.linalg.norm(x - x_prev) <= tol:
                break
        if np.max(self.normals @ p - self.offsets) <= self._feas_tol():
            return p.copy()
        # 活动集精修
        scale = max(1.0, float(np.abs(self.offsets).max()))
        active = np.where(self.normals @ x - self.offsets >= -1e-6 * scale)[0]
        if active.size:
            M = self.normals[active]
            lam, _ = nnls(M.T, p - x)
            keep = active[lam > 0]
            if keep.size and np.linalg.matrix_rank(self.normals[keep]) == keep.size:
                Mk = self.normals[keep]
                polished = p - ((Mk @ p - self.offsets[keep]) @ np.linalg.inv(Mk @ Mk.T)) @ Mk
                if np.max(self.normals @ polished - self.offsets) <= self._feas_tol():
                    x = polished
        active = np.where(self.normals @ x - self.offsets >= -1e-9 * scale)[0]
        if active.size == 0:
            gap = float(np.linalg.norm(p - x))
        else:
            _, gap = nnls(self.normals[active].T, p - x)
        gap = max(gap, float(np.max(self.normals @ x - self.offsets)), 0.0)
        if gap > EPS_PROJ * max(1.0, float(np.linalg.norm(p - x))):
            raise NumericError("交替投影未能证明最优性", residual=gap)
        return x

    def facet_gap(self, P):
        P = _rows(P)
        return np.max(P @ self.normals.T - self.offsets, axis=1)

    def support_gap(self, P):
        P = _rows(P)
        dist = self.distance(P)
        return np.where(dist > 0, dist, self.facet_gap(P))

    def active_normals(self, v, tol):
        v = np.asarray(v, dtype=float)
        active = np.abs(self.normals @ v - self.offsets) <= tol
        return self.normals[active]

    def support(self, U):
        return (_rows(U) @ self.vertices().T).max(axis=1)

    def boundary_samples(self, n, phase=0.0):
        verts = self.vertices()
        if self.dim == 1:
            return verts
        tol = 1e-9 * max(1.0, float(np.abs(self.offsets).max()))
        facets = []
        for a in range(len(self.offsets)):
            on = verts[np.abs(verts @ self.normals[a] - self.offsets[a]) <= tol]
            if len(on) >= self.dim:
                facets.append(on)
        per_facet = max(4, n // max(len(facets), 1))
        pts = [verts]
        for on in facets:
            centroid = on.mean(axis=0)
            anchors = [*on, *[(on[i] + on[j]) / 2.0 for i, j in itertools.combinations(range(len(on)), 2)]]
            levels = max(1, per_facet // max(len(anchors), 1))
            pts.append(centroid[None, :])
            for lam in np.arange(1, levels + 1) / levels:
                pts.append(centroid + lam * (np.array(anchors) - centroid))
        return np.unique(np.round(np.vstack(pts), 12), axis=0)

    def interior_point(self):
        return self.vertices().mean(axis=0)


class Box(Polytope):
    """坐标盒 lower <= v <= upper"""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.asarray(upper, dtype=float).reshape(-1)
        if np.any(self.lower > self.upper):
            raise DomainError(f"盒子下界大于上界: {self.lower} > {self.upper}")
        k = self.lower.size
        self.dim = k
        self.normals = np.vstack([np.eye(k), -np.eye(k)])
        self.offsets = np.concatenate([self.upper, -self.lower])
        self._vertices = None
        self._faces = None
        self.diameter = float(np.linalg.norm(self.upper - self.lower))
        self.curvature = 0.0

    def vertices(self):
        if self._vertices is None:
            corners = itertools.product(*zip(self.lower, self.upper))
            self._vertices = np.unique(np.array(list(corners), dtype=float), axis=0)
        return self._vertices

    def validate(self):
        return None

    def project(self, P):
        return np.clip(_rows(P), self.lower, self.upper)

    def support(self, U):
        U = _rows(U)
        return np.maximum(U * self.lower, U * self.upper).sum(axis=1)

    def boundary_samples(self, n, phase=0.0):
        k = self.dim
        if k == 1:
            return self.vertices()
        per_dim = max(2, int(math.ceil((max(n, 2 * k) / (2 * k)) ** (1.0 / (k - 1)))))
        grids = [np.linspace(lo, hi, per_dim) for lo, hi in zip(self.lower, self.upper)]
        pts = []
        for i in range(k):
            others = [grids[j] for j in range(k) if j != i]
            mesh = np.array(list(itertools.product(*others)))
            for side in (self.lower[i], self.upper[i]):
                face = np.insert(mesh, i, side, axis=1)
                pts.append(face)
        return np.unique(np.round(np.vstack(pts), 12), axis=0)

    def interior_point(self):
        return (self.lower + self.upper) / 2.0


class Ellipsoid(ConvexSet):
    """椭球 (v-c)^T Q (v-c) <= 1"""

    def __init__(self, center, shape):
        self.center = np.asarray(center, dtype=float)
        Q = np.asarray(shape, dtype=float)
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(Q).max()))):
            raise DomainError("椭球形状矩阵必须对称")
        a, U = np.linalg.eigh((Q + Q.T) / 2.0)
        if not np.all(a > 0):
            raise DomainError(f"椭球形状矩阵必须正定，特征值 {a}")
        self.shape = (Q + Q.T) / 2.0
        self.eigvals = a
        self.eigvecs = U
        self.inverse = U @ np.diag(1.0 / a) @ U.T
        self.dim = self.center.size
        self.diameter = 2.0 / math.sqrt(a.min())
        self.curvature = a.max() / math.sqrt(a.min())

    def _coords(self, P):
        return (_rows(P) - self.center) @ self.eigvecs

    def _multiplier(self, Y):
        """外部点的 Lagrange 乘子：phi(lam) = sum a y^2/(1+lam a)^2 - 1 = 0"""
        a = self.eigvals
        w = a * Y ** 2

        def phi(lam):
            return (w / (1.0 + lam[:, None] * a) ** 2).sum(axis=1) - 1.0

        def dphi(lam):
            return -2.0 * (w * a / (1.0 + lam[:, None] * a) ** 3).sum(axis=1)

        n = len(Y)
        if n == 1:
            # 单点时复制一行，保证 newton 走数组分支
            Y = np.vstack([Y, Y])
            w = a * Y ** 2
        root, converged, _ = newton(phi, np.zeros(len(Y)), fprime=dphi, tol=EPS_PROJ,
                                    maxiter=MAX_NEWTON_ITER, full_output=True)
        root = np.asarray(root, dtype=float)[:n]
        converged = np.asarray(converged)[:n]
        if not np.all(converged):
            residual = float(np.max(np.abs(phi(root))))
            raise NumericError(f"椭球投影 Newton 迭代 {MAX_NEWTON_ITER} 次未收敛", residual=residual)
        return root

    def _solve(self, P):
        Y = self._coords(P)
        level = (self.eigvals * Y ** 2).sum(axis=1)
        lam = np.zeros(len(Y))
        outside = level > 1.0
        if outside.any():
            lam[outside] = self._multiplier(Y[outside])
        return Y, lam

    def project(self, P):
        Y, lam = self._solve(P)
        X = Y / (1.0 + lam[:, None] * self.eigvals)
        return self.center + X @ self.eigvecs.T

    def distance(self, P):
        Y, lam = self._solve(P)
        la = lam[:, None] * self.eigvals
        return np.linalg.norm(Y * la / (1.0 + la), axis=1)

    def _inner_distance(self, y):
        """内部点到边界的距离，乘子位于 (-1/a_max, 0)"""
        a = self.eigvals
        a_max = a.max()
        top = np.isclose(a, a_max, rtol=1e-12, atol=0.0)

        def phi(lam):
            return float((a * y ** 2 / (1.0 + lam * a) ** 2).sum() - 1.0)

        lo = -(1.0 - 1e-12) / a_max
        if phi(0.0) >= 0.0:
            return 0.0
        if phi(lo) > 0.0:
            lam = brentq(phi, lo, 0.0, xtol=1e-16, rtol=4.5e-16)
            x = y / (1.0 + lam * a)
        else:
            # 退化情形：最长轴方向分量为零
            x = np.zeros_like(y)
            x[~top] = y[~top] / (1.0 - a[~top] / a_max)
            rest = 1.0 - float((a[~top] * x[~top] ** 2).sum())
            first = int(np.where(top)[0][0])
            x[first] = math.sqrt(max(rest, 0.0) / a_max)
        return float(np.linalg.norm(y - x))

    def support_gap(self, P):
        P = _rows(P)
        dist = self.distance(P)
        gap = dist.copy()
        Y = self._coords(P)
        for i in np.where(dist <= 0.0)[0]:
            gap[i] = -self._inner_distance(Y[i])
        return gap

    def active_normals(self, v, tol):
        g = self.shape @ (np.asarray(v, dtype=float) - self.center)
        return (g / np.linalg.norm(g))[None, :]

    def support(self, U):
        U = _rows(U)
        return U @ self.center + np.sqrt(np.einsum('ij,jk,ik->i', U, self.inverse, U))

    def boundary_samples(self, n, phase=0.0):
        D = unit_directions(self.dim, n, phase)
        return self.center + (D / np.sqrt(self.eigvals)) @ self.eigvecs.T

    def interior_point(self):
        return self.center.copy()


class Cap(ConvexSet):
    """球冠 Ball(c, R) ∩ {v : d.v >= threshold}"""

    def __init__(self, center, radius: float, direction, threshold: float):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        norm = float(np.linalg.norm(direction))
        self.direction = np.asarray(direction, dtype=float) / norm
        self.threshold = float(threshold) / norm
        self.dim = self.center.size
        if not self.radius > 0:
            raise DomainError(f"球冠半径必须为正: {self.radius}")
        self.height = self.threshold - float(self.direction @ self.center)
        if self.height >= self.radius:
            raise DomainError("球冠为空或退化为一点")
        self.has_rim = abs(self.height) < self.radius
        self.rim_center = self.center + self.height * self.direction
        self.rim_radius = math.sqrt(max(self.radius ** 2 - self.height ** 2, 0.0)) if self.has_rim else 0.0
        self.diameter = 2.0 * self.radius if self.height <= 0 else 2.0 * self.rim_radius
        self.curvature = 1.0 / self.radius
        self._basis = null_space(self.direction[None, :]) if self.dim > 1 else np.zeros((1, 0))

    def _inside(self, P, tol=0.0):
        return ((np.linalg.norm(P - self.center, axis=1) <= self.radius + tol)
                & (P @ self.direction >= self.threshold - tol))

    def project(self, P):
        P = _rows(P)
        tol = 1e-12 * max(1.0, self.radius)
        d = P - self.center
        r = np.linalg.norm(d, axis=1)
        safe = np.where(r > 0, r, 1.0)
        ball = np.where((r > 0)[:, None], self.center + d * (self.radius / safe)[:, None],
                        self.center + self.radius * self.direction)
        plane = P - (P @ self.direction - self.threshold)[:, None] * self.direction
        candidates = [
            (ball, ball @ self.direction >= self.threshold - tol),
            (plane, np.linalg.norm(plane - self.center, axis=1) <= self.radius + tol),
        ]
        if self.has_rim:
            if self.dim == 1:
                rim = np.repeat(self.rim_center[None, :], len(P), axis=0)
            else:
                w = plane - self.rim_center
                wn = np.linalg.norm(w, axis=1)
                fallback = self._basis[:, 0]
                unit = np.where((wn > 0)[:, None], w / np.where(wn > 0, wn, 1.0)[:, None], fallback)
                rim = self.rim_center + self.rim_radius * unit
            candidates.append((rim, np.ones(len(P), dtype=bool)))
        best = P.copy()
        best_dist = np.where(self._inside(P), 0.0, np.inf)
        for X, ok in candidates:
            dist = np.where(ok, np.linalg.norm(P - X, axis=1), np.inf)
            better = dist < best_dist
            best[better] = X[better]
            best_dist[better] = dist[better]
        return best

    def support_gap(self, P):
        P = _rows(P)
        dist = self.distance(P)
        inner = np.maximum(np.linalg.norm(P - self.center, axis=1) - self.radius,
                           self.threshold - P @ self.direction)
        return np.where(dist > 0, dist, inner)

    def active_normals(self, v, tol):
        v = np.asarray(v, dtype=float)
        normals = []
        d = v - self.center
        if abs(np.linalg.norm(d) - self.radius) <= tol:
            normals.append(d / np.linalg.norm(d))
        if abs(v @ self.direction - self.threshold) <= tol:
            normals.append(-self.direction)
        return np.array(normals).reshape(-1, self.dim)

    def support(self, U):
        U = _rows(U)
        norms = np.linalg.norm(U, axis=1)
        top = self.center + self.radius * U / np.where(norms > 0, norms, 1.0)[:, None]
        ball_value = U @ self.center + self.radius * norms
        if not self.has_rim:
            return ball_value
        along = U @ self.direction
        perp = np.linalg.norm(U - along[:, None] * self.direction, axis=1)
        rim_value = U @ self.rim_center + self.rim_radius * perp
        return np.where(top @ self.direction >= self.threshold, ball_value, rim_value)

    def boundary_samples(self, n, phase=0.0):
        sphere = self.center + self.radius * unit_directions(self.dim, n, phase)
        pts = [sphere[sphere @ self.direction >= self.threshold]]
        if self.has_rim:
            pts.append(self.rim_center[None, :])
            if self.dim > 1:
                m = max(4, n // 8)
                inplane = unit_directions(self.dim - 1, m, phase) @ self._basis.T
                for frac in (1.0 / 3.0, 2.0 / 3.0, 1.0):
                    pts.append(self.rim_center + frac * self.rim_radius * inplane)
        return np.vstack(pts)

    def interior_point(self):
        far = self.center + self.radius * self.direction
        near = self.rim_center if self.has_rim else self.center - self.radius * self.direction
        return (far + near) / 2.0


def realize(spec, t: float) -> ConvexSet:
    """在时刻 t 把配置实现为具体凸集

    Args:
        spec: ConvexSetSpec 的某个变体
        t: 时刻

    Returns:
        ConvexSet 实例
    """
    def vec(fns):
        return np.array([float(fn.value(t)) for fn in fns])

    if isinstance(spec, BallSpec):
        return Ball(vec(spec.center), float(spec.radius.value(t)))
    if isinstance(spec, BoxSpec):
        return Box(vec(spec.lower), vec(spec.upper))
    if isinstance(spec, PolytopeSpec):
        A = np.array([vec(c.normal) for c in spec.constraints])
        b = np.array([float(c.offset.value(t)) for c in spec.constraints])
        return Polytope(A, b)
    if isinstance(spec, EllipsoidSpec):
        return Ellipsoid(vec(spec.center), np.array([vec(row) for row in spec.shape]))
    if isinstance(spec, CapSpec):
        return Cap(vec(spec.center), float(spec.radius.value(t)), spec.direction, float(spec.threshold.value(t)))
    raise DomainError(f"未知的凸集类型: {type(spec).__name__}")
