# -*- coding: utf-8 -*-
"""
四元数 / 对偶数 / 对偶四元数代数

脚本目标:
    - 提供值语义（不可变）的四元数、对偶数、对偶四元数运算：Hamilton积、共轭、范数、极坐标形式、
      旋转、刚体变换，以及两种对偶四元数共轭和6DOF归一化。

上下文:
    - ambisonics 用 dq_normalize_6dof_array 对时频特征做单位对偶四元数约束；
    - nn_layers 的四元数/对偶四元数层以 hamilton_matrix / dual_quaternion_matrix 为测试基准。

输入:
    - Quaternion(w, x, y, z)、DualNumber(primal, dual)、DualQuaternion(primal, dual)、RigidTransform。

输出:
    - 新的值对象（所有运算都是纯函数，可在任意线程中并发调用）。

注意事项:
    - 全部使用双精度；旋转约定为夹心积 q v q*，当 q = cosθ + u·sinθ 时旋转角为 2θ（不做隐藏的半角换算）。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np

from utils import SeldValidationError

# 单位性检查容差
UNIT_TOL = 1e-9
# 6DOF 归一化时主部范数下限，低于此值视为退化输入
DEGENERATE_PRIMAL_NORM = 1e-6


class PreconditionViolation(SeldValidationError):
    """前置条件不满足（如非单位向量、非单位四元数）"""


class DegenerateInputError(SeldValidationError):
    """退化输入（如主部范数接近0，无法归一化）"""


# =========================
# 数据结构定义
# =========================

@dataclass(frozen=True)
class Quaternion:
    """四元数 w + x·i + y·j + z·k，w 为实部"""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("w", "x", "y", "z"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise PreconditionViolation(f"四元数系数必须是有限实数: {name}={value}", field=name)
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Quaternion":
        if len(values) != 4:
            raise PreconditionViolation(f"四元数需要4个系数，收到{len(values)}个")
        return cls(*(float(v) for v in values))

    @classmethod
    def pure(cls, v: Sequence[float]) -> "Quaternion":
        """纯四元数 (0, v)"""
        return cls(0.0, float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def zero(cls) -> "Quaternion":
        return cls(0.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @property
    def vector(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @property
    def is_pure(self) -> bool:
        return self.w == 0.0

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w + other.w, self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w - other.w, self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def scale(self, k: float) -> "Quaternion":
        return Quaternion(k * self.w, k * self.x, k * self.y, k * self.z)


@dataclass(frozen=True)
class DualNumber:
    """对偶数 a + ε·b，ε² = 0"""

    primal: float
    dual: float


@dataclass(frozen=True)
class DualQuaternion:
    """对偶四元数 q + ε·q_ε"""

    primal: Quaternion
    dual: Quaternion

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "DualQuaternion":
        if len(values) != 8:
            raise PreconditionViolation(f"对偶四元数需要8个系数，收到{len(values)}个")
        return cls(Quaternion.from_array(values[:4]), Quaternion.from_array(values[4:]))

    @classmethod
    def identity(cls) -> "DualQuaternion":
        return cls(Quaternion.identity(), Quaternion.zero())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.primal.as_array(), self.dual.as_array()])

    def __add__(self, other: "DualQuaternion") -> "DualQuaternion":
        return DualQuaternion(self.primal + other.primal, self.dual + other.dual)


@dataclass(frozen=True)
class RigidTransform:
    """刚体变换：单位旋转四元数 q_θ + 平移向量 t（空间单位，米）"""

    rotation: Quaternion
    translation: Tuple[float, float, float]

    def __post_init__(self):
        _require_unit(self.rotation, "rotation")
        t = tuple(float(v) for v in self.translation)
        if len(t) != 3:
            raise PreconditionViolation("平移向量必须是3维", field="translation")
        object.__setattr__(self, "translation", t)


class ConjugationKind(Enum):
    """对偶四元数的两种共轭"""

    FIRST = "first"    # (q*, q_ε*)
    SECOND = "second"  # (q*, -q_ε*)


# =========================
# 四元数运算
# =========================

def qmul(q: Quaternion, p: Quaternion) -> Quaternion:
    """Hamilton积 q ⊗ p（一般不满足交换律）"""
    return Quaternion(
        q.w * p.w - q.x * p.x - q.y * p.y - q.z * p.z,
        q.w * p.x + q.x * p.w + q.y * p.z - q.z * p.y,
        q.w * p.y - q.x * p.z + q.y * p.w + q.z * p.x,
        q.w * p.z + q.x * p.y - q.y * p.x + q.z * p.w,
    )


def hamilton_matrix(q: Quaternion) -> np.ndarray:
    """q 的左乘矩阵：q ⊗ p == hamilton_matrix(q) @ p"""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ], dtype=np.float64)


def qconj(q: Quaternion) -> Quaternion:
    return Quaternion(q.w, -q.x, -q.y, -q.z)


def qdot(q: Quaternion, p: Quaternion) -> float:
    """R^4 上的欧氏内积"""
    return q.w * p.w + q.x * p.x + q.y * p.y + q.z * p.z


def qnorm(q: Quaternion) -> float:
    return math.sqrt(qdot(q, q))


def q_from_polar(theta: float, u: Sequence[float]) -> Quaternion:
    """极坐标形式 cosθ + u·sinθ

    注意: 用于 q_rotate 时旋转角为 2θ，需要旋转角 α 时传入 θ = α/2。
    """
    ux, uy, uz = (float(v) for v in u)
    length = math.sqrt(ux * ux + uy * uy + uz * uz)
    if abs(length - 1.0) > UNIT_TOL:
        raise PreconditionViolation(f"旋转轴必须是单位向量，实际范数为 {length:.12g}", field="u")
    c, s = math.cos(theta), math.sin(theta)
    return Quaternion(c, ux * s, uy * s, uz * s)


def rotation_matrix(q: Quaternion) -> np.ndarray:
    """单位四元数对应的3×3旋转矩阵（与 q v q* 等价）"""
    _require_unit(q, "q")
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)


def q_rotate(q: Quaternion, v: Sequence[float]) -> Tuple[float, float, float]:
    """夹心积 q·(0,v)·q* 旋转三维向量"""
    _require_unit(q, "q")
    rotated = qmul(qmul(q, Quaternion.pure(v)), qconj(q))
    return rotated.vector


def _require_unit(q: Quaternion, name: str) -> None:
    norm = qnorm(q)
    if abs(norm - 1.0) > UNIT_TOL:
        raise PreconditionViolation(f"{name} 必须是单位四元数，实际范数为 {norm:.12g}", field=name)


# =========================
# 对偶数与对偶四元数运算
# =========================

def dmul(a: DualNumber, b: DualNumber) -> DualNumber:
    """对偶数乘法，ε² 项直接丢弃"""
    return DualNumber(a.primal * b.primal, a.primal * b.dual + b.primal * a.dual)


def dual_number_matrix(a: DualNumber) -> np.ndarray:
    """对偶数的矩阵形式 [[a1, 0], [a2, a1]]"""
    return np.array([[a.primal, 0.0], [a.dual, a.primal]], dtype=np.float64)


def dqmul(a: DualQuaternion, b: DualQuaternion) -> DualQuaternion:
    """对偶四元数乘积：主部 a.q⊗b.q，对偶部 a.q⊗b.q_ε + a.q_ε⊗b.q"""
    primal = qmul(a.primal, b.primal)
    dual = qmul(a.primal, b.dual) + qmul(a.dual, b.primal)
    return DualQuaternion(primal, dual)


def dual_quaternion_matrix(a: DualQuaternion) -> np.ndarray:
    """8×8 块矩阵 [[H(q), 0], [H(q_ε), H(q)]]，右上块恒为0"""
    hq = hamilton_matrix(a.primal)
    out = np.zeros((8, 8), dtype=np.float64)
    out[:4, :4] = hq
    out[4:, :4] = hamilton_matrix(a.dual)
    out[4:, 4:] = hq
    return out


def dq_conj(a: DualQuaternion, kind: Union[ConjugationKind, str] = ConjugationKind.FIRST) -> DualQuaternion:
    kind = ConjugationKind(kind)
    if kind is ConjugationKind.FIRST:
        return DualQuaternion(qconj(a.primal), qconj(a.dual))
    return DualQuaternion(qconj(a.primal), -qconj(a.dual))


def dq_self_product(a: DualQuaternion) -> DualNumber:
    """x̂·x̂ = q·q + ε(2 q·q_ε)；单位对偶四元数要求它等于 1"""
    return DualNumber(qdot(a.primal, a.primal), 2.0 * qdot(a.primal, a.dual))


def is_unit_dual_quaternion(a: DualQuaternion, tol: float = UNIT_TOL) -> bool:
    norm_sq = dq_self_product(a)
    return abs(norm_sq.primal - 1.0) <= tol and abs(norm_sq.dual) <= 2.0 * tol


def dq_normalize_6dof(a: DualQuaternion) -> DualQuaternion:
    """归一化为单位对偶四元数（6DOF）

    主部逐分量除以其范数；对偶部减去在主部上的投影（Gram–Schmidt），
    从而满足 dot(p̄,p̄)=1 与 dot(p̄,d̄)=0。
    """
    norm = qnorm(a.primal)
    if norm < DEGENERATE_PRIMAL_NORM:
        raise DegenerateInputError(f"主部范数过小({norm:.3e})，无法做6DOF归一化", field="primal")
    primal = a.primal.scale(1.0 / norm)
    projection = qdot(a.dual, a.primal) / (norm * norm)
    dual = a.dual - a.primal.scale(projection)
    return DualQuaternion(primal, dual)


def make_rigid(r: RigidTransform) -> DualQuaternion:
    """σ̂ = q_θ + (ε/2)·t·q_θ"""
    _require_unit(r.rotation, "rotation")
    dual = qmul(Quaternion.pure(r.translation), r.rotation).scale(0.5)
    return DualQuaternion(r.rotation, dual)


def apply_rigid(sigma: DualQuaternion, v: Sequence[float]) -> Tuple[float, float, float]:
    """σ̂·(1 + ε(0,v))·σ̂^{*2}，读取结果对偶部的向量部分，等价于 Rv + t"""
    if not is_unit_dual_quaternion(sigma):
        raise PreconditionViolation("sigma 必须是单位对偶四元数", field="sigma")
    point = DualQuaternion(Quaternion.identity(), Quaternion.pure(v))
    moved = dqmul(dqmul(sigma, point), dq_conj(sigma, ConjugationKind.SECOND))
    return moved.dual.vector


def rigid_translation(sigma: DualQuaternion) -> Tuple[float, float, float]:
    """从单位对偶四元数中取出平移：t = 2·q_ε·q*"""
    return qmul(sigma.dual, qconj(sigma.primal)).scale(2.0).vector


# =========================
# 向量化形式（最后一维为系数）
# =========================

def qmul_array(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """批量 Hamilton 积，q、p 形状 [..., 4]（可广播）"""
    q = np.asarray(q)
    p = np.asarray(p)
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    return np.stack([
        qw * pw - qx * px - qy * py - qz * pz,
        qw * px + qx * pw + qy * pz - qz * py,
        qw * py - qx * pz + qy * pw + qz * px,
        qw * pz + qx * py - qy * px + qz * pw,
    ], axis=-1)


def qconj_array(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q)
    return q * np.array([1.0, -1.0, -1.0, -1.0], dtype=q.dtype if q.dtype.kind == "f" else np.float64)


def dqmul_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """批量对偶四元数乘积，形状 [..., 8]（前4为主部，后4为对偶部）"""
    a = np.asarray(a)
    b = np.asarray(b)
    primal = qmul_array(a[..., :4], b[..., :4])
    dual = qmul_array(a[..., :4], b[..., 4:]) + qmul_array(a[..., 4:], b[..., :4])
    return np.concatenate([primal, dual], axis=-1)


def dq_normalize_6dof_array(primal: np.ndarray, dual: np.ndarray,
                            guard: float = DEGENERATE_PRIMAL_NORM) -> Tuple[np.ndarray, np.ndarray]:
    """批量6DOF归一化，primal/dual 形状 [..., 4]

    与 dq_normalize_6dof 不同，这里不抛错：主部范数低于 guard 的位置原样返回（特征管线的保护路径）。
    """
    primal = np.asarray(primal, dtype=np.float64)
    dual = np.asarray(dual, dtype=np.float64)
    norm_sq = np.sum(primal * primal, axis=-1, keepdims=True)
    norm = np.sqrt(norm_sq)
    valid = norm >= guard
    safe_norm = np.where(valid, norm, 1.0)
    safe_norm_sq = np.where(valid, norm_sq, 1.0)
    projection = np.sum(dual * primal, axis=-1, keepdims=True) / safe_norm_sq
    out_primal = np.where(valid, primal / safe_norm, primal)
    out_dual = np.where(valid, dual - projection * primal, dual)
    return out_primal, out_dual
