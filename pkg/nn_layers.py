# -*- coding: utf-8 -*-
"""
实数 / 四元数 / 对偶四元数神经网络层（前向 + 手推反向）

脚本目标:
    - 实现全连接、二维卷积、一维空洞卷积三类混合层在三种代数下的前向与梯度，
      以及批归一化、池化、dropout、GTU、逐元素激活等辅助层，并提供有限差分梯度校验。

上下文:
    - seld_model 用这些层拼出 DualQSELD-TCN 的层图；trainer 用 backward 得到的梯度做 Adam 更新。
    - 超复数权重只存自由参数（每个分量一个实矩阵），前向时按 Hamilton 积 / 对偶积的块结构
      实化为实矩阵，反向时把实矩阵梯度投影回各分量（实化的伴随映射）。

输入:
    - 通道在最后一维的 numpy 数组：全连接 [..., C]，卷积 [B, T, F, C]。

通道布局约定:
    - 四元数: 每个单元占4个连续通道 (w, x, y, z)；
    - 对偶四元数: 每个单元占8个连续通道 [主部 w,x,y,z | 对偶部 w,x,y,z]，
      与特征张量中“麦克风A四通道后接麦克风B四通道”的排列一致。

输出:
    - 层对象（forward / backward / param_count / describe）与函数式接口
      fc_forward / qfc_forward / dualqfc_forward / conv2d_forward / dilated_conv1d_forward /
      gtu / batch_norm_forward / max_pool_freq / backward / param_count。
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from hypercomplex import Quaternion, hamilton_matrix
from utils import SeldValidationError

Tensor = np.ndarray


class BackwardBeforeForwardError(SeldValidationError):
    """在没有记录前向的层上调用 backward"""


# =========================
# 代数与权重实化
# =========================

class Algebra(Enum):
    """层的代数类型"""

    REAL = "real"
    QUATERNION = "quaternion"
    DUALQ = "dualq"

    @property
    def dim(self) -> int:
        return {"real": 1, "quaternion": 4, "dualq": 8}[self.value]


def _quaternion_units() -> List[np.ndarray]:
    # E_c 满足 H(q) = Σ_c q_c·E_c
    return [hamilton_matrix(Quaternion(*np.eye(4)[c])) for c in range(4)]


def algebra_basis(algebra: Algebra) -> Tuple[List[str], np.ndarray]:
    """返回 (分量名, 基矩阵 [n_comp, dim, dim])，实化矩阵 = Σ_c kron(W_c, B_c)"""
    algebra = Algebra(algebra)
    if algebra is Algebra.REAL:
        return ["W"], np.ones((1, 1, 1))
    units = _quaternion_units()
    if algebra is Algebra.QUATERNION:
        return ["W_w", "W_x", "W_y", "W_z"], np.stack(units)
    diagonal = np.eye(2)
    lower = np.array([[0.0, 0.0], [1.0, 0.0]])
    primal = [np.kron(diagonal, e) for e in units]
    dual = [np.kron(lower, e) for e in units]
    names = ["Q_w", "Q_x", "Q_y", "Q_z", "Qe_w", "Qe_x", "Qe_y", "Qe_z"]
    return names, np.stack(primal + dual)


def realize_weight(algebra: Algebra, weight: np.ndarray) -> np.ndarray:
    """自由参数 [n_comp, kt, kf, n_out, n_in] → 实矩阵 [kt·kf, C_in, C_out]（x @ M 约定）"""
    _, basis = algebra_basis(algebra)
    n_comp, kt, kf, n_out, n_in = weight.shape
    dim = basis.shape[-1]
    taps = weight.reshape(n_comp, kt * kf, n_out, n_in)
    real = np.einsum("ctoi,cab->toaib", taps, basis.astype(weight.dtype))
    real = real.reshape(kt * kf, n_out * dim, n_in * dim)
    return np.ascontiguousarray(real.transpose(0, 2, 1))


def realize_weight_adjoint(algebra: Algebra, grad_real: np.ndarray, weight_shape: Tuple[int, ...]) -> np.ndarray:
    """realize_weight 的伴随：实矩阵梯度 → 各分量梯度（共享子矩阵的梯度在此累加）"""
    _, basis = algebra_basis(algebra)
    n_comp, kt, kf, n_out, n_in = weight_shape
    dim = basis.shape[-1]
    g = grad_real.transpose(0, 2, 1).reshape(kt * kf, n_out, dim, n_in, dim)
    grad = np.einsum("toaib,cab->ctoi", g, basis.astype(grad_real.dtype))
    return grad.reshape(weight_shape)


def halves_permutation(n_units: int) -> np.ndarray:
    """对偶四元数通道从“逐单元交错”到“全部主部 | 全部对偶部”的排列"""
    primal = [8 * u + b for u in range(n_units) for b in range(4)]
    dual = [8 * u + 4 + b for u in range(n_units) for b in range(4)]
    return np.array(primal + dual)


def realized_halves_matrix(weight: np.ndarray) -> np.ndarray:
    """对偶四元数权重按 (主部, 对偶部) 半区排列的实矩阵（数学约定 y = M x）

    结果为 [[Q, 0], [Q_ε, Q]]，右上块恒为零。
    """
    n_comp, kt, kf, n_out, n_in = weight.shape
    if n_comp != 8 or kt * kf != 1:
        raise SeldValidationError("只支持单抽头的对偶四元数权重", field="weight")
    real = realize_weight(Algebra.DUALQ, weight)[0].T  # [C_out, C_in]
    rows = halves_permutation(n_out)
    cols = halves_permutation(n_in)
    return real[np.ix_(rows, cols)]


def _check_channels(algebra: Algebra, channels: int, what: str) -> int:
    dim = Algebra(algebra).dim
    if channels % dim != 0:
        raise SeldValidationError(
            f"{what}通道数{channels}不能被{Algebra(algebra).value}代数维度{dim}整除", field="channels")
    return channels // dim


def init_weight(algebra: Algebra, in_channels: int, out_channels: int, kernel: Tuple[int, int],
                rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """按实化后的扇入做缩放均匀初始化（扇入 = C_in·抽头数，即单元数的 dim 倍）"""
    names, _ = algebra_basis(algebra)
    n_in = _check_channels(algebra, in_channels, "输入")
    n_out = _check_channels(algebra, out_channels, "输出")
    fan_in = in_channels * kernel[0] * kernel[1]
    bound = math.sqrt(3.0 / fan_in)
    shape = (len(names), kernel[0], kernel[1], n_out, n_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# =========================
# 公共数据结构
# =========================

@dataclass
class LayerGrad:
    """一次反向的结果：参数梯度（与参数同形）+ 各输入的梯度"""

    params: Dict[str, np.ndarray] = field(default_factory=dict)
    inputs: List[np.ndarray] = field(default_factory=list)

    @property
    def input(self) -> np.ndarray:
        return self.inputs[0]


@dataclass
class MultiplyCounter:
    """标量乘法计数器，用于比较对偶四元数两条计算路径"""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass
class QWeight:
    """四元数权重：四个实子矩阵 [n_out_units, n_in_units]"""

    W_W: np.ndarray
    W_X: np.ndarray
    W_Y: np.ndarray
    W_Z: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.stack([self.W_W, self.W_X, self.W_Y, self.W_Z])[:, None, None]

    @classmethod
    def from_array(cls, weight: np.ndarray) -> "QWeight":
        w = weight[:, 0, 0]
        return cls(w[0], w[1], w[2], w[3])

    @classmethod
    def identity(cls, n_units: int, dtype=np.float64) -> "QWeight":
        zero = np.zeros((n_units, n_units), dtype=dtype)
        return cls(np.eye(n_units, dtype=dtype), zero, zero.copy(), zero.copy())

    def realize(self) -> np.ndarray:
        """实化矩阵 [4n_out, 4n_in]（数学约定 y = M x）"""
        return realize_weight(Algebra.QUATERNION, self.to_array())[0].T

    @property
    def n_free(self) -> int:
        return 4 * self.W_W.size


@dataclass
class DualQWeight:
    """对偶四元数权重：主部 Q 与对偶部 Q_ε 两个四元数权重"""

    Q: QWeight
    Q_eps: QWeight

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.Q.to_array(), self.Q_eps.to_array()])

    @classmethod
    def from_array(cls, weight: np.ndarray) -> "DualQWeight":
        return cls(QWeight.from_array(weight[:4]), QWeight.from_array(weight[4:]))

    @classmethod
    def identity(cls, n_units: int, dtype=np.float64) -> "DualQWeight":
        zero = np.zeros((n_units, n_units), dtype=dtype)
        return cls(QWeight.identity(n_units, dtype), QWeight(zero, zero.copy(), zero.copy(), zero.copy()))

    def realize(self) -> np.ndarray:
        return realize_weight(Algebra.DUALQ, self.to_array())[0].T

    @property
    def n_free(self) -> int:
        return self.Q.n_free + self.Q_eps.n_free


# =========================
# 层基类
# =========================

class Layer:
    """层基类：forward 记录缓存，backward 依赖该缓存"""

    trainable = False
    n_inputs = 1

    def __init__(self, name: str = ""):
        self.name = name or type(self).__name__
        self.params: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, *inputs: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def backward(self, dy: Tensor) -> LayerGrad:
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise BackwardBeforeForwardError(f"层 {self.name} 尚未执行前向，不能反向", field=self.name)
        return self._cache

    def param_count(self, include_bias: bool = False) -> int:
        total = 0
        for key, value in self.params.items():
            if key == "bias" and not include_bias:
                continue
            if key in ("gamma", "beta") and not include_bias:
                continue
            total += int(value.size)
        return total

    def describe(self) -> Dict:
        return {"type": type(self).__name__}


# =========================
# 混合层（全连接 / 卷积）
# =========================

def _conv_same_forward(x: Tensor, real: np.ndarray, kernel: Tuple[int, int],
                       dilation: Tuple[int, int]) -> Tuple[Tensor, np.ndarray]:
    """'same' 零填充互相关，x [B,T,F,C_in]，real [taps, C_in, C_out]"""
    kt, kf = kernel
    dt, df = dilation
    pt, pf = dt * (kt - 1) // 2, df * (kf - 1) // 2
    batch, frames, freqs, _ = x.shape
    padded = np.pad(x, ((0, 0), (pt, pt), (pf, pf), (0, 0)))
    out = np.zeros((batch, frames, freqs, real.shape[-1]), dtype=np.result_type(x, real))
    for a in range(kt):
        for b in range(kf):
            window = padded[:, a * dt:a * dt + frames, b * df:b * df + freqs, :]
            out += window @ real[a * kf + b]
    return out, padded


def _conv_same_backward(dy: Tensor, padded: np.ndarray, real: np.ndarray, kernel: Tuple[int, int],
                        dilation: Tuple[int, int], x_shape: Tuple[int, ...]) -> Tuple[Tensor, np.ndarray]:
    kt, kf = kernel
    dt, df = dilation
    pt, pf = dt * (kt - 1) // 2, df * (kf - 1) // 2
    _, frames, freqs, c_in = x_shape
    grad_padded = np.zeros_like(padded, dtype=dy.dtype)
    grad_real = np.zeros_like(real, dtype=dy.dtype)
    flat_dy = dy.reshape(-1, dy.shape[-1])
    for a in range(kt):
        for b in range(kf):
            tap = a * kf + b
            window = padded[:, a * dt:a * dt + frames, b * df:b * df + freqs, :]
            grad_real[tap] = window.reshape(-1, c_in).T @ flat_dy
            grad_padded[:, a * dt:a * dt + frames, b * df:b * df + freqs, :] += dy @ real[tap].T
    grad_x = grad_padded[:, pt:pt + frames, pf:pf + freqs, :]
    return np.ascontiguousarray(grad_x), grad_real


class HyperConv2d(Layer):
    """实数 / 四元数 / 对偶四元数二维卷积（'same' 零填充，可空洞）

    每个卷积抽头上的通道混合服从对应全连接层的块结构；一维空洞卷积即 kernel=(3,1) 的特例。
    """

    trainable = True

    def __init__(self, algebra: Union[Algebra, str], in_channels: int, out_channels: int,
                 kernel: Tuple[int, int] = (3, 3), dilation: Tuple[int, int] = (1, 1),
                 bias: bool = True, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, name: str = ""):
        super().__init__(name)
        self.algebra = Algebra(algebra)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.dilation = (int(dilation[0]), int(dilation[1]))
        if min(self.dilation) < 1:
            raise SeldValidationError(f"空洞率必须 ≥ 1，收到 {self.dilation}", field="dilation")
        if self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0:
            raise SeldValidationError(f"'same' 填充要求奇数卷积核，收到 {self.kernel}", field="kernel")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = init_weight(self.algebra, in_channels, out_channels, self.kernel, rng, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def realized(self) -> np.ndarray:
        return realize_weight(self.algebra, self.params["weight"])

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise SeldValidationError(
                f"{self.name}: 期望输入 [B,T,F,{self.in_channels}]，收到 {x.shape}", field="channels")
        real = self.realized()
        out, padded = _conv_same_forward(x, real, self.kernel, self.dilation)
        if "bias" in self.params:
            out = out + self.params["bias"]
        self._cache = (padded, real, x.shape)
        return out

    def backward(self, dy: Tensor) -> LayerGrad:
        padded, real, x_shape = self._require_cache()
        grad_x, grad_real = _conv_same_backward(dy, padded, real, self.kernel, self.dilation, x_shape)
        grads = {"weight": realize_weight_adjoint(self.algebra, grad_real, self.params["weight"].shape)
                 .astype(self.params["weight"].dtype)}
        if "bias" in self.params:
            grads["bias"] = dy.reshape(-1, dy.shape[-1]).sum(axis=0).astype(self.params["bias"].dtype)
        self.grads = grads
        return LayerGrad(params=grads, inputs=[grad_x])

    def describe(self) -> Dict:
        return {
            "type": "conv2d" if self.kernel[1] > 1 else ("dilated_conv1d" if self.kernel[0] > 1 else "conv1x1"),
            "algebra": self.algebra.value,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": list(self.kernel),
            "dilation": list(self.dilation),
        }


class HyperLinear(Layer):
    """实数 / 四元数 / 对偶四元数全连接层，作用在最后一维

    对偶四元数层支持两条路径：full_matrix 实化含零块的完整矩阵后一次相乘；
    split 拆成三次四元数乘积，跳过零块。两者数值一致，split 的乘法次数更少。
    """

    trainable = True

    def __init__(self, algebra: Union[Algebra, str], in_features: int, out_features: int,
                 bias: bool = True, pathway: str = "full_matrix",
                 rng: Optional[np.random.Generator] = None, dtype=np.float32, name: str = ""):
        super().__init__(name)
        self.algebra = Algebra(algebra)
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if pathway not in ("full_matrix", "split"):
            raise SeldValidationError(f"未知的计算路径: {pathway}", field="pathway")
        self.pathway = pathway
        self.counter: Optional[MultiplyCounter] = None
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = init_weight(self.algebra, in_features, out_features, (1, 1), rng, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise SeldValidationError(
                f"{self.name}: 期望最后一维为{self.in_features}，收到 {x.shape}", field="channels")
        weight = self.params["weight"]
        if self.algebra is Algebra.DUALQ and self.pathway == "split":
            out = _dualq_split_product(weight, x, self.counter)
        else:
            real = realize_weight(self.algebra, weight)[0]
            out = x @ real
            if self.counter is not None:
                self.counter.add(int(np.prod(x.shape[:-1])) * real.size)
        if "bias" in self.params:
            out = out + self.params["bias"]
        self._cache = x
        return out

    def backward(self, dy: Tensor) -> LayerGrad:
        x = self._require_cache()
        weight = self.params["weight"]
        real = realize_weight(self.algebra, weight)[0]
        flat_x = x.reshape(-1, x.shape[-1])
        flat_dy = dy.reshape(-1, dy.shape[-1])
        grad_real = (flat_x.T @ flat_dy)[None]
        grads = {"weight": realize_weight_adjoint(self.algebra, grad_real, weight.shape).astype(weight.dtype)}
        if "bias" in self.params:
            grads["bias"] = flat_dy.sum(axis=0).astype(self.params["bias"].dtype)
        self.grads = grads
        return LayerGrad(params=grads, inputs=[dy @ real.T])

    def describe(self) -> Dict:
        return {
            "type": "fc",
            "algebra": self.algebra.value,
            "in_features": self.in_features,
            "out_features": self.out_features,
            "pathway": self.pathway,
        }


def _dualq_split_product(weight: np.ndarray, x: Tensor, counter: Optional[MultiplyCounter]) -> Tensor:
    """拆分路径：主部输出 = Q⊗x_主；对偶部输出 = Q⊗x_对偶 + Q_ε⊗x_主"""
    n_out, n_in = weight.shape[-2:]
    q_real = realize_weight(Algebra.QUATERNION, weight[:4])[0]      # [4n_in, 4n_out]
    qe_real = realize_weight(Algebra.QUATERNION, weight[4:])[0]
    lead = x.shape[:-1]
    units = x.reshape(*lead, n_in, 2, 4)
    x_primal = units[..., 0, :].reshape(*lead, 4 * n_in)
    x_dual = units[..., 1, :].reshape(*lead, 4 * n_in)
    y_primal = x_primal @ q_real
    y_dual = x_dual @ q_real + x_primal @ qe_real
    if counter is not None:
        counter.add(3 * int(np.prod(lead)) * q_real.size)
    out = np.stack([y_primal.reshape(*lead, n_out, 4), y_dual.reshape(*lead, n_out, 4)], axis=-2)
    return out.reshape(*lead, 8 * n_out)


# =========================
# 辅助层
# =========================

class BatchNorm(Layer):
    """逐通道批归一化（通道在最后一维），训练时用批统计并以动量0.9更新滑动统计"""

    trainable = True

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5,
                 dtype=np.float32, name: str = ""):
        super().__init__(name)
        self.channels = int(channels)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.shape[-1] != self.channels:
            raise SeldValidationError(
                f"{self.name}: 通道数{x.shape[-1]}与参数{self.channels}不一致", field="channels")
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.buffers["running_mean"] = (self.momentum * self.buffers["running_mean"]
                                            + (1.0 - self.momentum) * mean).astype(self.buffers["running_mean"].dtype)
            self.buffers["running_var"] = (self.momentum * self.buffers["running_var"]
                                           + (1.0 - self.momentum) * var).astype(self.buffers["running_var"].dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std, train)
        return self.params["gamma"] * x_hat + self.params["beta"]

    def backward(self, dy: Tensor) -> LayerGrad:
        x_hat, inv_std, train = self._require_cache()
        axes = tuple(range(dy.ndim - 1))
        gamma = self.params["gamma"]
        grads = {
            "gamma": (dy * x_hat).sum(axis=axes).astype(gamma.dtype),
            "beta": dy.sum(axis=axes).astype(gamma.dtype),
        }
        if train:
            mean_dy = dy.mean(axis=axes)
            mean_dy_xhat = (dy * x_hat).mean(axis=axes)
            grad_x = gamma * inv_std * (dy - mean_dy - x_hat * mean_dy_xhat)
        else:
            grad_x = dy * gamma * inv_std
        self.grads = grads
        return LayerGrad(params=grads, inputs=[grad_x])

    def param_count(self, include_bias: bool = False) -> int:
        return 2 * self.channels if include_bias else 0

    def describe(self) -> Dict:
        return {"type": "batch_norm", "channels": self.channels, "momentum": self.momentum}


class MaxPool(Layer):
    """沿某一轴的最大池化，长度不整除时右侧用 -inf 填充（ceil 模式）"""

    def __init__(self, axis: int, width: int, name: str = ""):
        super().__init__(name)
        self.axis = int(axis)
        self.width = int(width)
        if self.width < 1:
            raise SeldValidationError(f"池化宽度必须 ≥ 1: {width}", field="width")

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if self.width == 1:
            self._cache = ("identity",)
            return x
        moved = np.moveaxis(x, self.axis, -2)
        length = moved.shape[-2]
        n_out = -(-length // self.width)
        pad = n_out * self.width - length
        if pad:
            widths = [(0, 0)] * moved.ndim
            widths[-2] = (0, pad)
            moved = np.pad(moved, widths, constant_values=-np.inf)
        grouped = moved.reshape(*moved.shape[:-2], n_out, self.width, moved.shape[-1])
        index = np.argmax(grouped, axis=-2)
        out = np.take_along_axis(grouped, index[..., None, :], axis=-2)[..., 0, :]
        self._cache = ("pool", index, grouped.shape, length)
        return np.moveaxis(out, -2, self.axis)

    def backward(self, dy: Tensor) -> LayerGrad:
        cache = self._require_cache()
        if cache[0] == "identity":
            return LayerGrad(inputs=[dy])
        _, index, grouped_shape, length = cache
        moved_dy = np.moveaxis(dy, self.axis, -2)
        grad_grouped = np.zeros(grouped_shape, dtype=dy.dtype)
        np.put_along_axis(grad_grouped, index[..., None, :], moved_dy[..., None, :], axis=-2)
        grad = grad_grouped.reshape(*grouped_shape[:-3], grouped_shape[-3] * grouped_shape[-2], grouped_shape[-1])
        grad = grad[..., :length, :]
        return LayerGrad(inputs=[np.moveaxis(grad, -2, self.axis)])

    def describe(self) -> Dict:
        return {"type": "max_pool", "axis": self.axis, "width": self.width}


class Dropout(Layer):
    """反向缩放的伯努利 dropout，仅训练时生效；spatial=True 时整通道置零"""

    def __init__(self, rate: float, spatial: bool = False, rng: Optional[np.random.Generator] = None,
                 name: str = ""):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise SeldValidationError(f"dropout 概率必须在 [0,1) 内: {rate}", field="rate")
        self.rate = float(rate)
        self.spatial = bool(spatial)
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if not train or self.rate == 0.0:
            self._cache = np.ones((1,), dtype=x.dtype)
            return x
        if self.spatial:
            shape = (x.shape[0],) + (1,) * (x.ndim - 2) + (x.shape[-1],)
        else:
            shape = x.shape
        keep = 1.0 - self.rate
        mask = (self.rng.random(shape) < keep).astype(x.dtype) / keep
        self._cache = mask
        return x * mask

    def backward(self, dy: Tensor) -> LayerGrad:
        mask = self._require_cache()
        return LayerGrad(inputs=[dy * mask])

    def describe(self) -> Dict:
        return {"type": "spatial_dropout" if self.spatial else "dropout", "rate": self.rate}


def SpatialDropout(rate: float, rng: Optional[np.random.Generator] = None, name: str = "") -> Dropout:
    return Dropout(rate, spatial=True, rng=rng, name=name)


class Activation(Layer):
    """逐分量（split）激活：relu / tanh / sigmoid / identity"""

    def __init__(self, kind: str, name: str = ""):
        super().__init__(name)
        if kind not in ("relu", "tanh", "sigmoid", "identity"):
            raise SeldValidationError(f"未知激活函数: {kind}", field="activation")
        self.kind = kind

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if self.kind == "relu":
            y = np.maximum(x, 0)
        elif self.kind == "tanh":
            y = np.tanh(x)
        elif self.kind == "sigmoid":
            y = expit(x)
        else:
            y = x
        self._cache = (x, y)
        return y

    def backward(self, dy: Tensor) -> LayerGrad:
        x, y = self._require_cache()
        if self.kind == "relu":
            grad = dy * (x > 0)
        elif self.kind == "tanh":
            grad = dy * (1.0 - y * y)
        elif self.kind == "sigmoid":
            grad = dy * y * (1.0 - y)
        else:
            grad = dy
        return LayerGrad(inputs=[grad])

    def describe(self) -> Dict:
        return {"type": self.kind}


def ReLU(name: str = "") -> Activation:
    return Activation("relu", name)


def Tanh(name: str = "") -> Activation:
    return Activation("tanh", name)


def Sigmoid(name: str = "") -> Activation:
    return Activation("sigmoid", name)


class GTU(Layer):
    """门控tanh单元 tanh(x_f) ⊙ sigmoid(x_g)"""

    n_inputs = 2

    def forward(self, xf: Tensor, xg: Tensor, train: bool = False) -> Tensor:
        if xf.shape != xg.shape:
            raise SeldValidationError(f"GTU 两路输入形状不一致: {xf.shape} vs {xg.shape}", field="shape")
        t = np.tanh(xf)
        s = expit(xg)
        self._cache = (t, s)
        return t * s

    def backward(self, dy: Tensor) -> LayerGrad:
        t, s = self._require_cache()
        return LayerGrad(inputs=[dy * s * (1.0 - t * t), dy * t * s * (1.0 - s)])

    def describe(self) -> Dict:
        return {"type": "gtu"}


class Add(Layer):
    """逐元素求和（残差/跳连汇总）"""

    def __init__(self, n_inputs: int = 2, name: str = ""):
        super().__init__(name)
        self.n_inputs = int(n_inputs)

    def forward(self, *xs: Tensor, train: bool = False) -> Tensor:
        shapes = {x.shape for x in xs}
        if len(shapes) != 1:
            raise SeldValidationError(f"{self.name}: 求和输入形状不一致 {sorted(shapes)}", field="shape")
        self._cache = len(xs)
        out = xs[0].copy()
        for x in xs[1:]:
            out = out + x
        return out

    def backward(self, dy: Tensor) -> LayerGrad:
        count = self._require_cache()
        return LayerGrad(inputs=[dy] * count)

    def describe(self) -> Dict:
        return {"type": "add", "n_inputs": self.n_inputs}


class Concat(Layer):
    """沿通道轴拼接"""

    def __init__(self, n_inputs: int = 2, name: str = ""):
        super().__init__(name)
        self.n_inputs = int(n_inputs)

    def forward(self, *xs: Tensor, train: bool = False) -> Tensor:
        self._cache = [x.shape[-1] for x in xs]
        return np.concatenate(xs, axis=-1)

    def backward(self, dy: Tensor) -> LayerGrad:
        sizes = self._require_cache()
        splits = np.cumsum(sizes)[:-1]
        return LayerGrad(inputs=list(np.split(dy, splits, axis=-1)))

    def describe(self) -> Dict:
        return {"type": "concat", "n_inputs": self.n_inputs}


class ChannelSelect(Layer):
    """按索引取出部分通道（并行分支的输入切分）"""

    def __init__(self, indices: Sequence[int], name: str = ""):
        super().__init__(name)
        self.indices = np.asarray(list(indices), dtype=np.int64)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if self.indices.max() >= x.shape[-1]:
            raise SeldValidationError(f"{self.name}: 通道索引越界（输入{x.shape[-1]}通道）", field="channels")
        self._cache = x.shape
        return x[..., self.indices]

    def backward(self, dy: Tensor) -> LayerGrad:
        shape = self._require_cache()
        grad = np.zeros(shape, dtype=dy.dtype)
        grad[..., self.indices] = dy
        return LayerGrad(inputs=[grad])

    def describe(self) -> Dict:
        return {"type": "channel_select", "indices": self.indices.tolist()}


class StackFrequency(Layer):
    """[B,T,F,C] → [B,T,1,F·C]，新通道索引为 f·C + c（每个频点的代数单元保持连续）

    multiple > 1 时在通道末尾补零到其整数倍。
    """

    def __init__(self, multiple: int = 1, name: str = ""):
        super().__init__(name)
        self.multiple = int(multiple)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        batch, frames, freqs, channels = x.shape
        stacked = x.reshape(batch, frames, 1, freqs * channels)
        pad = (-stacked.shape[-1]) % self.multiple
        if pad:
            stacked = np.pad(stacked, ((0, 0), (0, 0), (0, 0), (0, pad)))
        self._cache = x.shape
        return stacked

    def backward(self, dy: Tensor) -> LayerGrad:
        shape = self._require_cache()
        batch, frames, freqs, channels = shape
        grad = dy[..., :freqs * channels].reshape(shape)
        return LayerGrad(inputs=[grad])

    def describe(self) -> Dict:
        return {"type": "stack_frequency", "multiple": self.multiple}


# =========================
# 函数式接口
# =========================

def _apply(activation: Optional[Callable[[Tensor], Tensor]], y: Tensor) -> Tensor:
    return y if activation is None else activation(y)


def fc_forward(W: np.ndarray, b: np.ndarray, x: Tensor,
               activation: Optional[Callable[[Tensor], Tensor]] = None) -> Tensor:
    """σ(Wx + b)，W 形状 [n, m]，x 形状 [..., m]"""
    W = np.asarray(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or np.shape(b)[-1] != W.shape[0]:
        raise SeldValidationError(
            f"形状不匹配: W{W.shape}, b{np.shape(b)}, x{x.shape}", field="shape")
    return _apply(activation, x @ W.T + b)


def qfc_forward(W: QWeight, b: np.ndarray, x: Tensor,
                activation: Optional[Callable[[Tensor], Tensor]] = None) -> Tensor:
    """Q-FC: σ(W ⊗ x + b)，等价于用显式构造的 4n×4m 实块矩阵做 fc_forward"""
    _check_channels(Algebra.QUATERNION, x.shape[-1], "输入")
    return fc_forward(W.realize(), b, x, activation)


def dualqfc_forward(W: DualQWeight, b: np.ndarray, x: Tensor, pathway: str = "split",
                    activation: Optional[Callable[[Tensor], Tensor]] = None,
                    counter: Optional[MultiplyCounter] = None) -> Tensor:
    """DualQ-FC：full_matrix 物化含零块的完整矩阵；split 做两次（三个）四元数乘积并跳过零块"""
    _check_channels(Algebra.DUALQ, x.shape[-1], "输入")
    weight = W.to_array()
    if x.shape[-1] != 8 * weight.shape[-1]:
        raise SeldValidationError(f"输入通道{x.shape[-1]}与权重单元数{weight.shape[-1]}不匹配", field="shape")
    if pathway == "full_matrix":
        real = realize_weight(Algebra.DUALQ, weight)[0]
        if counter is not None:
            counter.add(int(np.prod(x.shape[:-1])) * real.size)
        y = x @ real
    elif pathway == "split":
        y = _dualq_split_product(weight, x, counter)
    else:
        raise SeldValidationError(f"未知的计算路径: {pathway}", field="pathway")
    return _apply(activation, y + b)


def _as_batched(x: Tensor, ndim: int) -> Tuple[Tensor, bool]:
    if x.ndim == ndim:
        return x[None], True
    return x, False


def conv2d_forward(kind: Union[Algebra, str], weights: np.ndarray, x: Tensor,
                   bias: Optional[np.ndarray] = None, dilation: Tuple[int, int] = (1, 1)) -> Tensor:
    """函数式二维卷积，weights [n_comp, kt, kf, n_out, n_in]，x [T,F,C] 或 [B,T,F,C]"""
    algebra = Algebra(kind)
    batched, squeezed = _as_batched(x, 3)
    n_in = _check_channels(algebra, batched.shape[-1], "输入")
    if weights.shape[-1] != n_in:
        raise SeldValidationError(f"输入单元数{n_in}与权重{weights.shape}不匹配", field="channels")
    real = realize_weight(algebra, weights)
    out, _ = _conv_same_forward(batched, real, (weights.shape[1], weights.shape[2]), dilation)
    if bias is not None:
        out = out + bias
    return out[0] if squeezed else out


def dilated_conv1d_forward(kind: Union[Algebra, str], weights: np.ndarray, x: Tensor, dilation: int,
                           bias: Optional[np.ndarray] = None) -> Tensor:
    """非因果空洞卷积，抽头位于 {-d, 0, +d}，weights [n_comp, 3, n_out, n_in]，x [T,C] 或 [B,T,C]"""
    if dilation < 1:
        raise SeldValidationError(f"空洞率必须 ≥ 1: {dilation}", field="dilation")
    batched, squeezed = _as_batched(x, 2)
    out = conv2d_forward(kind, weights[:, :, None], batched[:, :, None, :], bias, (int(dilation), 1))
    out = out[:, :, 0, :]
    return out[0] if squeezed else out


def gtu(xf: Tensor, xg: Tensor) -> Tensor:
    return GTU().forward(xf, xg)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray


def batch_norm_forward(x: Tensor, gamma: np.ndarray, beta: np.ndarray, running_stats: RunningStats,
                       mode: str = "train", momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """函数式批归一化；train 模式会原地更新 running_stats"""
    if mode not in ("train", "eval"):
        raise SeldValidationError(f"未知模式: {mode}", field="mode")
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise SeldValidationError("gamma/beta 与通道数不一致", field="channels")
    layer = BatchNorm(x.shape[-1], momentum=momentum, eps=eps, dtype=x.dtype)
    layer.params["gamma"] = gamma
    layer.params["beta"] = beta
    layer.buffers["running_mean"] = running_stats.mean
    layer.buffers["running_var"] = running_stats.var
    y = layer.forward(x, train=(mode == "train"))
    running_stats.mean = layer.buffers["running_mean"]
    running_stats.var = layer.buffers["running_var"]
    return y


def max_pool_freq(x: Tensor, width: int) -> Tensor:
    """频率轴最大池化，x [T,F,C] 或 [B,T,F,C]"""
    axis = x.ndim - 2
    return MaxPool(axis=axis, width=width).forward(x)


def backward(layer: Layer, upstream_grad: Tensor) -> LayerGrad:
    return layer.backward(upstream_grad)


def param_count(layer: Union[Layer, QWeight, DualQWeight], include_bias: bool = False) -> int:
    """自由实参数个数（共享子矩阵只计一次）"""
    if isinstance(layer, (QWeight, DualQWeight)):
        return layer.n_free
    return layer.param_count(include_bias=include_bias)


# =========================
# 有限差分梯度校验
# =========================

@dataclass
class GradCheckResult:
    """单个层的梯度校验结果"""

    layer: str
    max_rel_error: float
    errors: Dict[str, float]
    passed: bool

    def to_dict(self) -> Dict:
        return {
            "layer": self.layer,
            "max_rel_error": self.max_rel_error,
            "errors": self.errors,
            "passed": self.passed,
        }


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def gradient_check(layer: Layer, inputs: Sequence[Tensor], step: float = 1e-5, tol: float = 1e-4,
                   train: bool = True, seed: int = 0) -> GradCheckResult:
    """中心差分校验：标量损失 L = Σ y ⊙ R（R 为固定随机张量），逐元素比较参数与输入梯度"""
    rng = np.random.default_rng(seed)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    for key in layer.params:
        layer.params[key] = layer.params[key].astype(np.float64)
    for key in layer.buffers:
        layer.buffers[key] = layer.buffers[key].astype(np.float64)
    buffers = {key: value.copy() for key, value in layer.buffers.items()}

    def loss() -> float:
        # 批归一化训练模式会改写滑动统计，每次前向前恢复，保证各次评估一致
        for key, value in buffers.items():
            layer.buffers[key] = value.copy()
        return float(np.sum(layer.forward(*inputs, train=train) * probe))

    probe = rng.standard_normal(layer.forward(*inputs, train=train).shape)
    loss()
    analytic = layer.backward(probe)

    targets: List[Tuple[str, np.ndarray, np.ndarray]] = []
    for key, value in layer.params.items():
        targets.append((key, value, analytic.params[key]))
    for index, value in enumerate(inputs):
        targets.append((f"input{index}", value, analytic.inputs[index]))

    errors: Dict[str, float] = {}
    for key, array, grad in targets:
        numeric = np.zeros_like(array)
        flat = array.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + step
            plus = loss()
            flat[j] = original - step
            minus = loss()
            flat[j] = original
            numeric.reshape(-1)[j] = (plus - minus) / (2.0 * step)
        errors[key] = _relative_error(np.asarray(grad), numeric)

    worst = max(errors.values()) if errors else 0.0
    return GradCheckResult(layer=layer.name, max_rel_error=worst, errors=errors, passed=worst < tol)


def default_gradcheck_cases(seed: int = 0) -> Dict[str, Tuple[Layer, List[Tensor]]]:
    """每种可训练层各一个小规模 f64 用例"""
    rng = np.random.default_rng(seed)
    f64 = np.float64
    cases: Dict[str, Tuple[Layer, List[Tensor]]] = {}
    for algebra in Algebra:
        dim = algebra.dim
        fc = HyperLinear(algebra, 2 * dim, 3 * dim, rng=rng, dtype=f64, name=f"fc_{algebra.value}")
        fc.params["bias"] = rng.standard_normal(fc.params["bias"].shape)
        cases[fc.name] = (fc, [rng.standard_normal((3, 2 * dim))])

        conv = HyperConv2d(algebra, dim, dim, kernel=(3, 3), rng=rng, dtype=f64, name=f"conv2d_{algebra.value}")
        conv.params["bias"] = rng.standard_normal(conv.params["bias"].shape)
        cases[conv.name] = (conv, [rng.standard_normal((2, 4, 5, dim))])

        dconv = HyperConv2d(algebra, dim, dim, kernel=(3, 1), dilation=(2, 1), rng=rng, dtype=f64,
                            name=f"dilated_conv1d_{algebra.value}")
        dconv.params["bias"] = rng.standard_normal(dconv.params["bias"].shape)
        cases[dconv.name] = (dconv, [rng.standard_normal((2, 7, 1, dim))])

    split = HyperLinear(Algebra.DUALQ, 16, 16, pathway="split", rng=rng, dtype=f64, name="fc_dualq_split")
    cases[split.name] = (split, [rng.standard_normal((4, 16))])

    cases["gtu"] = (GTU(name="gtu"), [rng.standard_normal((3, 6)), rng.standard_normal((3, 6))])

    norm = BatchNorm(5, dtype=f64, name="batch_norm")
    norm.params["gamma"] = rng.uniform(0.5, 1.5, size=5)
    norm.params["beta"] = rng.standard_normal(5)
    cases["batch_norm"] = (norm, [rng.standard_normal((4, 3, 5)) * 2.0 + 1.0])
    return cases


def run_gradcheck_suite(seed: int = 0, tol: float = 1e-4, step: float = 1e-5,
                        cases: Optional[Dict[str, Tuple[Layer, List[Tensor]]]] = None) -> List[GradCheckResult]:
    cases = cases if cases is not None else default_gradcheck_cases(seed)
    results = []
    for name in sorted(cases):
        layer, inputs = cases[name]
        result = gradient_check(layer, inputs, step=step, tol=tol, seed=seed)
        result.layer = name
        results.append(result)
    return results
