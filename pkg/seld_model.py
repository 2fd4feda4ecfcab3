# -*- coding: utf-8 -*-
"""
DualQSELD-TCN 网络结构（含实数 / 四元数基线与并行变体）

脚本目标:
    - 把 nn_layers 中的层组装成 Conv-TC 主干 + SED/DOA 双分支的层图，并提供前向、反向、结构报告。

上下文:
    - 层图用 networkx.DiGraph 保存：节点是命名层（节点属性 layer / inputs），边是数据流。
    - 参数以 "节点名.参数名" 唯一注册，trainer 按名字更新参数、写检查点。

输入:
    - ModelConfig（可由扁平点号配置 "model.*" 构造）
    - 特征张量 [B, T, 256, C]（C = 8 或 16）

执行步骤:
    1. Conv 块：三层 (DualQ-)Conv2D 3×3 → BN → ReLU → 频率轴最大池化 → dropout
    2. 频率与通道堆叠，必要时 1×1 投影到残差宽度 L
    3. TC 块：D 个残差块（空洞卷积 filter/gate 各接 BN → GTU → 空间dropout → skip/residual 1×1）
    4. skip 求和 → ReLU → Conv(V,3) → ReLU → 时间池化 → Conv(V,3) → tanh → 时间池化
    5. SED 分支（sigmoid）与 DOA 分支（线性）

输出:
    - Network 对象、SeldOutput(sed [.., T', 42], doa [.., T', 126])、describe() 结构报告
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from ambisonics import N_BINS, N_CLASS, N_OVERLAP, FeatureTensor, pool_frame_times
from nn_layers import (Add, Algebra, BackwardBeforeForwardError, BatchNorm, ChannelSelect, Concat, Dropout, GTU,
                       HyperConv2d, HyperLinear, Layer, MaxPool, ReLU, Sigmoid, StackFrequency, Tanh)
from utils import SeldValidationError, prefixed, section

logger = logging.getLogger(__name__)

MODEL_KINDS = ("real", "quaternion", "quaternion_parallel", "dualq", "dualq_parallel")

KIND_ALGEBRA = {
    "real": Algebra.REAL,
    "quaternion": Algebra.QUATERNION,
    "quaternion_parallel": Algebra.QUATERNION,
    "dualq": Algebra.DUALQ,
    "dualq_parallel": Algebra.DUALQ,
}

PARALLEL_HEAD_WIDTH = 128
TC_KERNEL = 3


def fibonacci(n: int) -> List[int]:
    """前 n 个斐波那契数 1,1,2,3,5,..."""
    out: List[int] = []
    a, b = 1, 1
    for _ in range(n):
        out.append(a)
        a, b = b, a + b
    return out


# =========================
# 配置
# =========================

@dataclass
class ModelConfig:
    """网络结构配置，默认值即完整规模的 DualQSELD-TCN 设置"""

    kind: str = "dualq"
    include_phase: bool = False
    conv_filters: int = 192              # P
    conv_pooling: Tuple[int, ...] = (8, 8, 2)  # mp
    conv_dropout: float = 0.3
    n_resblocks: int = 10                # D
    tc_filters: int = 384                # G
    skip_width: int = 384                # U
    residual_width: int = 384            # L
    final_filters: int = 384             # V
    spatial_dropout: float = 0.5
    head_width: int = 384                # R
    head_dropout: float = 0.3
    time_pooling: Tuple[int, int] = (1, 1)
    n_class: int = N_CLASS
    n_overlap: int = N_OVERLAP
    width_scale: float = 1.0
    dualq_pathway: str = "split"
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.conv_pooling = tuple(int(v) for v in self.conv_pooling)
        self.time_pooling = tuple(int(v) for v in self.time_pooling)

    @property
    def algebra(self) -> Algebra:
        return KIND_ALGEBRA[self.kind]

    @property
    def parallel(self) -> bool:
        return self.kind.endswith("_parallel")

    @property
    def head_algebra(self) -> Algebra:
        return Algebra.REAL if self.parallel else self.algebra

    @property
    def dilations(self) -> List[int]:
        return fibonacci(self.n_resblocks)

    @property
    def input_channels(self) -> int:
        return 16 if self.include_phase else 8

    @property
    def sed_width(self) -> int:
        return self.n_class * self.n_overlap

    @property
    def doa_width(self) -> int:
        return 3 * self.n_class * self.n_overlap

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise SeldValidationError(f"未知的模型类型: {self.kind}，可选 {MODEL_KINDS}", field="model.kind")
        if self.kind == "dualq_parallel" and not self.include_phase:
            raise SeldValidationError("dualq_parallel 需要相位特征（include_phase=true）", field="model.include_phase")
        if len(self.conv_pooling) != 3:
            raise SeldValidationError("conv_pooling 必须有3个宽度", field="model.conv_pooling")
        if len(self.time_pooling) != 2:
            raise SeldValidationError("time_pooling 必须有2个宽度", field="model.time_pooling")
        if min(self.conv_pooling + self.time_pooling) < 1:
            raise SeldValidationError("池化宽度必须 ≥ 1", field="model.conv_pooling")
        if self.n_resblocks < 1:
            raise SeldValidationError("n_resblocks 必须 ≥ 1", field="model.n_resblocks")
        for name in ("conv_dropout", "spatial_dropout", "head_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise SeldValidationError(f"{name} 必须在 [0,1) 内: {rate}", field=f"model.{name}")
        if self.dualq_pathway not in ("full_matrix", "split"):
            raise SeldValidationError(f"未知的对偶四元数计算路径: {self.dualq_pathway}", field="model.dualq_pathway")
        if self.dtype not in ("float32", "float64"):
            raise SeldValidationError(f"dtype 只支持 float32/float64: {self.dtype}", field="model.dtype")

        dim = self.algebra.dim
        for name in ("conv_filters", "tc_filters", "skip_width", "residual_width", "final_filters"):
            value = getattr(self, name)
            if value <= 0 or value % dim != 0:
                raise SeldValidationError(
                    f"{name}={value} 不能被 {self.algebra.value} 代数维度 {dim} 整除", field=f"model.{name}")
        head_dim = self.head_algebra.dim
        if self.head_width <= 0 or self.head_width % head_dim != 0:
            raise SeldValidationError(
                f"head_width={self.head_width} 不能被维度 {head_dim} 整除", field="model.head_width")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["conv_pooling"] = list(self.conv_pooling)
        data["time_pooling"] = list(self.time_pooling)
        return data

    def to_flat(self) -> Dict[str, Any]:
        return prefixed(self.to_dict(), "model")

    @classmethod
    def from_flat(cls, flat: Dict[str, Any]) -> "ModelConfig":
        values = section(flat, "model")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise SeldValidationError(f"未知配置键: model.{unknown[0]}", field=f"model.{unknown[0]}")
        config = cls(**values)
        config.validate()
        return config


def _scale_width(width: int, scale: float, dim: int) -> int:
    return max(dim, int(round(width * scale / dim)) * dim)


def reference_config(kind: str, include_phase: bool = False, width_scale: float = 1.0,
                 n_resblocks: int = 10) -> ModelConfig:
    """复现参数量表的预设

    dualq / dualq_parallel 用 P=192、G=U=L=V=384；real、quaternion 与 quaternion_parallel
    用 P=64、宽度128。并行变体的实数分支宽度固定为128，不随 width_scale 缩放。
    quaternion_parallel 在 width_scale=1.0 时约0.8M，1.375 时约1.6M。
    """
    if kind not in MODEL_KINDS:
        raise SeldValidationError(f"未知的模型类型: {kind}", field="model.kind")
    if kind == "dualq_parallel":
        include_phase = True
    dim = KIND_ALGEBRA[kind].dim
    if kind.startswith("dualq"):
        conv, width = 192, 384
    else:
        conv, width = 64, 128
    scaled_conv = _scale_width(conv, width_scale, dim)
    scaled = _scale_width(width, width_scale, dim)
    head = PARALLEL_HEAD_WIDTH if kind.endswith("_parallel") else scaled
    config = ModelConfig(
        kind=kind,
        include_phase=include_phase,
        conv_filters=scaled_conv,
        n_resblocks=n_resblocks,
        tc_filters=scaled,
        skip_width=scaled,
        residual_width=scaled,
        final_filters=scaled,
        head_width=head,
        width_scale=width_scale,
    )
    config.validate()
    return config


def desk_config(kind: str = "dualq", include_phase: bool = False) -> ModelConfig:
    """桌面规模：所有宽度 ÷8，D=4"""
    return reference_config(kind, include_phase=include_phase, width_scale=0.125, n_resblocks=4)


def receptive_field(config: Union[ModelConfig, int], kernel: int = TC_KERNEL) -> int:
    """TC 块感受野 1 + (k-1)·Σ dilations；也接受直接传入残差块数"""
    n_blocks = config.n_resblocks if isinstance(config, ModelConfig) else int(config)
    return 1 + (kernel - 1) * sum(fibonacci(n_blocks))


def output_frames(config: ModelConfig, n_frames: int) -> int:
    """时间池化（ceil 模式）后的输出帧数"""
    frames = int(n_frames)
    for width in config.time_pooling:
        frames = -(-frames // width)
    return frames


def pooled_frequency(config: ModelConfig, n_bins: int = N_BINS) -> int:
    bins = n_bins
    for width in config.conv_pooling:
        bins = -(-bins // width)
    return bins


# =========================
# 网络
# =========================

@dataclass
class SeldOutput:
    """网络输出：sed 为概率，doa 为米制坐标"""

    sed: np.ndarray
    doa: np.ndarray
    frame_times: Optional[np.ndarray] = None

    @property
    def n_frames(self) -> int:
        return int(self.sed.shape[-2])


class Network:
    """命名层组成的有向无环图，forward 按插入顺序执行并记录缓存，backward 逆序累加梯度"""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.graph = nx.DiGraph()
        self.graph.add_node("input", layer=None, inputs=[])
        self.order: List[str] = []
        self.outputs: Dict[str, str] = {}
        self.rng = np.random.default_rng(config.seed + 1)
        self.grads: Dict[str, np.ndarray] = {}
        self._recorded = False

    # ---------- 构图 ----------

    def add(self, name: str, layer: Layer, inputs: Sequence[str]) -> str:
        if name in self.graph:
            raise SeldValidationError(f"重复的层名: {name}", field=name)
        for source in inputs:
            if source not in self.graph:
                raise SeldValidationError(f"层 {name} 的输入 {source} 不存在", field=name)
        layer.name = name
        self.graph.add_node(name, layer=layer, inputs=list(inputs))
        for source in inputs:
            self.graph.add_edge(source, name)
        self.order.append(name)
        return name

    def layer(self, name: str) -> Layer:
        return self.graph.nodes[name]["layer"]

    def layers(self) -> List[Tuple[str, Layer]]:
        return [(name, self.layer(name)) for name in self.order]

    def check_graph(self) -> None:
        if not nx.is_directed_acyclic_graph(self.graph):
            raise SeldValidationError("层图存在环", field="graph")
        reachable = nx.descendants(self.graph, "input")
        for name in self.order:
            if name not in reachable:
                raise SeldValidationError(f"层 {name} 不可从输入到达", field=name)
        sinks = set(self.outputs.values())
        for name in self.order:
            if name not in sinks and self.graph.out_degree(name) == 0:
                raise SeldValidationError(f"层 {name} 的输出没有被使用", field=name)

    # ---------- 参数注册 ----------

    def parameters(self) -> Dict[str, np.ndarray]:
        """按层顺序返回 {"层名.参数名": 数组}（数组是层内对象本身，可原地更新）"""
        out: Dict[str, np.ndarray] = {}
        for name, layer in self.layers():
            for key, value in layer.params.items():
                out[f"{name}.{key}"] = value
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name, layer in self.layers():
            for key, value in layer.buffers.items():
                out[f"{name}.{key}"] = value
        return out

    def set_parameter(self, full_name: str, value: np.ndarray) -> None:
        name, key = full_name.rsplit(".", 1)
        layer = self.layer(name)
        store = layer.params if key in layer.params else layer.buffers
        if key not in store:
            raise SeldValidationError(f"未注册的参数: {full_name}", field=full_name)
        if store[key].shape != value.shape:
            raise SeldValidationError(
                f"参数 {full_name} 形状不一致: {store[key].shape} vs {value.shape}", field=full_name)
        store[key] = value.astype(store[key].dtype)

    def param_count(self, include_bias: bool = True) -> int:
        return sum(layer.param_count(include_bias=include_bias) for _, layer in self.layers())

    def reseed(self, seed: int) -> None:
        """重置 dropout 随机源（所有 dropout 层共享同一个 Generator）"""
        self.rng = np.random.default_rng(seed)
        for _, layer in self.layers():
            if isinstance(layer, Dropout):
                layer.rng = self.rng

    # ---------- 前向 / 反向 ----------

    def forward_batch(self, x: np.ndarray, train: bool = False) -> SeldOutput:
        """x: [B, T, 256, C]"""
        expected = self.config.input_channels
        if x.ndim != 4 or x.shape[2] != N_BINS or x.shape[3] != expected:
            raise SeldValidationError(
                f"特征形状应为 [B,T,{N_BINS},{expected}]（kind={self.config.kind}, "
                f"include_phase={self.config.include_phase}），收到 {x.shape}", field="channels")
        values: Dict[str, np.ndarray] = {"input": np.asarray(x, dtype=self.dtype)}
        for name in self.order:
            node = self.graph.nodes[name]
            args = [values[source] for source in node["inputs"]]
            values[name] = node["layer"].forward(*args, train=train)
        self._recorded = True
        sed = values[self.outputs["sed"]][:, :, 0, :]
        doa = values[self.outputs["doa"]][:, :, 0, :]
        return SeldOutput(sed=sed, doa=doa)

    def backward(self, d_sed: np.ndarray, d_doa: np.ndarray) -> Dict[str, np.ndarray]:
        """从两个输出的梯度反传，返回 {"层名.参数名": 梯度}；扇出处的梯度求和"""
        if not self._recorded:
            raise BackwardBeforeForwardError("网络尚未执行前向，不能反向", field="network")
        upstream: Dict[str, np.ndarray] = {
            self.outputs["sed"]: d_sed[:, :, None, :],
            self.outputs["doa"]: d_doa[:, :, None, :],
        }
        grads: Dict[str, np.ndarray] = {}
        for name in reversed(self.order):
            node = self.graph.nodes[name]
            layer = node["layer"]
            if name not in upstream:
                continue
            result = layer.backward(upstream.pop(name))
            for key, value in result.params.items():
                grads[f"{name}.{key}"] = value
            for source, grad in zip(node["inputs"], result.inputs):
                if source == "input":
                    continue
                if source in upstream:
                    upstream[source] = upstream[source] + grad
                else:
                    upstream[source] = grad
        for key, value in self.parameters().items():
            if key not in grads:
                grads[key] = np.zeros_like(value)
        self.grads = grads
        return grads


# =========================
# 组装
# =========================

def _stack_inputs(config: ModelConfig) -> List[Tuple[str, Optional[List[int]]]]:
    """每个 Conv-TC 主干的 (名字, 输入通道索引)；None 表示使用全部输入通道"""
    if config.kind == "dualq_parallel":
        return [("mag", list(range(0, 8))), ("phase", list(range(8, 16)))]
    if config.kind == "quaternion_parallel":
        mic_a = list(range(0, 4))
        mic_b = list(range(4, 8))
        if config.include_phase:
            mic_a += list(range(8, 12))
            mic_b += list(range(12, 16))
        return [("mic_a", mic_a), ("mic_b", mic_b)]
    return [("stack", None)]


def _build_stack(net: Network, prefix: str, source: str, in_channels: int, rng: np.random.Generator) -> str:
    config = net.config
    algebra = config.algebra
    dtype = net.dtype
    P = config.conv_filters

    x = source
    channels = in_channels
    for i, width in enumerate(config.conv_pooling, start=1):
        x = net.add(f"{prefix}.conv{i}", HyperConv2d(algebra, channels, P, kernel=(3, 3), rng=rng, dtype=dtype), [x])
        x = net.add(f"{prefix}.bn{i}", BatchNorm(P, dtype=dtype), [x])
        x = net.add(f"{prefix}.relu{i}", ReLU(), [x])
        x = net.add(f"{prefix}.pool{i}", MaxPool(axis=2, width=width), [x])
        x = net.add(f"{prefix}.drop{i}", Dropout(config.conv_dropout, rng=net.rng), [x])
        channels = P

    x = net.add(f"{prefix}.stack_freq", StackFrequency(multiple=algebra.dim), [x])
    stacked = pooled_frequency(config) * P
    stacked += (-stacked) % algebra.dim
    L = config.residual_width
    if stacked != L:
        x = net.add(f"{prefix}.proj", HyperConv2d(algebra, stacked, L, kernel=(1, 1), rng=rng, dtype=dtype), [x])

    G, U = config.tc_filters, config.skip_width
    skips: List[str] = []
    dilations = config.dilations
    for j, dilation in enumerate(dilations):
        block = f"{prefix}.res{j}"
        filt = net.add(f"{block}.filter", HyperConv2d(algebra, L, G, kernel=(TC_KERNEL, 1), dilation=(dilation, 1),
                                                      rng=rng, dtype=dtype), [x])
        filt = net.add(f"{block}.filter_bn", BatchNorm(G, dtype=dtype), [filt])
        gate = net.add(f"{block}.gate", HyperConv2d(algebra, L, G, kernel=(TC_KERNEL, 1), dilation=(dilation, 1),
                                                    rng=rng, dtype=dtype), [x])
        gate = net.add(f"{block}.gate_bn", BatchNorm(G, dtype=dtype), [gate])
        h = net.add(f"{block}.gtu", GTU(), [filt, gate])
        h = net.add(f"{block}.sdrop", Dropout(config.spatial_dropout, spatial=True, rng=net.rng), [h])
        skips.append(net.add(f"{block}.skip", HyperConv2d(algebra, G, U, kernel=(1, 1), rng=rng, dtype=dtype), [h]))
        if j < len(dilations) - 1:
            # 最后一个残差块的 residual 输出无人使用，不建
            res = net.add(f"{block}.residual", HyperConv2d(algebra, G, L, kernel=(1, 1), rng=rng, dtype=dtype), [h])
            x = net.add(f"{block}.add", Add(2), [res, x])

    V = config.final_filters
    y = net.add(f"{prefix}.skip_sum", Add(len(skips)), skips) if len(skips) > 1 else skips[0]
    y = net.add(f"{prefix}.skip_relu", ReLU(), [y])
    y = net.add(f"{prefix}.conv_a", HyperConv2d(algebra, U, V, kernel=(TC_KERNEL, 1), rng=rng, dtype=dtype), [y])
    y = net.add(f"{prefix}.relu_a", ReLU(), [y])
    y = net.add(f"{prefix}.tpool_a", MaxPool(axis=1, width=config.time_pooling[0]), [y])
    y = net.add(f"{prefix}.conv_b", HyperConv2d(algebra, V, V, kernel=(TC_KERNEL, 1), rng=rng, dtype=dtype), [y])
    y = net.add(f"{prefix}.tanh_b", Tanh(), [y])
    y = net.add(f"{prefix}.tpool_b", MaxPool(axis=1, width=config.time_pooling[1]), [y])
    return y


def _build_head(net: Network, name: str, source: str, in_features: int, out_features: int,
                final_activation: Optional[str], rng: np.random.Generator) -> str:
    config = net.config
    algebra = config.head_algebra
    R = config.head_width
    h = net.add(f"{name}.hidden", HyperLinear(algebra, in_features, R, pathway=config.dualq_pathway,
                                              rng=rng, dtype=net.dtype), [source])
    h = net.add(f"{name}.relu", ReLU(), [h])
    h = net.add(f"{name}.drop", Dropout(config.head_dropout, rng=net.rng), [h])
    h = net.add(f"{name}.out", HyperLinear(Algebra.REAL, R, out_features, rng=rng, dtype=net.dtype), [h])
    if final_activation == "sigmoid":
        h = net.add(f"{name}.sigmoid", Sigmoid(), [h])
    return h


def build(config: ModelConfig) -> Network:
    """按配置构建网络；同一配置与种子得到完全相同的初始参数"""
    config.validate()
    net = Network(config)
    rng = np.random.default_rng(config.seed)

    stack_outputs: List[str] = []
    for prefix, indices in _stack_inputs(config):
        source = "input"
        channels = config.input_channels
        if indices is not None:
            source = net.add(f"{prefix}.select", ChannelSelect(indices), ["input"])
            channels = len(indices)
        stack_outputs.append(_build_stack(net, prefix, source, channels, rng))

    if len(stack_outputs) > 1:
        features = net.add("concat", Concat(len(stack_outputs)), stack_outputs)
    else:
        features = stack_outputs[0]
    width = config.final_filters * len(stack_outputs)

    net.outputs["sed"] = _build_head(net, "sed", features, width, config.sed_width, "sigmoid", rng)
    net.outputs["doa"] = _build_head(net, "doa", features, width, config.doa_width, None, rng)
    net.check_graph()
    logger.info("built %s network: %d layers, %d parameters", config.kind, len(net.order), net.param_count())
    return net


def forward(net: Network, features: Union[FeatureTensor, np.ndarray], train: bool = False) -> SeldOutput:
    """单样本（FeatureTensor / [T,256,C]）或批量（[B,T,256,C]）前向"""
    if isinstance(features, FeatureTensor):
        out = net.forward_batch(features.data[None], train=train)
        times = pool_frame_times(features.frame_times, net.config.time_pooling)
        return SeldOutput(sed=out.sed[0], doa=out.doa[0], frame_times=times)
    x = np.asarray(features)
    if x.ndim == 3:
        out = net.forward_batch(x[None], train=train)
        return SeldOutput(sed=out.sed[0], doa=out.doa[0])
    return net.forward_batch(x, train=train)


def describe(net: Network) -> Dict[str, Any]:
    """结构报告：逐层类型/宽度/参数量、空洞率、感受野、池化宽度与总参数量"""
    config = net.config
    layers = []
    for name, layer in net.layers():
        entry = {"name": name, "inputs": net.graph.nodes[name]["inputs"]}
        entry.update(layer.describe())
        entry["weights"] = layer.param_count(include_bias=False)
        entry["params"] = layer.param_count(include_bias=True)
        layers.append(entry)
    return {
        "kind": config.kind,
        "config": config.to_flat(),
        "dilations": config.dilations,
        "receptive_field": receptive_field(config),
        "conv_pooling": list(config.conv_pooling),
        "time_pooling": list(config.time_pooling),
        "stacked_frequency_bins": pooled_frequency(config),
        "n_layers": len(layers),
        "total_weights": net.param_count(include_bias=False),
        "total_params": net.param_count(include_bias=True),
        "layers": layers,
    }
