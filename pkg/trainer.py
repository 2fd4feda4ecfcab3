# -*- coding: utf-8 -*-
"""
SED + DOA 联合训练

脚本目标:
    - 用 BCE + 5·MSE 联合损失和手写 Adam 训练 seld_model 构建的网络，按验证集 G-SELD（或训练损失）早停，
      保存最优检查点与逐 epoch 历史。

上下文:
    - 数据准备：DualMicCapture → STFT 特征（可选对数压缩、相对W的相位、6DOF 归一化）→ 与输出帧对齐的 SED/DOA 目标。
    - 检查点是自描述容器：魔数 + JSON 头（配置、形状、名字、dtype、字节偏移）+ 小端原始数据。

输入:
    - Network、训练/验证 SeldDataset、TrainConfig

执行步骤:
    1. 每个 epoch 用 seed+epoch 决定批次顺序，前向 → 损失 → 反向 →（可选梯度裁剪）→ Adam
    2. 验证集上解码预测并计算 G-SELD
    3. select_on 判据改进 ≥ 1e-5 时记录最优参数（并写检查点），否则耐心计数加一
    4. 结束时恢复最优参数，返回历史

输出:
    - TrainResult（history、best_epoch、best_score），可写出 CSV 历史和检查点文件
"""

import csv
import json
import logging
import os
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ambisonics import (DualMicCapture, SeldTarget, make_targets, pack_dual_quaternion, pool_frame_times,
                        stft_features)
from seld_metrics import (DEFAULT_DIST_THRESHOLD, DEFAULT_SED_THRESHOLD, MetricAccumulator, SeldScores,
                          decode_predictions, target_to_frame_events)
from seld_model import ModelConfig, Network, SeldOutput, build, output_frames
from utils import NumericalFailure, RunLogger, SeldValidationError, chunked, format_duration, prefixed, section

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
# 早停与最优参数的判据：验证集 G-SELD，或本 epoch 的平均训练损失（过拟合检查用）
SELECTION_CRITERIA = ("val_gseld", "train_loss")
CHECKPOINT_MAGIC = b"DQSELD01"
CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ["epoch", "train_loss", "sed_loss", "doa_loss", "val_LSD", "val_CSL", "val_GSELD"]


# =========================
# 配置
# =========================

@dataclass
class TrainConfig:
    """训练配置；默认值为完整规模设置（最少1000个epoch，耐心300）"""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 5000
    min_epochs: int = 1000
    patience: int = 300
    patience_mode: str = "floor"
    improvement_tol: float = 1e-5
    doa_loss_weight: float = 5.0
    masked_mse: bool = False
    grad_clip: float = 0.0
    sed_threshold: float = DEFAULT_SED_THRESHOLD
    dist_threshold: float = DEFAULT_DIST_THRESHOLD
    matching: str = "greedy"
    select_on: str = "val_gseld"
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0:
            raise SeldValidationError(f"lr 不能为负: {self.lr}", field="train.lr")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise SeldValidationError(f"{name} 必须在 [0,1) 内: {value}", field=f"train.{name}")
        for name in ("eps", "improvement_tol"):
            if getattr(self, name) <= 0:
                raise SeldValidationError(f"{name} 必须为正", field=f"train.{name}")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise SeldValidationError(f"{name} 必须 ≥ 1", field=f"train.{name}")
        if self.min_epochs < 0:
            raise SeldValidationError("min_epochs 不能为负", field="train.min_epochs")
        if self.patience_mode not in ("floor", "after_min"):
            raise SeldValidationError(f"未知的耐心计数方式: {self.patience_mode}", field="train.patience_mode")
        if self.select_on not in SELECTION_CRITERIA:
            raise SeldValidationError(f"未知的选优依据: {self.select_on}，可选 {SELECTION_CRITERIA}",
                                      field="train.select_on")
        if self.doa_loss_weight < 0 or self.grad_clip < 0:
            raise SeldValidationError("doa_loss_weight / grad_clip 不能为负", field="train.doa_loss_weight")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_flat(self) -> Dict[str, Any]:
        return prefixed(self.to_dict(), "train")

    @classmethod
    def from_flat(cls, flat: Dict[str, Any]) -> "TrainConfig":
        values = section(flat, "train")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise SeldValidationError(f"未知配置键: train.{unknown[0]}", field=f"train.{unknown[0]}")
        config = cls(**values)
        config.validate()
        return config


# =========================
# 数据准备
# =========================

@dataclass
class SeldDataset:
    """对齐后的批量数据：features [N,T,256,C]，sed [N,T',42]，doa [N,T',126]"""

    ids: List[str]
    features: np.ndarray
    sed: np.ndarray
    doa: np.ndarray
    frame_times: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index: Sequence[int]) -> "SeldDataset":
        index = list(index)
        return SeldDataset(ids=[self.ids[i] for i in index], features=self.features[index],
                           sed=self.sed[index], doa=self.doa[index], frame_times=self.frame_times)

    def target(self, i: int) -> SeldTarget:
        return SeldTarget(sed=self.sed[i], doa=self.doa[i], frame_times=self.frame_times)


def prepare_dataset(samples: Sequence[Tuple[str, DualMicCapture]], model_config: ModelConfig,
                    normalize_6dof: bool = False, normalize_blocks: str = "magnitude",
                    log_compress: bool = False, phase_reference: str = "absolute") -> SeldDataset:
    """STFT 特征 + 输出帧率下的目标；所有样本必须等长"""
    if not samples:
        raise SeldValidationError("数据集为空", field="data_dir")
    features, seds, doas = [], [], []
    frame_times = None
    for sample_id, capture in samples:
        feats = stft_features(capture, include_phase=model_config.include_phase, log_compress=log_compress,
                              phase_reference=phase_reference)
        if normalize_6dof:
            feats = pack_dual_quaternion(feats, normalize_6dof=True, blocks=normalize_blocks)
        if frame_times is not None and feats.n_frames != len(features[0]):
            raise SeldValidationError(
                f"样本 {sample_id} 帧数 {feats.n_frames} 与其它样本 {len(features[0])} 不一致", field=sample_id)
        times = pool_frame_times(feats.frame_times, model_config.time_pooling)
        n_out = output_frames(model_config, feats.n_frames)
        target = make_targets(capture, n_out, frame_times=times,
                              n_class=model_config.n_class, n_overlap=model_config.n_overlap)
        features.append(feats.data)
        seds.append(target.sed)
        doas.append(target.doa)
        frame_times = times
    return SeldDataset(ids=[s for s, _ in samples], features=np.stack(features), sed=np.stack(seds),
                       doa=np.stack(doas), frame_times=frame_times)


def split_dataset(dataset: SeldDataset, val_fraction: float, seed: int) -> Tuple[SeldDataset, SeldDataset]:
    """按种子打乱后切出验证集（至少保留一个训练样本）"""
    if not 0.0 <= val_fraction < 1.0:
        raise SeldValidationError(f"val_fraction 必须在 [0,1) 内: {val_fraction}", field="data.val_fraction")
    n = len(dataset)
    n_val = min(int(round(n * val_fraction)), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    val_index = sorted(order[:n_val].tolist())
    train_index = sorted(order[n_val:].tolist())
    return dataset.subset(train_index), dataset.subset(val_index)


# =========================
# 损失
# =========================

def _as_pair(obj) -> Tuple[np.ndarray, np.ndarray]:
    return np.asarray(obj.sed), np.asarray(obj.doa)


def _doa_mask(sed_target: np.ndarray) -> np.ndarray:
    return np.repeat(sed_target, 3, axis=-1)


def seld_loss(pred, target, doa_loss_weight: float = 5.0, masked: bool = False) -> Tuple[float, float, float]:
    """(total, sed_loss, doa_loss)：total = BCE(sed) + w·MSE(doa)，两项都是全元素均值"""
    sed_p, doa_p = _as_pair(pred)
    sed_t, doa_t = _as_pair(target)
    if sed_p.shape != sed_t.shape or doa_p.shape != doa_t.shape:
        raise SeldValidationError(
            f"预测与目标形状不一致: sed {sed_p.shape} vs {sed_t.shape}, doa {doa_p.shape} vs {doa_t.shape}",
            field="shape")
    p = np.clip(sed_p.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    bce = float(-np.mean(sed_t * np.log(p) + (1.0 - sed_t) * np.log(1.0 - p)))
    sq = (doa_p.astype(np.float64) - doa_t) ** 2
    if masked:
        mask = _doa_mask(sed_t)
        active = float(mask.sum())
        mse = float((sq * mask).sum() / active) if active > 0 else 0.0
    else:
        mse = float(np.mean(sq))
    return bce + doa_loss_weight * mse, bce, mse


def seld_loss_grad(pred, target, doa_loss_weight: float = 5.0, masked: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """损失对 sed 概率与 doa 输出的梯度"""
    sed_p, doa_p = _as_pair(pred)
    sed_t, doa_t = _as_pair(target)
    raw = sed_p.astype(np.float64)
    p = np.clip(raw, BCE_EPS, 1.0 - BCE_EPS)
    # 被截断的概率在损失里是常数，梯度为0
    inside = (raw >= BCE_EPS) & (raw <= 1.0 - BCE_EPS)
    d_sed = (p - sed_t) / (p * (1.0 - p)) / sed_t.size * inside
    diff = doa_p.astype(np.float64) - doa_t
    if masked:
        mask = _doa_mask(sed_t)
        active = float(mask.sum())
        d_doa = doa_loss_weight * 2.0 * diff * mask / active if active > 0 else np.zeros_like(diff)
    else:
        d_doa = doa_loss_weight * 2.0 * diff / diff.size
    return d_sed.astype(sed_p.dtype), d_doa.astype(doa_p.dtype)


# =========================
# 优化器
# =========================

class Adam:
    """带偏差校正的 Adam，按参数名保存一阶/二阶矩"""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """原地更新 params 中的数组"""
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, param in params.items():
            grad = grads[name].astype(np.float64)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(param.shape, dtype=np.float64)
                self.v[name] = np.zeros(param.shape, dtype=np.float64)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param -= update.astype(param.dtype)

    def state_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """全局范数超过 max_norm 时等比缩放；max_norm ≤ 0 表示不裁剪"""
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    return {name: g * scale for name, g in grads.items()}, norm


# =========================
# 预测与评估
# =========================

def predict(net: Network, features: np.ndarray, batch_size: int = 8) -> SeldOutput:
    """eval 模式批量前向"""
    seds, doas = [], []
    for index in chunked(list(range(features.shape[0])), batch_size):
        out = net.forward_batch(features[index], train=False)
        seds.append(out.sed)
        doas.append(out.doa)
    return SeldOutput(sed=np.concatenate(seds), doa=np.concatenate(doas))


def evaluate_network(net: Network, dataset: SeldDataset, sed_threshold: float = DEFAULT_SED_THRESHOLD,
                     dist_threshold: float = DEFAULT_DIST_THRESHOLD, matching: str = "greedy",
                     batch_size: int = 8) -> SeldScores:
    out = predict(net, dataset.features, batch_size)
    config = net.config
    accumulator = MetricAccumulator(dist_threshold=dist_threshold, matching=matching)
    for i in range(len(dataset)):
        pred = decode_predictions(out.sed[i], out.doa[i], sed_threshold, dataset.frame_times,
                                  config.n_class, config.n_overlap)
        accumulator.update(pred, target_to_frame_events(dataset.target(i)))
    return accumulator.result()


# =========================
# 训练
# =========================

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    sed_loss: float
    doa_loss: float
    val_LSD: float
    val_CSL: float
    val_GSELD: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainResult:
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_score: Optional[float] = None
    stopped_early: bool = False
    duration: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "history": [r.to_dict() for r in self.history],
            "best_epoch": self.best_epoch,
            "best_score": self.best_score,
            "stopped_early": self.stopped_early,
            "duration": self.duration,
        }


class _Batch:
    def __init__(self, sed: np.ndarray, doa: np.ndarray):
        self.sed = sed
        self.doa = doa


def _snapshot(net: Network) -> Dict[str, np.ndarray]:
    state = {name: value.copy() for name, value in net.parameters().items()}
    state.update({name: value.copy() for name, value in net.buffers().items()})
    return state


def _restore(net: Network, state: Dict[str, np.ndarray]) -> None:
    for name, value in state.items():
        net.set_parameter(name, value.copy())


def _check_finite(value: float, epoch: int, batch: int, term: str) -> None:
    if not np.isfinite(value):
        raise NumericalFailure(f"第{epoch}个epoch第{batch}个batch的{term}出现非有限值: {value}",
                               epoch=epoch, batch=batch, term=term)


def fit(net: Network, train_data: SeldDataset, val_data: Optional[SeldDataset], config: TrainConfig,
        checkpoint_path: Optional[str] = None, run_logger: Optional[RunLogger] = None,
        checkpoint_extra: Optional[Dict[str, Any]] = None,
        progress: bool = False) -> TrainResult:
    """训练到 max_epochs 或耐心耗尽，结束时网络恢复为 select_on 判据最优的参数"""
    config.validate()
    if train_data.features.shape[-1] != net.config.input_channels:
        raise SeldValidationError(
            f"数据特征通道 {train_data.features.shape[-1]} 与网络输入 {net.config.input_channels} 不一致",
            field="channels")
    if val_data is None or len(val_data) == 0:
        logger.warning("没有验证样本，改用训练集计算 G-SELD")
        val_data = train_data

    start = time.time()
    net.reseed(config.seed)
    optimizer = Adam(config.lr, config.beta1, config.beta2, config.eps)
    result = TrainResult()
    best_state: Optional[Dict[str, np.ndarray]] = None
    wait = 0

    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng(config.seed + epoch).permutation(len(train_data)).tolist()
        totals = np.zeros(3)
        batches = list(chunked(order, config.batch_size))
        for b, index in enumerate(tqdm(batches, desc=f"epoch {epoch}", leave=False, disable=not progress)):
            index = sorted(index)
            target = _Batch(train_data.sed[index], train_data.doa[index])
            out = net.forward_batch(train_data.features[index], train=True)
            total, sed_l, doa_l = seld_loss(out, target, config.doa_loss_weight, config.masked_mse)
            _check_finite(sed_l, epoch, b, "sed_loss")
            _check_finite(doa_l, epoch, b, "doa_loss")
            _check_finite(total, epoch, b, "total_loss")
            d_sed, d_doa = seld_loss_grad(out, target, config.doa_loss_weight, config.masked_mse)
            grads = net.backward(d_sed, d_doa)
            grads, _ = clip_global_norm(grads, config.grad_clip)
            optimizer.step(net.parameters(), grads)
            totals += np.array([total, sed_l, doa_l]) * len(index)
        totals /= len(train_data)

        scores = evaluate_network(net, val_data, config.sed_threshold, config.dist_threshold,
                                  config.matching, config.batch_size)
        record = EpochRecord(epoch=epoch, train_loss=float(totals[0]), sed_loss=float(totals[1]),
                             doa_loss=float(totals[2]), val_LSD=scores.lsd, val_CSL=scores.csl,
                             val_GSELD=scores.gseld)
        result.history.append(record)

        score = scores.gseld if config.select_on == "val_gseld" else record.train_loss
        improved = result.best_score is None or score <= result.best_score - config.improvement_tol
        if improved:
            result.best_score = score
            result.best_epoch = epoch
            best_state = _snapshot(net)
            wait = 0
            if checkpoint_path:
                save_checkpoint(checkpoint_path, net, optimizer, epoch=epoch, best_score=score,
                                extra=checkpoint_extra)
                if run_logger:
                    run_logger.log_event("checkpoint", {"path": checkpoint_path, "epoch": epoch,
                                                        "select_on": config.select_on, "score": score})
        elif config.patience_mode == "floor" or epoch > config.min_epochs:
            wait += 1

        if run_logger:
            payload = record.to_dict()
            payload["patience_wait"] = wait
            run_logger.log_event("epoch", payload)
        else:
            logger.info("epoch %d: loss=%.6f GSELD=%.4f wait=%d", epoch, record.train_loss, record.val_GSELD, wait)

        if wait >= config.patience and epoch >= config.min_epochs:
            result.stopped_early = True
            break

    if best_state is not None:
        _restore(net, best_state)
    result.duration = time.time() - start
    logger.info("training finished in %s, best epoch %d (%s=%.4f)",
                format_duration(result.duration), result.best_epoch, config.select_on, result.best_score)
    return result


def write_history_csv(path: str, history: Sequence[EpochRecord]) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for record in history:
            writer.writerow(record.to_dict())


def read_history_csv(path: str) -> List[EpochRecord]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != HISTORY_COLUMNS:
            raise SeldValidationError(f"历史文件列不匹配: {reader.fieldnames}", field="columns")
        return [EpochRecord(epoch=int(row["epoch"]), **{k: float(row[k]) for k in HISTORY_COLUMNS[1:]})
                for row in reader]


# =========================
# 检查点
# =========================

@dataclass
class CheckpointInfo:
    config: Dict[str, Any]
    epoch: int
    best_score: Optional[float]
    optimizer: Dict[str, Any]
    extra: Dict[str, Any]


def _entries(net: Network, optimizer: Optional[Adam]) -> List[Tuple[str, str, np.ndarray]]:
    entries = [("param", name, value) for name, value in net.parameters().items()]
    entries += [("buffer", name, value) for name, value in net.buffers().items()]
    if optimizer is not None:
        entries += [("adam_m", name, value) for name, value in optimizer.m.items()]
        entries += [("adam_v", name, value) for name, value in optimizer.v.items()]
    return entries


def save_checkpoint(path: str, net: Network, optimizer: Optional[Adam] = None, epoch: int = 0,
                    best_score: Optional[float] = None, extra: Optional[Dict[str, Any]] = None) -> None:
    """魔数 | 8字节小端头长度 | JSON 头 | 小端原始数据"""
    blobs: List[bytes] = []
    table = []
    offset = 0
    for kind, name, value in _entries(net, optimizer):
        array = np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<"))
        blob = array.tobytes()
        table.append({"kind": kind, "name": name, "shape": list(value.shape),
                      "dtype": value.dtype.name, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": net.config.to_flat(),
        "dtype": net.config.dtype,
        "epoch": int(epoch),
        "best_score": best_score,
        "optimizer": optimizer.state_dict() if optimizer is not None else {},
        "extra": extra or {},
        "entries": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    with open(tmp_path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp_path, path)


def _read_container(path: str) -> Tuple[Dict[str, Any], bytes]:
    if not os.path.exists(path):
        raise SeldValidationError(f"检查点不存在: {path}", field="path")
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise SeldValidationError(f"不是检查点文件（魔数不匹配）: {path}", field="magic")
    start = len(CHECKPOINT_MAGIC)
    if len(raw) < start + 8:
        raise SeldValidationError("检查点头长度字段被截断", field="header_length")
    (header_len,) = struct.unpack("<Q", raw[start:start + 8])
    header_end = start + 8 + header_len
    if len(raw) < header_end:
        raise SeldValidationError("检查点头被截断", field="header")
    try:
        header = json.loads(raw[start + 8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SeldValidationError(f"检查点头解析失败: {e}", field="header") from e
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise SeldValidationError(f"不支持的检查点版本: {header.get('format_version')}", field="format_version")
    return header, raw[header_end:]


def _first_mismatch(expected: Dict[str, Any], stored: Dict[str, Any]) -> Optional[str]:
    for key in sorted(set(expected) | set(stored)):
        if expected.get(key) != stored.get(key):
            return key
    return None


def load_checkpoint(path: str, expected_config: Optional[ModelConfig] = None) -> Tuple[Network, CheckpointInfo]:
    """读取检查点并重建网络；expected_config 与存储配置不一致时报出第一个不同的键"""
    header, payload = _read_container(path)
    stored = header["config"]
    if expected_config is not None:
        key = _first_mismatch(expected_config.to_flat(), stored)
        if key is not None:
            raise SeldValidationError(
                f"检查点配置与期望不一致: {key} = {stored.get(key)!r}，期望 {expected_config.to_flat().get(key)!r}",
                field=key)
    net = build(ModelConfig.from_flat(stored))
    registered = {**net.parameters(), **net.buffers()}
    optimizer_m: Dict[str, np.ndarray] = {}
    optimizer_v: Dict[str, np.ndarray] = {}
    seen = set()
    for entry in header["entries"]:
        name, kind = entry["name"], entry["kind"]
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise SeldValidationError(f"检查点数据被截断: {name}", field=name)
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        array = np.frombuffer(payload, dtype=dtype, count=int(np.prod(entry["shape"], dtype=np.int64)),
                              offset=entry["offset"]).reshape(entry["shape"])
        array = array.astype(np.dtype(entry["dtype"]))
        if kind in ("param", "buffer"):
            if name not in registered:
                raise SeldValidationError(f"检查点中存在网络没有的参数: {name}", field=name)
            net.set_parameter(name, array)
            seen.add(name)
        elif kind == "adam_m":
            optimizer_m[name] = array
        elif kind == "adam_v":
            optimizer_v[name] = array
        else:
            raise SeldValidationError(f"未知的条目类型: {kind}", field=name)
    missing = [name for name in registered if name not in seen]
    if missing:
        raise SeldValidationError(f"检查点缺少参数: {missing[0]}", field=missing[0])
    optimizer_state = dict(header.get("optimizer", {}))
    optimizer_state["m"] = optimizer_m
    optimizer_state["v"] = optimizer_v
    info = CheckpointInfo(config=stored, epoch=int(header.get("epoch", 0)), best_score=header.get("best_score"),
                          optimizer=optimizer_state, extra=header.get("extra", {}))
    return net, info


def restore_optimizer(info: CheckpointInfo) -> Adam:
    state = info.optimizer
    optimizer = Adam(state.get("lr", 1e-4), state.get("beta1", 0.9), state.get("beta2", 0.999),
                     state.get("eps", 1e-8))
    optimizer.t = int(state.get("t", 0))
    optimizer.m = {k: v.astype(np.float64) for k, v in state.get("m", {}).items()}
    optimizer.v = {k: v.astype(np.float64) for k, v in state.get("v", {}).items()}
    return optimizer


def checkpoint_roundtrip(net: Network, path: str) -> Network:
    save_checkpoint(path, net)
    loaded, _ = load_checkpoint(path, expected_config=net.config)
    return loaded
