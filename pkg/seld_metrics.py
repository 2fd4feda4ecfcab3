# -*- coding: utf-8 -*-
"""
SELD 评估指标

脚本目标:
    - 计算位置敏感检测指标 (ER, F)、类别敏感定位指标 (LE, LR) 以及组合分数 LSD / CSL / G-SELD。

上下文:
    - trainer 每个 epoch 用 evaluate 计算验证集 G-SELD 作为早停依据；dualq_seld eval 命令输出完整报告。
    - 所有指标逐帧计算（模型输出帧率），不做1秒分段聚合。

输入:
    - FrameEvents：每帧的 (class_id, 位置三元组) 列表，预测由 SED 阈值解码而来，参考由目标矩阵转换而来。

执行步骤:
    1. 每帧每个类别内配对（默认贪心最近优先，可选匈牙利匹配）
    2. 累加 TP/FP/FN/S/D/I 与角度误差计数（可跨样本求和）
    3. 由计数得到 ER、F、LE、LR，再组合为 LSD、CSL、G-SELD

输出:
    - SeldScores（er, f, le_degrees, lr, lsd, csl, gseld）
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ambisonics import N_CLASS, N_OVERLAP, SeldTarget
from utils import SeldValidationError

DEFAULT_SED_THRESHOLD = 0.5
DEFAULT_DIST_THRESHOLD = 2.0
MATCHING_MODES = ("greedy", "hungarian")
_UNMATCHABLE = 1e12

# 参数量与分数参考表（L3DAS21 数据集）
REFERENCE_RESULTS = [
    {"model": "SELD-TCN", "kind": "real", "params": "1.6M", "features": "Mag",
     "lsd": 0.533, "csl": 0.413, "gseld": 0.473},
    {"model": "QSELD-TCN", "kind": "quaternion_parallel", "params": "0.8M", "features": "Mag",
     "lsd": 0.506, "csl": 0.404, "gseld": 0.455},
    {"model": "QSELD-TCN", "kind": "quaternion_parallel", "params": "1.6M", "features": "Mag",
     "lsd": 0.550, "csl": 0.378, "gseld": 0.464},
    {"model": "DualQSELD-TCN", "kind": "dualq", "params": "1.8M", "features": "Mag",
     "lsd": 0.512, "csl": 0.365, "gseld": 0.439},
    {"model": "DualQSELD-TCN", "kind": "dualq", "params": "1.8M", "features": "Mag+Phase",
     "lsd": 0.410, "csl": 0.303, "gseld": 0.356},
    {"model": "DualQSELD-TCN-parallel", "kind": "dualq_parallel", "params": "3.6M", "features": "Mag+Phase",
     "lsd": 0.369, "csl": 0.279, "gseld": 0.324},
]


# =========================
# 数据结构
# =========================

@dataclass(frozen=True)
class Event:
    class_id: int
    position: Tuple[float, float, float]


@dataclass
class FrameEvents:
    """逐帧事件列表"""

    frames: List[List[Event]]
    frame_times: Optional[np.ndarray] = None
    n_class: int = N_CLASS

    def __post_init__(self):
        for frame in self.frames:
            for event in frame:
                if not 0 <= event.class_id < self.n_class:
                    raise SeldValidationError(
                        f"class_id={event.class_id} 超出 n_class={self.n_class}", field="class_id")
                if not np.all(np.isfinite(event.position)):
                    raise SeldValidationError("事件位置必须是有限值", field="position")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_events(self) -> int:
        return sum(len(frame) for frame in self.frames)


@dataclass
class LocationCounts:
    """位置敏感检测计数，可跨样本相加"""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    n_ref: int = 0

    def __add__(self, other: "LocationCounts") -> "LocationCounts":
        return LocationCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    @property
    def er(self) -> float:
        errors = self.substitutions + self.deletions + self.insertions
        return errors / max(self.n_ref, 1)

    @property
    def f(self) -> float:
        denominator = 2 * self.tp + self.fp + self.fn
        if denominator == 0:
            return 1.0
        return 2 * self.tp / denominator


@dataclass
class LocalizationCounts:
    """类别敏感定位计数：匹配对角度误差和、匹配数、参考/预测事件总数"""

    angle_sum: float = 0.0
    n_matched: int = 0
    n_ref: int = 0
    n_pred: int = 0

    def __add__(self, other: "LocalizationCounts") -> "LocalizationCounts":
        return LocalizationCounts(self.angle_sum + other.angle_sum, self.n_matched + other.n_matched,
                                  self.n_ref + other.n_ref, self.n_pred + other.n_pred)

    @property
    def le(self) -> float:
        if self.n_matched == 0:
            # 参考与预测都为空视为完美；否则没有匹配按最差的180°计
            return 0.0 if self.n_ref == 0 and self.n_pred == 0 else 180.0
        return self.angle_sum / self.n_matched

    @property
    def lr(self) -> float:
        if self.n_ref == 0:
            return 1.0
        return self.n_matched / self.n_ref


@dataclass
class SeldScores:
    er: float
    f: float
    le_degrees: float
    lr: float
    lsd: float
    csl: float
    gseld: float

    def to_dict(self) -> Dict[str, float]:
        return {key: float(value) for key, value in asdict(self).items()}


# =========================
# 解码
# =========================

def decode_predictions(sed, doa=None, sed_threshold: float = DEFAULT_SED_THRESHOLD,
                       frame_times: Optional[np.ndarray] = None, n_class: int = N_CLASS,
                       n_overlap: int = N_OVERLAP) -> FrameEvents:
    """
    每个 (类别, 重叠槽位) 的 sed ≥ 阈值即解码为一个事件，位置取对应的 DOA 三元组。

    sed 也可以直接是网络输出（带 .sed/.doa/.frame_times 的 SeldOutput），
    此时第二个位置参数视为阈值：decode_predictions(output, 0.5)。
    """
    if hasattr(sed, "sed") and hasattr(sed, "doa"):
        output = sed
        if doa is not None:
            sed_threshold = float(doa)
        if frame_times is None:
            frame_times = getattr(output, "frame_times", None)
        sed, doa = output.sed, output.doa
        if np.ndim(sed) == 3:
            if np.shape(sed)[0] != 1:
                raise SeldValidationError(f"批量输出需逐样本解码: batch={np.shape(sed)[0]}", field="shape")
            sed, doa = sed[0], doa[0]
    elif doa is None:
        raise SeldValidationError("缺少 doa 输出", field="doa")
    if not 0.0 < sed_threshold < 1.0:
        raise SeldValidationError(f"sed_threshold 必须在 (0,1) 内: {sed_threshold}", field="sed_threshold")
    sed = np.asarray(sed)
    doa = np.asarray(doa)
    width = n_class * n_overlap
    if sed.ndim != 2 or sed.shape[1] != width or doa.shape != (sed.shape[0], 3 * width):
        raise SeldValidationError(f"输出形状不匹配: sed{sed.shape}, doa{doa.shape}", field="shape")
    frames: List[List[Event]] = []
    for k in range(sed.shape[0]):
        events = []
        for column in np.flatnonzero(sed[k] >= sed_threshold):
            position = tuple(float(v) for v in doa[k, 3 * column:3 * column + 3])
            events.append(Event(class_id=int(column // n_overlap), position=position))
        frames.append(events)
    return FrameEvents(frames=frames, frame_times=frame_times, n_class=n_class)


def target_to_frame_events(target: SeldTarget) -> FrameEvents:
    """把目标矩阵转成参考事件（sed 目标为 0/1，用 0.5 作为阈值）"""
    return decode_predictions(target.sed, target.doa, 0.5, target.frame_times, target.n_class, target.n_overlap)


# =========================
# 配对
# =========================

def _angle_degrees(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        return 180.0
    cosine = np.clip(np.dot(a, b) / norm, -1.0, 1.0)
    return float(np.degrees(np.arccos(cosine)))


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


def _pair(cost: np.ndarray, limit: float, matching: str) -> List[Tuple[int, int, float]]:
    """返回 (预测索引, 参考索引, 代价)，只保留代价 ≤ limit 的配对"""
    if cost.size == 0:
        return []
    if matching == "hungarian":
        masked = np.where(cost <= limit, cost, _UNMATCHABLE)
        rows, cols = linear_sum_assignment(masked)
        return [(int(r), int(c), float(cost[r, c])) for r, c in zip(rows, cols) if cost[r, c] <= limit]
    pairs = []
    used_pred, used_ref = set(), set()
    # 稳定排序：代价相同时按 (预测, 参考) 索引
    order = np.argsort(cost, axis=None, kind="stable")
    for flat in order:
        r, c = np.unravel_index(flat, cost.shape)
        if cost[r, c] > limit:
            break
        if r in used_pred or c in used_ref:
            continue
        used_pred.add(r)
        used_ref.add(c)
        pairs.append((int(r), int(c), float(cost[r, c])))
    return pairs


def _by_class(frame: Sequence[Event]) -> Dict[int, List[Event]]:
    groups: Dict[int, List[Event]] = {}
    for event in frame:
        groups.setdefault(event.class_id, []).append(event)
    return groups


def _check_aligned(pred: FrameEvents, ref: FrameEvents) -> None:
    if pred.n_frames != ref.n_frames:
        raise SeldValidationError(
            f"预测帧数{pred.n_frames}与参考帧数{ref.n_frames}不一致", field="n_frames")


def _check_matching(matching: str) -> None:
    if matching not in MATCHING_MODES:
        raise SeldValidationError(f"未知的配对方式: {matching}，可选 {MATCHING_MODES}", field="matching")


def location_counts(pred: FrameEvents, ref: FrameEvents, dist_threshold: float = DEFAULT_DIST_THRESHOLD,
                    matching: str = "greedy") -> LocationCounts:
    _check_aligned(pred, ref)
    _check_matching(matching)
    counts = LocationCounts()
    for pred_frame, ref_frame in zip(pred.frames, ref.frames):
        preds, refs = _by_class(pred_frame), _by_class(ref_frame)
        tp = 0
        for class_id in set(preds) & set(refs):
            cost = np.array([[_distance(p.position, r.position) for r in refs[class_id]]
                             for p in preds[class_id]])
            tp += len(_pair(cost, dist_threshold, matching))
        fp = len(pred_frame) - tp
        fn = len(ref_frame) - tp
        counts.tp += tp
        counts.fp += fp
        counts.fn += fn
        counts.substitutions += min(fn, fp)
        counts.deletions += max(0, fn - fp)
        counts.insertions += max(0, fp - fn)
        counts.n_ref += len(ref_frame)
    return counts


def localization_counts(pred: FrameEvents, ref: FrameEvents, matching: str = "greedy") -> LocalizationCounts:
    _check_aligned(pred, ref)
    _check_matching(matching)
    counts = LocalizationCounts()
    for pred_frame, ref_frame in zip(pred.frames, ref.frames):
        preds, refs = _by_class(pred_frame), _by_class(ref_frame)
        for class_id in set(preds) & set(refs):
            cost = np.array([[_angle_degrees(p.position, r.position) for r in refs[class_id]]
                             for p in preds[class_id]])
            for _, _, angle in _pair(cost, np.inf, matching):
                counts.angle_sum += angle
                counts.n_matched += 1
        counts.n_ref += len(ref_frame)
        counts.n_pred += len(pred_frame)
    return counts


def location_sensitive_detection(pred: FrameEvents, ref: FrameEvents,
                                 dist_threshold: float = DEFAULT_DIST_THRESHOLD,
                                 matching: str = "greedy") -> Tuple[float, float]:
    """(ER, F)：同类配对距离 ≤ dist_threshold 记为 TP"""
    counts = location_counts(pred, ref, dist_threshold, matching)
    return counts.er, counts.f


def class_sensitive_localization(pred: FrameEvents, ref: FrameEvents,
                                 matching: str = "greedy") -> Tuple[float, float]:
    """(LE 度, LR)：同类按夹角从小到大配对"""
    counts = localization_counts(pred, ref, matching)
    return counts.le, counts.lr


# =========================
# 组合分数
# =========================

def scores(er: float, f: float, le: float, lr: float) -> Tuple[float, float, float]:
    """LSD = (ER + 1 - F)/2，CSL = (LE/180 + 1 - LR)/2，G-SELD = (LSD + CSL)/2"""
    lsd = (er + (1.0 - f)) / 2.0
    csl = (le / 180.0 + (1.0 - lr)) / 2.0
    return lsd, csl, (lsd + csl) / 2.0


def scores_from_counts(location: LocationCounts, localization: LocalizationCounts) -> SeldScores:
    er, f = location.er, location.f
    le, lr = localization.le, localization.lr
    lsd, csl, gseld = scores(er, f, le, lr)
    return SeldScores(er=er, f=f, le_degrees=le, lr=lr, lsd=lsd, csl=csl, gseld=gseld)


@dataclass
class MetricAccumulator:
    """跨样本累加计数（并行评估时按样本求和）"""

    dist_threshold: float = DEFAULT_DIST_THRESHOLD
    matching: str = "greedy"
    location: LocationCounts = field(default_factory=LocationCounts)
    localization: LocalizationCounts = field(default_factory=LocalizationCounts)

    def update(self, pred: FrameEvents, ref: FrameEvents) -> None:
        self.location = self.location + location_counts(pred, ref, self.dist_threshold, self.matching)
        self.localization = self.localization + localization_counts(pred, ref, self.matching)

    def result(self) -> SeldScores:
        return scores_from_counts(self.location, self.localization)


def evaluate(pred: FrameEvents, ref: FrameEvents, dist_threshold: float = DEFAULT_DIST_THRESHOLD,
             matching: str = "greedy") -> SeldScores:
    accumulator = MetricAccumulator(dist_threshold=dist_threshold, matching=matching)
    accumulator.update(pred, ref)
    return accumulator.result()
