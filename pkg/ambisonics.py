# -*- coding: utf-8 -*-
"""
双Ambisonics麦克风场景合成与特征管线

脚本目标:
    - 合成两个一阶Ambisonics(B-format)麦克风采集的无回声场景，提取STFT特征，
      按对偶四元数约定打包（可选6DOF归一化），并生成对齐的SED/DOA目标矩阵。

上下文:
    - 桌面规模下替代原始数据集：声源为按类别参数化的窄带噪声突发，类别 k 占据 [16k, 16k+16) 频点；
    - 下游 seld_model 消费 FeatureTensor，trainer/seld_metrics 消费 SeldTarget。

输入:
    - SceneSpec（时长、采样率、事件列表、两个麦克风位置、噪声底）与随机种子；
    - 或磁盘数据集 samples/<id>/audio_a.wav, audio_b.wav, labels.json。

执行步骤:
    1. encode_bformat: 单声道信号按 (θ, φ) 编码为 W,X,Y,Z 四通道；
    2. synthesize_scene: 每个事件按各自麦克风方向编码、1/距离衰减、整数样本延迟后求和，加高斯噪声；
    3. stft_features: Hamming窗512、跳长256，保留 0..255 频点，幅度(可取对数)+相位(可取相对W的相位差)堆叠为 [T,256,C]；
    4. pack_dual_quaternion: 麦克风A为主部、B为对偶部，可选逐时频点6DOF归一化；
    5. make_targets: [n_frame, n_class·n_overlap] 的SED矩阵与 ×3 的DOA矩阵。

输出:
    - DualMicCapture / FeatureTensor / SeldTarget，以及磁盘上的数据集。
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.io import wavfile

from hypercomplex import dq_normalize_6dof_array
from utils import SeldValidationError, convert_to_serializable, load_json, save_json

# =========================
# 常量
# =========================

N_CLASS = 14
N_OVERLAP = 3
SAMPLE_RATE = 32000
STFT_WINDOW = 512
STFT_HOP = 256
MIN_GAIN_DB = -20.0
PHASE_REFERENCES = ("absolute", "omni")
# 类别 k 的能量集中在 [16k, 16k+16) 频点内，频率池化到16个位置后各占一格
CLASS_BASE_HZ = 500.0
CLASS_SPACING_HZ = 1000.0
CLASS_HALF_BAND_HZ = 150.0
N_BINS = 256
SPEED_OF_SOUND = 343.0
MIN_DISTANCE = 0.1
DEFAULT_MIC_POSITIONS = ((-0.1, 0.0, 0.0), (0.1, 0.0, 0.0))
CHANNEL_NAMES = ("W", "X", "Y", "Z")


# =========================
# 数据结构定义
# =========================

@dataclass
class SourceEvent:
    """一个声源事件（位置以阵列中心为原点，单位米）"""

    class_id: int
    onset: float
    offset: float
    position: Tuple[float, float, float]
    gain: float = 0.0
    waveform_seed: int = 0

    def __post_init__(self):
        self.class_id = int(self.class_id)
        self.onset = float(self.onset)
        self.offset = float(self.offset)
        self.position = tuple(float(v) for v in self.position)
        self.gain = float(self.gain)
        self.waveform_seed = int(self.waveform_seed)
        if not MIN_GAIN_DB <= self.gain <= 0.0:
            raise SeldValidationError(f"增益必须在 [{MIN_GAIN_DB}, 0] dB 内: {self.gain}", field="gain")

    def direction_from(self, mic_position: Sequence[float]) -> Tuple[float, float]:
        """相对某个麦克风的 (方位角θ, 仰角φ)，弧度"""
        return direction_to(self.position, mic_position)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "class_id": self.class_id,
            "onset": self.onset,
            "offset": self.offset,
            "position": list(self.position),
            "gain": self.gain,
            "waveform_seed": self.waveform_seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SourceEvent":
        return cls(
            class_id=data["class_id"],
            onset=data["onset"],
            offset=data["offset"],
            position=tuple(data["position"]),
            gain=data.get("gain", 0.0),
            waveform_seed=data.get("waveform_seed", 0),
        )


@dataclass
class SceneSpec:
    """场景描述：只考虑直达声（无混响），恰好两个麦克风"""

    duration: float
    events: List[SourceEvent] = field(default_factory=list)
    sample_rate: int = SAMPLE_RATE
    mic_positions: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = DEFAULT_MIC_POSITIONS
    noise_floor: float = -60.0
    n_class: int = N_CLASS
    max_overlap: int = N_OVERLAP

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise SeldValidationError(f"采样率必须为正: {self.sample_rate}", field="sample_rate")
        if self.duration <= 0:
            raise SeldValidationError(f"时长必须为正: {self.duration}", field="duration")
        if len(self.mic_positions) != 2:
            raise SeldValidationError(f"必须恰好两个麦克风，收到{len(self.mic_positions)}个", field="mic_positions")
        for index, event in enumerate(self.events):
            if not 0 <= event.class_id < self.n_class:
                raise SeldValidationError(
                    f"事件{index}的class_id={event.class_id}超出[0,{self.n_class})", field="class_id")
            if not event.onset < event.offset:
                raise SeldValidationError(
                    f"事件{index}的onset({event.onset})必须小于offset({event.offset})", field="onset")
            if not np.all(np.isfinite(event.position)):
                raise SeldValidationError(f"事件{index}的位置不是有限值", field="position")
        peak = max_concurrency(self.events)
        if peak > self.max_overlap:
            raise SeldValidationError(
                f"同时活跃事件数{peak}超过上限{self.max_overlap}", field="events")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "duration": self.duration,
            "sample_rate": self.sample_rate,
            "mic_positions": [list(p) for p in self.mic_positions],
            "noise_floor": self.noise_floor,
            "n_class": self.n_class,
            "max_overlap": self.max_overlap,
            "events": [e.to_dict() for e in self.events],
        }


@dataclass
class DualMicCapture:
    """两路对齐的4通道B-format时域信号（通道顺序 W,X,Y,Z）及真值事件"""

    mic_a: np.ndarray
    mic_b: np.ndarray
    labels: List[SourceEvent]
    sample_rate: int = SAMPLE_RATE
    mic_positions: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = DEFAULT_MIC_POSITIONS

    def __post_init__(self):
        if self.mic_a.shape != self.mic_b.shape:
            raise SeldValidationError(
                f"两路信号长度不一致: {self.mic_a.shape} vs {self.mic_b.shape}", field="mic_b")
        if self.mic_a.ndim != 2 or self.mic_a.shape[1] != 4:
            raise SeldValidationError(f"每路信号必须是 [N,4]，收到 {self.mic_a.shape}", field="mic_a")

    @property
    def n_samples(self) -> int:
        return int(self.mic_a.shape[0])

    @property
    def duration(self) -> float:
        return self.n_samples / float(self.sample_rate)

    def stacked(self) -> np.ndarray:
        """[N,8]：麦克风A的W,X,Y,Z，然后麦克风B的W,X,Y,Z"""
        return np.concatenate([self.mic_a, self.mic_b], axis=1)


@dataclass
class FeatureTensor:
    """STFT特征 [T, 256, C]，C=8（幅度）或 16（幅度+相位）"""

    data: np.ndarray
    frame_times: np.ndarray
    normalized_6dof: bool = False

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[1] != N_BINS:
            raise SeldValidationError(f"特征形状必须是 [T,{N_BINS},C]，收到 {self.data.shape}", field="data")
        if self.data.shape[2] not in (8, 16):
            raise SeldValidationError(f"特征通道数必须是8或16，收到{self.data.shape[2]}", field="channels")
        if len(self.frame_times) != self.data.shape[0]:
            raise SeldValidationError("frame_times 长度与帧数不一致", field="frame_times")

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def include_phase(self) -> bool:
        return self.channels == 16


@dataclass
class SeldTarget:
    """SED: [n_frame, n_class·n_overlap]；DOA: [n_frame, n_class·n_overlap·3]（米）"""

    sed: np.ndarray
    doa: np.ndarray
    frame_times: np.ndarray
    n_class: int = N_CLASS
    n_overlap: int = N_OVERLAP

    @property
    def n_frames(self) -> int:
        return int(self.sed.shape[0])


# =========================
# 编码与几何
# =========================

def encode_bformat(s: np.ndarray, theta: float, phi: float) -> np.ndarray:
    """一阶B-format编码，返回最后一维为 (W,X,Y,Z) 的数组"""
    s = np.asarray(s, dtype=np.float64)
    return np.stack([
        s / math.sqrt(3.0),
        s * math.cos(theta) * math.cos(phi),
        s * math.sin(theta) * math.cos(phi),
        s * math.sin(phi),
    ], axis=-1)


def direction_to(source: Sequence[float], mic: Sequence[float]) -> Tuple[float, float]:
    dx, dy, dz = (float(source[i]) - float(mic[i]) for i in range(3))
    theta = math.atan2(dy, dx)
    phi = math.atan2(dz, math.hypot(dx, dy))
    return theta, phi


def distance_between(source: Sequence[float], mic: Sequence[float]) -> float:
    return math.dist(tuple(float(v) for v in source), tuple(float(v) for v in mic))


def max_concurrency(events: Sequence[SourceEvent]) -> int:
    """任一时刻同时活跃的最大事件数（区间左闭右开）"""
    boundaries = []
    for event in events:
        boundaries.append((event.onset, 1))
        boundaries.append((event.offset, -1))
    # 同一时刻先结束后开始
    boundaries.sort(key=lambda item: (item[0], item[1]))
    active = peak = 0
    for _, delta in boundaries:
        active += delta
        peak = max(peak, active)
    return peak


# =========================
# 场景合成
# =========================

def class_center_frequency(class_id: int) -> float:
    """每个类别的中心频率：500 Hz 起每类间隔 1 kHz，落在第 16k+8 个STFT频点"""
    return CLASS_BASE_HZ + CLASS_SPACING_HZ * class_id


def class_waveform(class_id: int, n_samples: int, sample_rate: int, seed: int) -> np.ndarray:
    """按类别参数化的窄带噪声突发（RMS归一化为1），由 seed 决定"""
    if n_samples <= 0:
        return np.zeros(0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(n_samples)

    center = class_center_frequency(class_id)
    nyquist = sample_rate / 2.0
    low = max(center - CLASS_HALF_BAND_HZ, 1.0)
    high = min(center + CLASS_HALF_BAND_HZ, 0.95 * nyquist)
    if low >= high:
        raise SeldValidationError(f"类别 {class_id} 的中心频率 {center} Hz 超出采样率 {sample_rate}",
                                  field="class_id")
    sos = signal.butter(4, [low, high], btype="bandpass", fs=sample_rate, output="sos")
    burst = signal.sosfilt(sos, noise)

    # 类别相关的幅度调制，让不同类别在包络上也可区分
    t = np.arange(n_samples) / sample_rate
    rate = 1.5 + 0.5 * class_id
    envelope = 0.6 + 0.4 * np.cos(2.0 * np.pi * rate * t)
    fade = min(n_samples // 2, int(0.01 * sample_rate))
    if fade > 0:
        ramp = np.hanning(2 * fade)
        envelope[:fade] *= ramp[:fade]
        envelope[-fade:] *= ramp[fade:]
    burst = burst * envelope

    rms = float(np.sqrt(np.mean(burst ** 2)))
    if rms > 0.0:
        burst = burst / rms
    return burst


def synthesize_scene(spec: SceneSpec, rng_seed: int) -> DualMicCapture:
    """合成双麦克风B-format场景，给定 (spec, rng_seed) 结果逐位确定"""
    spec.validate()
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    buffers = [np.zeros((n, 4), dtype=np.float64), np.zeros((n, 4), dtype=np.float64)]

    for event in spec.events:
        start = int(round(event.onset * sr))
        stop = min(n, int(round(event.offset * sr)))
        length = stop - start
        if length <= 0:
            continue
        wave = class_waveform(event.class_id, length, sr, event.waveform_seed) * 10.0 ** (event.gain / 20.0)
        for mic_position, buffer in zip(spec.mic_positions, buffers):
            theta, phi = event.direction_from(mic_position)
            distance = distance_between(event.position, mic_position)
            delay = int(round(distance / SPEED_OF_SOUND * sr))
            begin = start + delay
            if begin >= n:
                continue
            end = min(n, begin + length)
            buffer[begin:end] += encode_bformat(wave[:end - begin], theta, phi) / max(distance, MIN_DISTANCE)

    if math.isfinite(spec.noise_floor):
        rng = np.random.default_rng(rng_seed)
        std = 10.0 ** (spec.noise_floor / 20.0)
        for buffer in buffers:
            buffer += rng.normal(0.0, std, size=buffer.shape)

    return DualMicCapture(
        mic_a=buffers[0],
        mic_b=buffers[1],
        labels=list(spec.events),
        sample_rate=sr,
        mic_positions=spec.mic_positions,
    )


def random_scene_spec(rng: np.random.Generator, duration: float, n_class: int = N_CLASS,
                      max_overlap: int = N_OVERLAP, max_events: int = 4,
                      sample_rate: int = SAMPLE_RATE, noise_floor: float = -60.0,
                      mic_positions=DEFAULT_MIC_POSITIONS) -> SceneSpec:
    """随机生成一个满足并发上限的场景描述（cmd_synth 使用）"""
    events: List[SourceEvent] = []
    n_events = int(rng.integers(1, max_events + 1))
    attempts = 0
    while len(events) < n_events and attempts < 100:
        attempts += 1
        length = float(rng.uniform(0.3, 1.0)) * min(1.0, duration)
        onset = float(rng.uniform(0.0, max(duration - length, 0.0)))
        radius = float(rng.uniform(1.0, 3.0))
        azimuth = float(rng.uniform(-math.pi, math.pi))
        elevation = float(rng.uniform(-math.pi / 4, math.pi / 4))
        position = (
            radius * math.cos(azimuth) * math.cos(elevation),
            radius * math.sin(azimuth) * math.cos(elevation),
            radius * math.sin(elevation),
        )
        candidate = SourceEvent(
            class_id=int(rng.integers(0, n_class)),
            onset=round(onset, 4),
            offset=round(onset + length, 4),
            position=tuple(round(v, 4) for v in position),
            # 声源间幅度差在 [0, 20] dBFS 内均匀分布
            gain=round(-float(rng.uniform(0.0, 20.0)), 3),
            waveform_seed=int(rng.integers(0, 2 ** 31 - 1)),
        )
        if max_concurrency(events + [candidate]) <= max_overlap:
            events.append(candidate)
    events.sort(key=lambda e: (e.onset, e.class_id))
    return SceneSpec(duration=duration, events=events, sample_rate=sample_rate,
                     mic_positions=mic_positions, noise_floor=noise_floor,
                     n_class=n_class, max_overlap=max_overlap)


# =========================
# 特征提取
# =========================

def stft_frame_times(n_frames: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """第k帧的时间取其分析窗口的中心"""
    return (np.arange(n_frames) * STFT_HOP + STFT_WINDOW / 2.0) / sample_rate


def stft_frame_count(n_samples: int, window: int = STFT_WINDOW, hop: int = STFT_HOP) -> int:
    return (n_samples - window) // hop + 1


def stft_features(capture: DualMicCapture, include_phase: bool = False, log_compress: bool = False,
                  phase_reference: str = "absolute") -> FeatureTensor:
    """
    逐通道STFT（Hamming 512 / 跳长 256，不补零），去掉Nyquist频点得到256个频点。

    log_compress: 幅度取 log(1+|S|)
    phase_reference: "absolute" 为原始相位；"omni" 时 X/Y/Z 的相位取相对同一麦克风 W 通道的相位差
        （W 保留原始相位），声源在该轴上的正负号直接体现为相位差接近 0 或 ±π
    """
    if phase_reference not in PHASE_REFERENCES:
        raise SeldValidationError(f"未知的相位参考: {phase_reference}，可选 {PHASE_REFERENCES}",
                                  field="data.phase_reference")
    x = capture.stacked()
    if x.shape[0] < STFT_WINDOW:
        raise SeldValidationError(
            f"信号长度{x.shape[0]}小于STFT窗长{STFT_WINDOW}", field="n_samples")
    window = signal.get_window("hamming", STFT_WINDOW)
    frames = sliding_window_view(x, STFT_WINDOW, axis=0)[::STFT_HOP]  # [T, 8, 512]
    spectrum = np.fft.rfft(frames * window, axis=-1)[..., :N_BINS]   # [T, 8, 256]
    spectrum = np.transpose(spectrum, (0, 2, 1))                      # [T, 256, 8]

    magnitude = np.abs(spectrum)
    blocks = [np.log1p(magnitude) if log_compress else magnitude]
    if include_phase:
        phase = np.angle(spectrum)
        if phase_reference == "omni":
            for w in (0, 4):
                omni = spectrum[..., w:w + 1]
                phase[..., w + 1:w + 4] = np.angle(spectrum[..., w + 1:w + 4] * np.conj(omni))
        blocks.append(phase)
    data = np.concatenate(blocks, axis=-1)

    n_frames = data.shape[0]
    frame_times = stft_frame_times(n_frames, capture.sample_rate)
    return FeatureTensor(data=data, frame_times=frame_times)


def pack_dual_quaternion(features: FeatureTensor, normalize_6dof: bool = False,
                         blocks: str = "magnitude") -> FeatureTensor:
    """对偶四元数封装：每个8通道块中麦克风A为主部、麦克风B为对偶部

    布局本身不变（nn_layers 按此约定解释通道）；normalize_6dof 时逐时频点做单位对偶四元数约束，
    主部范数 < 1e-6 的位置原样保留。blocks 取 "magnitude"（默认，仅幅度块）或 "all"。
    """
    channels = features.data.shape[-1]
    if channels not in (8, 16):
        raise SeldValidationError(f"对偶四元数封装需要8或16通道，收到{channels}", field="channels")
    if blocks not in ("magnitude", "all"):
        raise SeldValidationError(f"未知的归一化范围: {blocks}", field="blocks")
    if not normalize_6dof:
        return FeatureTensor(data=features.data.copy(), frame_times=features.frame_times.copy(),
                             normalized_6dof=features.normalized_6dof)

    data = features.data.astype(np.float64, copy=True)
    n_blocks = 1 if blocks == "magnitude" else channels // 8
    for block in range(n_blocks):
        base = 8 * block
        primal, dual = dq_normalize_6dof_array(data[..., base:base + 4], data[..., base + 4:base + 8])
        data[..., base:base + 4] = primal
        data[..., base + 4:base + 8] = dual
    return FeatureTensor(data=data, frame_times=features.frame_times.copy(), normalized_6dof=True)


# =========================
# 目标矩阵
# =========================

def assign_overlap_slots(events: Sequence[SourceEvent], n_overlap: int = N_OVERLAP) -> List[int]:
    """为每个事件分配类内重叠槽位：按起始时间处理，取起始时刻最低的空闲槽位，整段事件保持不变"""
    order = sorted(range(len(events)), key=lambda i: (events[i].onset, i))
    slots = [-1] * len(events)
    for i in order:
        event = events[i]
        busy = {
            slots[j] for j in range(len(events))
            if slots[j] >= 0 and events[j].class_id == event.class_id
            and events[j].onset < event.offset and event.onset < events[j].offset
        }
        free = [s for s in range(n_overlap) if s not in busy]
        if not free:
            raise SeldValidationError(
                f"类别{event.class_id}在{event.onset:.3f}s同时活跃的事件超过{n_overlap}个", field="events")
        slots[i] = free[0]
    return slots


def make_targets(capture: DualMicCapture, n_frames: int, frame_times: Optional[np.ndarray] = None,
                 n_class: int = N_CLASS, n_overlap: int = N_OVERLAP) -> SeldTarget:
    """构造SED/DOA目标；frame_times 缺省时取STFT各帧窗口中心的时间"""
    if n_frames <= 0:
        raise SeldValidationError(f"帧数必须为正: {n_frames}", field="n_frames")
    if frame_times is None:
        frame_times = stft_frame_times(n_frames, capture.sample_rate)
    frame_times = np.asarray(frame_times, dtype=np.float64)
    if len(frame_times) != n_frames:
        raise SeldValidationError("frame_times 长度与 n_frames 不一致", field="frame_times")

    events = capture.labels
    slots = assign_overlap_slots(events, n_overlap)
    sed = np.zeros((n_frames, n_class * n_overlap), dtype=np.float64)
    doa = np.zeros((n_frames, n_class * n_overlap * 3), dtype=np.float64)
    for event, slot in zip(events, slots):
        if event.class_id >= n_class:
            raise SeldValidationError(f"class_id={event.class_id}超出n_class={n_class}", field="class_id")
        column = event.class_id * n_overlap + slot
        active = (frame_times >= event.onset) & (frame_times < event.offset)
        sed[active, column] = 1.0
        doa[active, 3 * column:3 * column + 3] = event.position
    return SeldTarget(sed=sed, doa=doa, frame_times=frame_times, n_class=n_class, n_overlap=n_overlap)


def pool_frame_times(frame_times: np.ndarray, widths: Sequence[int]) -> np.ndarray:
    """按时间池化宽度（ceil模式）得到输出帧的时间（每组帧时间的均值）"""
    times = np.asarray(frame_times, dtype=np.float64)
    for width in widths:
        width = int(width)
        if width <= 1:
            continue
        n_out = -(-len(times) // width)
        times = np.array([times[k * width:(k + 1) * width].mean() for k in range(n_out)])
    return times


# =========================
# 磁盘数据集
# =========================

def write_sample(sample_dir: str, capture: DualMicCapture, extra: Optional[Dict[str, Any]] = None) -> None:
    """写出一个样本：两个4通道32位浮点WAV + labels.json"""
    os.makedirs(sample_dir, exist_ok=True)
    wavfile.write(os.path.join(sample_dir, "audio_a.wav"), capture.sample_rate, capture.mic_a.astype(np.float32))
    wavfile.write(os.path.join(sample_dir, "audio_b.wav"), capture.sample_rate, capture.mic_b.astype(np.float32))
    labels = {
        "sample_rate": capture.sample_rate,
        "n_samples": capture.n_samples,
        "mic_positions": [list(p) for p in capture.mic_positions],
        "events": [e.to_dict() for e in capture.labels],
    }
    if extra:
        labels.update(convert_to_serializable(extra))
    save_json(os.path.join(sample_dir, "labels.json"), labels)


def read_sample(sample_dir: str) -> DualMicCapture:
    labels = load_json(os.path.join(sample_dir, "labels.json"))
    signals = []
    for name in ("audio_a.wav", "audio_b.wav"):
        path = os.path.join(sample_dir, name)
        if not os.path.exists(path):
            raise SeldValidationError(f"缺少音频文件: {path}", field=name)
        rate, data = wavfile.read(path)
        if rate != labels["sample_rate"]:
            raise SeldValidationError(
                f"{path} 采样率{rate}与labels.json中的{labels['sample_rate']}不一致", field="sample_rate")
        if data.ndim != 2 or data.shape[1] != 4:
            raise SeldValidationError(f"{path} 必须是4通道，收到形状{data.shape}", field="channels")
        signals.append(data.astype(np.float64))
    mic_positions = tuple(tuple(p) for p in labels.get("mic_positions", DEFAULT_MIC_POSITIONS))
    return DualMicCapture(
        mic_a=signals[0],
        mic_b=signals[1],
        labels=[SourceEvent.from_dict(e) for e in labels["events"]],
        sample_rate=int(labels["sample_rate"]),
        mic_positions=mic_positions,
    )


def list_samples(data_dir: str) -> List[str]:
    root = os.path.join(data_dir, "samples")
    if not os.path.isdir(root):
        raise SeldValidationError(f"数据集目录不存在: {root}", field="data_dir")
    return sorted(name for name in os.listdir(root) if os.path.isdir(os.path.join(root, name)))


def load_dataset(data_dir: str) -> List[Tuple[str, DualMicCapture]]:
    """按样本ID排序读入整个数据集"""
    return [(sample_id, read_sample(os.path.join(data_dir, "samples", sample_id)))
            for sample_id in list_samples(data_dir)]
