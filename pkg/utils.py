# -*- coding: utf-8 -*-
"""
DualQSELD-TCN 工具函数库

脚本目标: 提供各模块共用的基础设施（异常体系、运行日志、配置合并、JSON序列化、计时格式化）
上下文: 被 hypercomplex / ambisonics / nn_layers / seld_model / trainer / seld_metrics / dualq_seld 共同引用
输入: 各种数据结构、配置文件路径和命令行覆盖项
执行步骤: 按需调用不同的工具函数
输出: 处理后的数据结果、日志文件和JSON报告
"""

import enum
import json
import logging
import os
from dataclasses import asdict, is_dataclass
from datetime import datetime
from typing import Any, Dict, Iterable, List, Mapping, Optional

import numpy as np


# =========================
# 异常体系
# =========================

class SeldError(Exception):
    """所有可预期错误的基类，exit_code 决定命令行退出码"""

    exit_code = 1


class SeldValidationError(SeldError):
    """形状/配置/数据集/场景描述等校验失败（退出码1）

    field: 第一个不匹配的字段名（若可确定）
    """

    exit_code = 1

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class NumericalFailure(SeldError):
    """数值失败：损失出现NaN/Inf、梯度校验不通过（退出码2）"""

    exit_code = 2

    def __init__(self, message: str, epoch: Optional[int] = None,
                 batch: Optional[int] = None, term: Optional[str] = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.term = term


# =========================
# 运行日志
# =========================

class RunLogger:
    """运行日志记录器，同时写文本日志、控制台和结构化JSON事件日志"""

    def __init__(self, log_dir: str = "./logs", name: str = "run"):
        """初始化日志记录器

        Args:
            log_dir: 日志目录
            name: 日志文件名前缀（如 train / eval）
        """
        self.log_dir = log_dir
        os.makedirs(log_dir, exist_ok=True)

        # 创建带时间戳的日志文件名
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.log_file = os.path.join(log_dir, f"{name}_{timestamp}.log")
        self.json_log_file = os.path.join(log_dir, f"{name}_{timestamp}.json")
        self.json_logs: List[Dict[str, Any]] = []

        self.logger = logging.getLogger(f"dualq_seld.{name}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        formatter = logging.Formatter('%(asctime)s [%(levelname)s] %(message)s',
                                      datefmt='%Y-%m-%d %H:%M:%S')
        # 同名logger可能被重复创建（测试中常见），先清掉旧handler
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()

        file_handler = logging.FileHandler(self.log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        self.logger.addHandler(file_handler)

        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(formatter)
        self.logger.addHandler(console_handler)

    def info(self, message: str) -> None:
        self.logger.info(message)

    def warning(self, message: str) -> None:
        self.logger.warning(message)

    def log_event(self, kind: str, payload: Mapping[str, Any]) -> None:
        """记录一条结构化事件（同时追加到JSON日志和文本日志）"""
        entry = {
            "timestamp": datetime.now().isoformat(),
            "kind": kind,
            "payload": convert_to_serializable(dict(payload)),
        }
        self.json_logs.append(entry)
        self.save_json_logs()

        summary = ", ".join(f"{k}={_short(v)}" for k, v in entry["payload"].items())
        self.logger.info(f"[{kind}] {summary}")

    def save_json_logs(self) -> None:
        """保存JSON日志到文件"""
        try:
            with open(self.json_log_file, 'w', encoding='utf-8') as f:
                json.dump(self.json_logs, f, ensure_ascii=False, indent=2)
        except OSError as e:
            self.logger.warning(f"保存JSON日志失败: {e}")

    def close(self) -> None:
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    text = str(value)
    return text if len(text) <= 80 else text[:77] + "..."


# =========================
# 序列化工具函数
# =========================

def convert_to_serializable(obj: Any) -> Any:
    """递归转换对象为可JSON序列化的格式。"""
    if hasattr(obj, 'to_dict'):
        return convert_to_serializable(obj.to_dict())
    elif is_dataclass(obj) and not isinstance(obj, type):
        return convert_to_serializable(asdict(obj))
    elif isinstance(obj, enum.Enum):
        return obj.value
    elif isinstance(obj, dict):
        return {str(key): convert_to_serializable(value) for key, value in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [convert_to_serializable(item) for item in obj]
    elif isinstance(obj, np.ndarray):
        return convert_to_serializable(obj.tolist())
    elif isinstance(obj, np.generic):
        return obj.item()
    elif isinstance(obj, float):
        # JSON 不支持 inf/nan，统一写成字符串
        if np.isfinite(obj):
            return obj
        return str(obj)
    elif isinstance(obj, (str, int, bool, type(None))):
        return obj
    else:
        # 对于其他类型，尝试转换为字符串
        return str(obj)


def save_json(path: str, obj: Any) -> None:
    """确定性地写JSON（键排序、缩进），便于diff"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(convert_to_serializable(obj), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path: str) -> Any:
    if not os.path.exists(path):
        raise SeldValidationError(f"文件不存在: {path}", field=path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SeldValidationError(f"JSON解析失败: {path}: {e}", field=path) from e


# =========================
# 配置工具函数
# =========================

def load_flat_config(path: Optional[str]) -> Dict[str, Any]:
    """读取扁平点号键的JSON配置文件（如 {"model.kind": "dualq"}）"""
    if not path:
        return {}
    data = load_json(path)
    if not isinstance(data, dict):
        raise SeldValidationError(f"配置文件顶层必须是对象: {path}")
    for key, value in data.items():
        if isinstance(value, dict):
            raise SeldValidationError(f"配置键必须是扁平点号格式，不支持嵌套: {key}", field=key)
    return dict(data)


def parse_override(item: str) -> tuple:
    """解析 --set key=value，value 优先按JSON解析，失败时当作字符串"""
    if "=" not in item:
        raise SeldValidationError(f"覆盖项格式应为 key=value: {item}", field=item)
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def merge_config(defaults: Mapping[str, Any], *layers: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    """按 defaults < 文件 < 命令行 的顺序合并配置，未知键报错"""
    resolved = dict(defaults)
    for layer in layers:
        if not layer:
            continue
        for key, value in layer.items():
            if key not in resolved:
                raise SeldValidationError(f"未知配置键: {key}", field=key)
            if value is None:
                continue
            resolved[key] = value
    return resolved


def section(flat: Mapping[str, Any], prefix: str) -> Dict[str, Any]:
    """取出某一段配置，去掉前缀（如 section(cfg, "train") -> {"lr": ...}）"""
    head = prefix + "."
    return {key[len(head):]: value for key, value in flat.items() if key.startswith(head)}


def prefixed(values: Mapping[str, Any], prefix: str) -> Dict[str, Any]:
    return {f"{prefix}.{key}": value for key, value in values.items()}


# =========================
# 其它
# =========================

def format_duration(total_time: float) -> str:
    """格式化时间显示（时分秒）"""
    hours = int(total_time // 3600)
    minutes = int((total_time % 3600) // 60)
    seconds = total_time % 60
    if hours > 0:
        return f"{hours}小时{minutes}分钟{seconds:.2f}秒"
    elif minutes > 0:
        return f"{minutes}分钟{seconds:.2f}秒"
    return f"{seconds:.2f}秒"


def chunked(items: List[Any], size: int) -> Iterable[List[Any]]:
    for start in range(0, len(items), size):
        yield items[start:start + size]
