# -*- coding: utf-8 -*-
"""
DualQSELD-TCN 命令行入口

脚本目标:
    - 串起整条流程：合成数据集 (synth)、训练 (train)、评估 (eval)、结构报告 (params)、梯度自检 (gradcheck)、
      多种子模型对比 (compare)。

上下文:
    - 配置是扁平点号键的 JSON（"model.kind"、"train.lr"、"data.val_fraction"...），
      优先级：内置默认 < --config 文件 < 具名参数（--kind / --epochs / --seed）< --set key=value。
    - 不读取任何环境变量；每个产出物都嵌入解析后的完整配置。

输入:
    - 命令行参数

执行步骤:
    1. 解析参数并合并配置
    2. 调用对应子命令
    3. SeldError 按其退出码返回（1 校验错误，2 数值失败）

输出:
    - 数据集目录、检查点 + 历史CSV、评估报告JSON、结构报告JSON、梯度校验报告
"""

import argparse
import os
import sys
import time
import traceback
from typing import Any, Dict, List, Optional

import numpy as np

from ambisonics import (load_dataset, make_targets, pool_frame_times, random_scene_spec, stft_features,
                        synthesize_scene, write_sample)
from nn_layers import run_gradcheck_suite
from seld_metrics import (REFERENCE_RESULTS, MetricAccumulator, decode_predictions, target_to_frame_events)
from seld_model import ModelConfig, build, describe, reference_config
from trainer import (TrainConfig, evaluate_network, fit, load_checkpoint, prepare_dataset, save_checkpoint,
                     split_dataset, write_history_csv)
from utils import (NumericalFailure, RunLogger, SeldError, SeldValidationError, format_duration,
                   load_flat_config, merge_config, parse_override, save_json, section)

DATA_DEFAULTS = {
    "data.val_fraction": 0.2,
    "data.normalize_6dof": False,
    "data.normalize_blocks": "magnitude",
    "data.log_compress": False,
    "data.phase_reference": "absolute",
}

REFERENCE_PARAM_TARGETS = {
    "real": 1.6e6,
    "quaternion_parallel": 0.8e6,
    "dualq": 1.8e6,
    "dualq_parallel": 3.6e6,
}


def default_config() -> Dict[str, Any]:
    config: Dict[str, Any] = {}
    config.update(ModelConfig().to_flat())
    config.update(TrainConfig().to_flat())
    config.update(DATA_DEFAULTS)
    return config


def resolve_config(config_file: Optional[str] = None, named: Optional[Dict[str, Any]] = None,
                   overrides: Optional[List[str]] = None) -> Dict[str, Any]:
    """默认 < 文件 < 具名参数 < --set"""
    file_values = load_flat_config(config_file)
    set_values = dict(parse_override(item) for item in (overrides or []))
    return merge_config(default_config(), file_values, named or {}, set_values)


# =========================
# synth
# =========================

def cmd_synth(out_dir: str, n_samples: int = 4, duration: float = 2.0, seed: int = 0, n_class: int = 14,
              max_overlap: int = 3, max_events: int = 4, noise_floor: float = -60.0) -> Dict[str, Any]:
    """合成数据集：out_dir/samples/sample_XXXX/{audio_a.wav, audio_b.wav, labels.json} + dataset.json"""
    if n_samples < 1:
        raise SeldValidationError(f"n_samples 必须 ≥ 1: {n_samples}", field="n_samples")
    if duration <= 0:
        raise SeldValidationError(f"duration 必须为正: {duration}", field="duration")
    if n_class < 1 or max_overlap < 1:
        raise SeldValidationError("n_class 与 max_overlap 必须 ≥ 1", field="n_class")
    try:
        os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    except OSError as e:
        raise SeldValidationError(f"无法创建输出目录 {out_dir}: {e}", field="out_dir") from e

    settings = {
        "command": "synth",
        "n_samples": n_samples,
        "duration": duration,
        "seed": seed,
        "n_class": n_class,
        "max_overlap": max_overlap,
        "max_events": max_events,
        "noise_floor": noise_floor,
    }
    sample_ids = []
    for index in range(n_samples):
        rng = np.random.default_rng([seed, index])
        spec = random_scene_spec(rng, duration, n_class=n_class, max_overlap=max_overlap,
                                 max_events=max_events, noise_floor=noise_floor)
        capture = synthesize_scene(spec, rng_seed=seed * 100003 + index)
        sample_id = f"sample_{index:04d}"
        write_sample(os.path.join(out_dir, "samples", sample_id), capture,
                     extra={"synth": {**settings, "index": index}, "duration": duration})
        sample_ids.append(sample_id)
        print(f"✅ {sample_id}: {len(spec.events)} 个事件")

    manifest = {**settings, "samples": sample_ids}
    save_json(os.path.join(out_dir, "dataset.json"), manifest)
    print(f"📁 数据集已保存到: {out_dir}")
    return manifest


# =========================
# train
# =========================

def _prepare(samples, model_config: ModelConfig, data: Dict[str, Any]):
    data = {**section(DATA_DEFAULTS, "data"), **data}
    return prepare_dataset(samples, model_config, bool(data["normalize_6dof"]), data["normalize_blocks"],
                           log_compress=bool(data["log_compress"]), phase_reference=data["phase_reference"])


def _history_path(ckpt_path: str) -> str:
    stem, _ = os.path.splitext(ckpt_path)
    return stem + "_history.csv"


def cmd_train(data_dir: str, config_file: Optional[str], out_ckpt: str, named: Optional[Dict[str, Any]] = None,
              overrides: Optional[List[str]] = None, log_dir: str = "./logs", progress: bool = True) -> Dict[str, Any]:
    """训练并写出最优检查点与历史CSV（与检查点同目录）"""
    resolved = resolve_config(config_file, named, overrides)
    model_config = ModelConfig.from_flat(resolved)
    train_config = TrainConfig.from_flat(resolved)
    data = section(resolved, "data")

    run_logger = RunLogger(log_dir, "train")
    try:
        run_logger.log_event("config", resolved)
        samples = load_dataset(data_dir)
        dataset = _prepare(samples, model_config, data)
        train_set, val_set = split_dataset(dataset, float(data["val_fraction"]), train_config.seed)
        print(f"📊 训练样本 {len(train_set)} 个，验证样本 {len(val_set)} 个，特征 {dataset.features.shape[1:]}")

        net = build(model_config)
        print(f"🚀 开始训练 {model_config.kind}（{net.param_count()} 个参数）")
        extra = {"resolved_config": resolved, "data_dir": os.path.abspath(data_dir)}
        result = fit(net, train_set, val_set, train_config, checkpoint_path=out_ckpt, run_logger=run_logger,
                     checkpoint_extra=extra, progress=progress)
        save_checkpoint(out_ckpt, net, epoch=result.best_epoch, best_score=result.best_score, extra=extra)
        history_path = _history_path(out_ckpt)
        write_history_csv(history_path, result.history)
        run_logger.log_event("finished", {"best_epoch": result.best_epoch, "best_score": result.best_score,
                                          "epochs": len(result.history), "stopped_early": result.stopped_early})
    finally:
        run_logger.close()

    print(f"✅ 训练完成，最优 epoch {result.best_epoch}，{train_config.select_on}={result.best_score:.4f}，"
          f"耗时 {format_duration(result.duration)}")
    print(f"💾 检查点: {out_ckpt}")
    print(f"📄 历史: {history_path}")
    return {"checkpoint": out_ckpt, "history": history_path, "result": result.to_dict()}


# =========================
# compare
# =========================

def cmd_compare(data_dir: str, config_file: Optional[str], out_dir: str, kinds: Optional[List[str]] = None,
                seeds: Optional[List[int]] = None, overrides: Optional[List[str]] = None,
                margin: float = 0.02, log_dir: str = "./logs") -> Dict[str, Any]:
    """
    同一数据集上按多个种子训练多种模型，比较最优参数下的验证 CSL 均值。

    dualq 的均值 CSL 不高于 real 均值 + margin 记为通过；不通过只在报告中标出，不作为错误。
    """
    kinds = list(kinds or ["dualq", "real"])
    seeds = [int(s) for s in (seeds if seeds is not None else [0, 1, 2])]
    if not kinds or not seeds:
        raise SeldValidationError("kinds 与 seeds 都不能为空", field="seeds")

    runs = []
    for kind in kinds:
        for seed in seeds:
            ckpt = os.path.join(out_dir, f"{kind}_seed{seed}.ckpt")
            named = {"model.kind": kind, "train.seed": seed, "model.seed": seed}
            summary = cmd_train(data_dir, config_file, ckpt, named, overrides, log_dir, progress=False)
            result = summary["result"]
            best = result["history"][result["best_epoch"] - 1]
            runs.append({"kind": kind, "seed": seed, "best_epoch": result["best_epoch"],
                         "val_CSL": best["val_CSL"], "val_GSELD": best["val_GSELD"], "checkpoint": ckpt})

    mean_csl = {kind: float(np.mean([r["val_CSL"] for r in runs if r["kind"] == kind])) for kind in kinds}
    report: Dict[str, Any] = {"kinds": kinds, "seeds": seeds, "margin": margin, "runs": runs,
                              "mean_val_CSL": mean_csl}
    if "dualq" in mean_csl and "real" in mean_csl:
        report["dualq_within_margin"] = bool(mean_csl["dualq"] <= mean_csl["real"] + margin)
        if not report["dualq_within_margin"]:
            print(f"⚠️ dualq 平均验证 CSL {mean_csl['dualq']:.4f} 高于 real {mean_csl['real']:.4f} + {margin}")
    save_json(os.path.join(out_dir, "compare.json"), report)
    for kind in kinds:
        print(f"📊 {kind}: 平均验证 CSL={mean_csl[kind]:.4f}（{len(seeds)} 个种子）")
    return report


# =========================
# eval
# =========================

def _oracle_scores(samples, model_config: ModelConfig, sed_threshold: float, dist_threshold: float,
                   matching: str):
    accumulator = MetricAccumulator(dist_threshold=dist_threshold, matching=matching)
    for _, capture in samples:
        feats = stft_features(capture, include_phase=False)
        times = pool_frame_times(feats.frame_times, model_config.time_pooling)
        target = make_targets(capture, len(times), frame_times=times,
                              n_class=model_config.n_class, n_overlap=model_config.n_overlap)
        reference = target_to_frame_events(target)
        prediction = decode_predictions(target.sed, target.doa, sed_threshold, times,
                                        model_config.n_class, model_config.n_overlap)
        accumulator.update(prediction, reference)
    return accumulator.result()


def cmd_eval(data_dir: str, ckpt: Optional[str], sed_threshold: float = 0.5, dist_threshold: float = 2.0,
             matching: str = "greedy", oracle: bool = False, out: Optional[str] = None) -> Dict[str, Any]:
    """评估检查点（或 --oracle 用真值自评），输出七个指标和所用阈值"""
    samples = load_dataset(data_dir)
    if not samples:
        raise SeldValidationError(f"数据集为空: {data_dir}", field="data_dir")
    if oracle:
        model_config = ModelConfig()
        if ckpt:
            _, info = load_checkpoint(ckpt)
            model_config = ModelConfig.from_flat(info.config)
        scores = _oracle_scores(samples, model_config, sed_threshold, dist_threshold, matching)
        config_echo: Dict[str, Any] = model_config.to_flat()
    else:
        if not ckpt:
            raise SeldValidationError("评估需要 --ckpt（或使用 --oracle）", field="ckpt")
        net, info = load_checkpoint(ckpt)
        resolved = info.extra.get("resolved_config", {})
        dataset = _prepare(samples, net.config, section(resolved, "data"))
        scores = evaluate_network(net, dataset, sed_threshold, dist_threshold, matching)
        config_echo = resolved or info.config

    report = scores.to_dict()
    report.update({
        "sed_threshold": sed_threshold,
        "dist_threshold": dist_threshold,
        "matching": matching,
        "oracle": oracle,
        "checkpoint": ckpt,
        "n_samples": len(samples),
        "config": config_echo,
    })
    if out:
        save_json(out, report)
        print(f"💾 评估报告: {out}")
    print(f"📈 LSD={scores.lsd:.4f} CSL={scores.csl:.4f} G-SELD={scores.gseld:.4f}")
    return report


# =========================
# params
# =========================

def cmd_params(config_file: Optional[str] = None, named: Optional[Dict[str, Any]] = None,
               overrides: Optional[List[str]] = None, preset: Optional[str] = None,
               out: Optional[str] = None) -> Dict[str, Any]:
    """结构报告：逐层与总参数量、空洞率、感受野；preset=reference 时使用参考宽度"""
    named = dict(named or {})
    if preset == "reference":
        resolved_kind = named.get("model.kind") or ModelConfig().kind
        base = reference_config(resolved_kind, include_phase=bool(named.get("model.include_phase", False)),
                            width_scale=float(named.pop("model.width_scale", 1.0) or 1.0))
        named = {**base.to_flat(), **{k: v for k, v in named.items() if v is not None}}
    elif preset is not None:
        raise SeldValidationError(f"未知的预设: {preset}", field="preset")
    resolved = resolve_config(config_file, named, overrides)
    config = ModelConfig.from_flat(resolved)
    report = describe(build(config))
    target = REFERENCE_PARAM_TARGETS.get(config.kind)
    if config.kind == "quaternion_parallel" and config.width_scale > 1.0:
        target = 1.6e6
    if target is not None:
        report["reference_params"] = target
        report["relative_to_reference"] = report["total_params"] / target
    report["reference_results"] = [row for row in REFERENCE_RESULTS if row["kind"] == config.kind]
    if out:
        save_json(out, report)
        print(f"💾 结构报告: {out}")
    print(f"📊 {config.kind}: {report['total_params']} 个参数，感受野 {report['receptive_field']}，"
          f"空洞率 {report['dilations']}")
    return report


# =========================
# gradcheck
# =========================

def cmd_gradcheck(seed: int = 0, tol: float = 1e-4, out: Optional[str] = None, cases=None) -> Dict[str, Any]:
    """f64 有限差分自检，任何层失败都以数值失败（退出码2）结束"""
    results = run_gradcheck_suite(seed=seed, tol=tol, cases=cases)
    report = {"seed": seed, "tol": tol, "results": [r.to_dict() for r in results],
              "passed": all(r.passed for r in results)}
    for r in results:
        mark = "✅" if r.passed else "❌"
        print(f"{mark} {r.layer}: max relative error {r.max_rel_error:.3e}")
    if out:
        save_json(out, report)
    failed = [r.layer for r in results if not r.passed]
    if failed:
        raise NumericalFailure(f"梯度校验失败的层: {', '.join(failed)}", term=failed[0])
    return report


# =========================
# 命令行接口
# =========================

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", type=str, default=None, help="扁平点号键的JSON配置文件")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="覆盖单个配置项（可重复）")
    parser.add_argument("--kind", type=str, default=None,
                        choices=["real", "quaternion", "quaternion_parallel", "dualq", "dualq_parallel"],
                        help="模型类型")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="DualQSELD-TCN：双 Ambisonics 麦克风的对偶四元数 SELD")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="合成双麦克风 B-format 数据集")
    p.add_argument("--out", "-o", type=str, required=True, help="输出目录")
    p.add_argument("--n-samples", type=int, default=4, help="样本数")
    p.add_argument("--duration", type=float, default=2.0, help="每个样本时长（秒）")
    p.add_argument("--seed", type=int, default=0, help="随机种子")
    p.add_argument("--n-class", type=int, default=14, help="类别数")
    p.add_argument("--max-overlap", type=int, default=3, help="同时活跃事件上限")
    p.add_argument("--max-events", type=int, default=4, help="每个样本最多事件数")
    p.add_argument("--noise-floor", type=float, default=-60.0, help="底噪 dBFS")

    p = sub.add_parser("train", help="训练模型")
    p.add_argument("--data", "-d", type=str, required=True, help="数据集目录")
    p.add_argument("--out", "-o", type=str, required=True, help="检查点输出路径")
    p.add_argument("--epochs", type=int, default=None, help="最大epoch数（覆盖 train.max_epochs）")
    p.add_argument("--seed", type=int, default=None, help="随机种子（覆盖 train.seed 与 model.seed）")
    p.add_argument("--log-dir", type=str, default="./logs", help="日志目录路径")
    p.add_argument("--no-progress", action="store_true", help="不显示批次进度条")
    _add_config_flags(p)

    p = sub.add_parser("compare", help="多种子训练并比较各模型的验证 CSL")
    p.add_argument("--data", "-d", type=str, required=True, help="数据集目录")
    p.add_argument("--out", "-o", type=str, required=True, help="检查点与对比报告的输出目录")
    p.add_argument("--kinds", type=str, nargs="+", default=["dualq", "real"], help="参与对比的模型类型")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="随机种子列表")
    p.add_argument("--margin", type=float, default=0.02, help="dualq 相对 real 允许的 CSL 差距")
    p.add_argument("--log-dir", type=str, default="./logs", help="日志目录路径")
    p.add_argument("--config", "-c", type=str, default=None, help="扁平点号键的JSON配置文件")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="覆盖单个配置项（可重复）")

    p = sub.add_parser("eval", help="评估检查点")
    p.add_argument("--data", "-d", type=str, required=True, help="数据集目录")
    p.add_argument("--ckpt", type=str, default=None, help="检查点路径")
    p.add_argument("--sed-threshold", type=float, default=0.5, help="SED 判决阈值")
    p.add_argument("--dist-threshold", type=float, default=2.0, help="位置敏感检测距离阈值（米）")
    p.add_argument("--matching", type=str, default="greedy", choices=["greedy", "hungarian"], help="配对方式")
    p.add_argument("--oracle", action="store_true", help="用真值作为预测（自检）")
    p.add_argument("--out", "-o", type=str, default=None, help="报告JSON路径")

    p = sub.add_parser("params", help="网络结构与参数量报告")
    p.add_argument("--preset", type=str, default=None, choices=["reference"], help="使用参考宽度预设")
    p.add_argument("--include-phase", action="store_true", help="输入包含相位（16通道）")
    p.add_argument("--width-scale", type=float, default=None, help="宽度缩放系数（与 --preset reference 一起使用）")
    p.add_argument("--out", "-o", type=str, default=None, help="报告JSON路径")
    _add_config_flags(p)

    p = sub.add_parser("gradcheck", help="有限差分梯度自检")
    p.add_argument("--seed", type=int, default=0, help="随机种子")
    p.add_argument("--tol", type=float, default=1e-4, help="相对误差容限")
    p.add_argument("--out", "-o", type=str, default=None, help="报告JSON路径")
    return parser


def run(args: argparse.Namespace) -> Any:
    if args.command == "synth":
        return cmd_synth(args.out, args.n_samples, args.duration, args.seed, args.n_class,
                         args.max_overlap, args.max_events, args.noise_floor)
    if args.command == "train":
        named = {"model.kind": args.kind, "train.max_epochs": args.epochs,
                 "train.seed": args.seed, "model.seed": args.seed}
        return cmd_train(args.data, args.config, args.out, named, args.overrides, args.log_dir,
                         progress=not args.no_progress)
    if args.command == "compare":
        return cmd_compare(args.data, args.config, args.out, args.kinds, args.seeds, args.overrides,
                           args.margin, args.log_dir)
    if args.command == "eval":
        return cmd_eval(args.data, args.ckpt, args.sed_threshold, args.dist_threshold, args.matching,
                        args.oracle, args.out)
    if args.command == "params":
        named = {"model.kind": args.kind, "model.width_scale": args.width_scale,
                 "model.include_phase": True if args.include_phase else None}
        return cmd_params(args.config, named, args.overrides, args.preset, args.out)
    if args.command == "gradcheck":
        return cmd_gradcheck(args.seed, args.tol, args.out)
    raise SeldValidationError(f"未知命令: {args.command}", field="command")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.time()
    try:
        run(args)
    except SeldError as e:
        print(f"❌ {e}")
        return e.exit_code
    except Exception as e:
        traceback.print_exc()
        print(f"❌ 未预期的错误: {e}")
        return 1
    print(f"⏱️ 总耗时: {format_duration(time.time() - start)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
