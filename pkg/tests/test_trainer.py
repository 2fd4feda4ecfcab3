import os
from dataclasses import replace

import numpy as np
import pytest

from ambisonics import N_BINS, random_scene_spec, synthesize_scene
from seld_model import build, desk_config, forward
from trainer import (
    BCE_EPS, Adam, EpochRecord, SeldDataset, TrainConfig, checkpoint_roundtrip, clip_global_norm,
    evaluate_network, fit, load_checkpoint, prepare_dataset, read_history_csv, restore_optimizer,
    save_checkpoint, seld_loss, seld_loss_grad, split_dataset, write_history_csv,
)
from utils import NumericalFailure, RunLogger, SeldValidationError


class Pair:
    def __init__(self, sed, doa):
        self.sed = sed
        self.doa = doa


def quiet_desk_config(**overrides):
    values = dict(conv_dropout=0.0, spatial_dropout=0.0, head_dropout=0.0)
    values.update(overrides)
    return replace(desk_config("dualq"), **values)


def toy_dataset(n=4, frames=8, seed=0):
    rng = np.random.default_rng(seed)
    features = np.abs(rng.standard_normal((n, frames, N_BINS, 8))).astype(np.float32)
    sed = (rng.uniform(size=(n, frames, 42)) > 0.9).astype(np.float64)
    doa = np.repeat(sed, 3, axis=-1) * rng.uniform(-2.0, 2.0, size=(n, frames, 126))
    return SeldDataset(ids=[f"s{i}" for i in range(n)], features=features, sed=sed, doa=doa,
                       frame_times=(np.arange(frames) * 256 + 256) / 32000.0)


# =========================
# 损失
# =========================

def test_loss_of_perfect_prediction():
    rng = np.random.default_rng(0)
    sed = (rng.uniform(size=(5, 42)) > 0.7).astype(float)
    doa = rng.normal(size=(5, 126))
    total, bce, mse = seld_loss(Pair(sed, doa), Pair(sed, doa))
    assert mse == 0.0
    assert bce == pytest.approx(-np.log(1.0 - BCE_EPS), rel=1e-6)
    assert total == bce


def test_constant_doa_offset_costs_five():
    sed = np.zeros((3, 42))
    sed[:, 4] = 1.0
    doa = np.zeros((3, 126))
    total, bce, mse = seld_loss(Pair(sed, doa + 1.0), Pair(sed, doa))
    assert mse == pytest.approx(1.0)
    assert total - bce == pytest.approx(5.0)
    doubled, _, _ = seld_loss(Pair(sed, doa + 1.0), Pair(sed, doa), doa_loss_weight=10.0)
    assert doubled - bce == pytest.approx(2 * (total - bce))


def test_masked_mse_only_counts_active_slots():
    sed = np.zeros((2, 42))
    sed[0, 0] = 1.0
    pred_doa = np.zeros((2, 126))
    pred_doa[0, :3] = 2.0
    pred_doa[1, 50] = 100.0
    _, _, mse = seld_loss(Pair(sed, pred_doa), Pair(sed, np.zeros((2, 126))), masked=True)
    assert mse == pytest.approx(4.0)


def test_loss_shape_mismatch():
    with pytest.raises(SeldValidationError) as info:
        seld_loss(Pair(np.zeros((2, 42)), np.zeros((2, 126))), Pair(np.zeros((3, 42)), np.zeros((3, 126))))
    assert info.value.field == "shape"


@pytest.mark.parametrize("masked", [False, True])
def test_loss_gradient_matches_finite_differences(masked):
    rng = np.random.default_rng(1)
    sed_t = (rng.uniform(size=(2, 42)) > 0.6).astype(float)
    doa_t = rng.normal(size=(2, 126))
    sed_p = rng.uniform(0.05, 0.95, size=(2, 42))
    doa_p = rng.normal(size=(2, 126))
    d_sed, d_doa = seld_loss_grad(Pair(sed_p, doa_p), Pair(sed_t, doa_t), masked=masked)
    step = 1e-6
    for array, grad in ((sed_p, d_sed), (doa_p, d_doa)):
        for index in [(0, 0), (1, 17), (1, 41)]:
            original = array[index]
            array[index] = original + step
            plus = seld_loss(Pair(sed_p, doa_p), Pair(sed_t, doa_t), masked=masked)[0]
            array[index] = original - step
            minus = seld_loss(Pair(sed_p, doa_p), Pair(sed_t, doa_t), masked=masked)[0]
            array[index] = original
            assert grad[index] == pytest.approx((plus - minus) / (2 * step), rel=1e-5, abs=1e-9)


def test_loss_gradient_is_zero_where_probability_is_clipped():
    sed_t = np.zeros((1, 42))
    sed_t[0, 1] = 1.0
    sed_p = np.full((1, 42), 0.5)
    sed_p[0, 0] = 0.0          # 目标 0，截断到 BCE_EPS
    sed_p[0, 1] = 1.0          # 目标 1，截断到 1-BCE_EPS
    sed_p[0, 2] = 1.0          # 目标 0，截断后损失仍是常数
    sed_p[0, 3] = BCE_EPS      # 恰在边界上，仍有梯度
    d_sed, _ = seld_loss_grad(Pair(sed_p, np.zeros((1, 126))), Pair(sed_t, np.zeros((1, 126))))
    assert d_sed[0, 0] == 0.0 and d_sed[0, 1] == 0.0 and d_sed[0, 2] == 0.0
    assert d_sed[0, 3] > 0.0
    assert np.all(np.isfinite(d_sed))

    # 截断区内损失对 sed 不变，数值导数同样为0
    nudged = sed_p.copy()
    nudged[0, 2] = 1.0 - 1e-9
    before = seld_loss(Pair(sed_p, np.zeros((1, 126))), Pair(sed_t, np.zeros((1, 126))))[0]
    after = seld_loss(Pair(nudged, np.zeros((1, 126))), Pair(sed_t, np.zeros((1, 126))))[0]
    assert after == before


# =========================
# 优化器
# =========================

def test_adam_first_step_matches_closed_form():
    theta = np.array([1.0])
    grad = 2.0 * (theta - 3.0)
    optimizer = Adam(lr=0.01)
    optimizer.step({"theta": theta}, {"theta": grad})
    expected = 1.0 - 0.01 * grad[0] / (abs(grad[0]) + 1e-8)
    assert theta[0] == pytest.approx(expected, abs=1e-12)

    # 第二步：手算偏差校正后的矩估计
    g1, g2 = grad[0], 2.0 * (theta[0] - 3.0)
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2
    expected = theta[0] - 0.01 * (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    optimizer.step({"theta": theta}, {"theta": np.array([g2])})
    assert theta[0] == pytest.approx(expected, abs=1e-12)


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
    untouched, _ = clip_global_norm(grads, 0.0)
    assert untouched is grads


# =========================
# 数据准备
# =========================

def test_prepare_and_split_dataset():
    rng = np.random.default_rng(2)
    samples = [(f"sample_{i:04d}", synthesize_scene(random_scene_spec(rng, duration=0.25), rng_seed=i))
               for i in range(4)]
    dataset = prepare_dataset(samples, desk_config("dualq"))
    assert dataset.features.shape == (4, 30, N_BINS, 8)
    assert dataset.sed.shape == (4, 30, 42)
    assert dataset.doa.shape == (4, 30, 126)
    assert dataset.sed.any()

    train, val = split_dataset(dataset, 0.5, seed=0)
    assert len(train) == 2 and len(val) == 2
    assert sorted(train.ids + val.ids) == dataset.ids
    assert split_dataset(dataset, 0.0, seed=0)[1].ids == []

    normalized = prepare_dataset(samples, desk_config("dualq"), normalize_6dof=True)
    primal = normalized.features[..., :4].astype(np.float64)
    norms = np.sqrt(np.sum(primal ** 2, axis=-1))
    assert np.all(np.abs(norms[norms > 1e-3] - 1.0) < 1e-5)


def test_prepare_dataset_rejects_empty():
    with pytest.raises(SeldValidationError):
        prepare_dataset([], desk_config("dualq"))


def test_prepare_dataset_feature_options():
    rng = np.random.default_rng(4)
    samples = [("sample_0000", synthesize_scene(random_scene_spec(rng, duration=0.25), rng_seed=0))]
    config = desk_config("dualq", include_phase=True)
    plain = prepare_dataset(samples, config)
    shaped = prepare_dataset(samples, config, log_compress=True, phase_reference="omni")
    assert shaped.features.shape == (1, 30, N_BINS, 16)
    np.testing.assert_allclose(shaped.features[..., :8], np.log1p(plain.features[..., :8]), rtol=1e-6)
    np.testing.assert_array_equal(shaped.features[..., [8, 12]], plain.features[..., [8, 12]])
    np.testing.assert_array_equal(shaped.sed, plain.sed)


# =========================
# 训练
# =========================

def test_zero_learning_rate_keeps_parameters():
    net = build(desk_config("dualq"))
    before = {k: v.copy() for k, v in net.parameters().items()}
    fit(net, toy_dataset(), None, TrainConfig(lr=0.0, batch_size=2, max_epochs=3, min_epochs=0))
    after = net.parameters()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_desk_training_loss_decreases():
    net = build(quiet_desk_config())
    config = TrainConfig(lr=1e-4, batch_size=4, max_epochs=10, min_epochs=10, patience=10)
    result = fit(net, toy_dataset(), None, config)
    losses = [r.train_loss for r in result.history]
    assert len(losses) == 10
    for earlier, later in zip(losses, losses[1:]):
        assert later <= earlier + 1e-7
    assert losses[-1] < losses[0]


def test_training_is_deterministic_for_a_seed():
    config = TrainConfig(lr=1e-3, batch_size=2, max_epochs=3, min_epochs=0, seed=5)
    first = fit(build(desk_config("dualq")), toy_dataset(), None, config)
    second = fit(build(desk_config("dualq")), toy_dataset(), None, config)
    assert [r.to_dict() for r in first.history] == [r.to_dict() for r in second.history]


@pytest.mark.parametrize("mode, min_epochs, stop_epoch", [
    ("floor", 0, 3),
    ("floor", 4, 4),
    ("after_min", 4, 6),
])
def test_early_stopping_modes(mode, min_epochs, stop_epoch):
    # 容差大到不可能再改进，等待计数只取决于计数方式
    config = TrainConfig(lr=0.0, batch_size=4, max_epochs=20, min_epochs=min_epochs, patience=2,
                         patience_mode=mode, improvement_tol=10.0)
    result = fit(build(desk_config("dualq")), toy_dataset(), None, config)
    assert result.stopped_early
    assert len(result.history) == stop_epoch
    assert result.best_epoch == 1


def test_fit_restores_best_state_and_checkpoints(tmp_path):
    data = toy_dataset(n=6)
    train, val = data.subset([0, 1, 2, 3]), data.subset([4, 5])
    net = build(desk_config("dualq"))
    path = str(tmp_path / "best.ckpt")
    run_logger = RunLogger(str(tmp_path / "logs"), "train")
    config = TrainConfig(lr=1e-3, batch_size=2, max_epochs=4, min_epochs=0, patience=4)
    result = fit(net, train, val, config, checkpoint_path=path, run_logger=run_logger,
                 checkpoint_extra={"note": "unit"})
    run_logger.close()

    assert result.best_score == result.history[result.best_epoch - 1].val_GSELD
    assert all(r.val_GSELD > result.best_score - config.improvement_tol for r in result.history)
    assert evaluate_network(net, val, batch_size=2).gseld == result.best_score

    loaded, info = load_checkpoint(path, expected_config=net.config)
    assert info.epoch == result.best_epoch
    assert info.best_score == result.best_score
    assert info.extra == {"note": "unit"}
    x = val.features[:1]
    np.testing.assert_array_equal(forward(loaded, x).sed, forward(net, x).sed)
    assert os.listdir(tmp_path / "logs")


def test_select_on_train_loss_restores_lowest_loss_epoch(tmp_path):
    data = toy_dataset(n=6)
    train, val = data.subset([0, 1, 2, 3]), data.subset([4, 5])
    net = build(desk_config("dualq"))
    config = TrainConfig(lr=1e-3, batch_size=2, max_epochs=4, min_epochs=0, patience=4, select_on="train_loss")
    path = str(tmp_path / "best.ckpt")
    result = fit(net, train, val, config, checkpoint_path=path)

    losses = [r.train_loss for r in result.history]
    assert result.best_score == result.history[result.best_epoch - 1].train_loss
    assert all(loss > result.best_score - config.improvement_tol for loss in losses)
    assert load_checkpoint(path)[1].epoch == result.best_epoch


def test_non_finite_loss_aborts_with_diagnostic():
    data = toy_dataset()
    data.features[2, 0, 0, 0] = np.nan
    config = TrainConfig(batch_size=4, max_epochs=2, min_epochs=0)
    with pytest.raises(NumericalFailure) as info:
        fit(build(desk_config("dualq")), data, None, config)
    assert (info.value.epoch, info.value.batch, info.value.term) == (1, 0, "sed_loss")
    assert info.value.exit_code == 2


def test_fit_rejects_channel_mismatch():
    net = build(desk_config("dualq", include_phase=True))
    with pytest.raises(SeldValidationError) as info:
        fit(net, toy_dataset(), None, TrainConfig(max_epochs=1, min_epochs=0))
    assert info.value.field == "channels"


def test_train_config_validation():
    with pytest.raises(SeldValidationError) as info:
        TrainConfig(patience_mode="sometimes").validate()
    assert info.value.field == "train.patience_mode"
    with pytest.raises(SeldValidationError) as info:
        TrainConfig.from_flat({"train.lr": 1e-3, "train.warmup": 10})
    assert info.value.field == "train.warmup"
    assert TrainConfig.from_flat({"train.lr": 1e-3}).lr == 1e-3
    with pytest.raises(SeldValidationError) as info:
        TrainConfig(select_on="val_loss").validate()
    assert info.value.field == "train.select_on"


# =========================
# 历史与检查点
# =========================

def test_history_csv_roundtrip(tmp_path):
    history = [EpochRecord(1, 1.5, 0.7, 0.16, 0.9, 0.8, 0.85), EpochRecord(2, 1.25, 0.6, 0.13, 0.7, 0.6, 0.65)]
    path = str(tmp_path / "history.csv")
    write_history_csv(path, history)
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == "epoch,train_loss,sed_loss,doa_loss,val_LSD,val_CSL,val_GSELD"
    assert read_history_csv(path) == history


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    net = build(desk_config("dualq"))
    fit(net, toy_dataset(), None, TrainConfig(lr=1e-3, batch_size=4, max_epochs=1, min_epochs=0))
    loaded = checkpoint_roundtrip(net, str(tmp_path / "net.ckpt"))
    assert loaded.param_count() == net.param_count()
    x = toy_dataset(n=1, seed=9).features
    a, b = forward(net, x), forward(loaded, x)
    np.testing.assert_array_equal(a.sed, b.sed)
    np.testing.assert_array_equal(a.doa, b.doa)


def test_checkpoint_keeps_optimizer_state(tmp_path):
    net = build(desk_config("dualq"))
    optimizer = Adam(lr=1e-3)
    grads = {k: np.ones_like(v) for k, v in net.parameters().items()}
    optimizer.step(net.parameters(), grads)
    path = str(tmp_path / "opt.ckpt")
    save_checkpoint(path, net, optimizer, epoch=7, best_score=0.5)
    _, info = load_checkpoint(path)
    restored = restore_optimizer(info)
    assert restored.t == 1 and restored.lr == 1e-3
    assert set(restored.m) == set(optimizer.m)
    name = next(iter(optimizer.m))
    np.testing.assert_array_equal(restored.v[name], optimizer.v[name])


def test_checkpoint_config_mismatch_names_the_key(tmp_path):
    net = build(desk_config("dualq"))
    path = str(tmp_path / "net.ckpt")
    save_checkpoint(path, net)
    with pytest.raises(SeldValidationError) as info:
        load_checkpoint(path, expected_config=replace(net.config, head_width=96))
    assert info.value.field == "model.head_width"


def test_corrupt_checkpoints(tmp_path):
    net = build(desk_config("dualq"))
    path = tmp_path / "net.ckpt"
    save_checkpoint(str(path), net)
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(SeldValidationError) as info:
        load_checkpoint(str(bad_magic))
    assert info.value.field == "magic"

    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(raw[:-16])
    with pytest.raises(SeldValidationError) as info:
        load_checkpoint(str(truncated))
    assert info.value.field in {**net.parameters(), **net.buffers()}

    with pytest.raises(SeldValidationError) as info:
        load_checkpoint(str(tmp_path / "missing.ckpt"))
    assert info.value.field == "path"
