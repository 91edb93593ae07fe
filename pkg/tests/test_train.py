import math

import numpy as np
import pytest
import torch

from viseme_decode.dataset import TrialSet
from viseme_decode.decoder import (TrainConfig, TrainingDiverged, build_model, load_checkpoint, loss, predict,
                                   save_checkpoint, top_k, train, train_arrays)
from viseme_decode.errors import ConfigError, IntegrityError, ValidationError

TINY = dict(widths=(4, 8, 8), enc_widths=(4, 8, 8), kernel=3, groups=2, temb_dim=8, attn_reduction=2)


def toy_batch(n=4, c=2, L=64, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, c, L)).astype(np.float32), rng.integers(0, 15, n)


def test_loss_is_weighted_sum():
    cfg = TrainConfig(w_ddpm=0.3, w_ae=1.7, w_cls=0.5, precision="float64")
    model = build_model(cfg, 2, 64)
    x, y = toy_batch()
    total, parts = loss(model, (torch.tensor(x, dtype=torch.float64), y), cfg.schedule(), cfg)
    expected = 0.3 * parts["ddpm"].item() + 1.7 * parts["ae"].item() + 0.5 * parts["cls"].item()
    assert abs(total.item() - expected) < 1e-12
    assert all(v.item() >= 0 for v in parts.values())


def test_zero_parameters_on_zero_signal():
    cfg = TrainConfig(precision="float64")
    model = build_model(cfg, 2, 64)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    x = np.zeros((3, 2, 64))
    total, parts = loss(model, (x, np.array([0, 7, 14])), cfg.schedule(), cfg)
    assert parts["ddpm"].item() == 0 and parts["ae"].item() == 0
    assert abs(parts["cls"].item() - math.log(15)) < 1e-12
    assert abs(total.item() - math.log(15)) < 1e-12


def test_training_smoke_halves_loss():
    x, y = toy_batch()
    cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=200)
    _, hist = train_arrays(x, y, cfg)
    steps = hist["step_total"]
    assert len(steps) == 200
    assert steps[-1] <= 0.5 * steps[0]


def test_training_is_deterministic():
    x, y = toy_batch(n=6, L=16)
    cfg = TrainConfig(lr=1e-2, batch_size=4, epochs=3, arch=TINY)
    m1, h1 = train_arrays(x, y, cfg)
    m2, h2 = train_arrays(x, y, cfg)
    assert h1["step_total"] == h2["step_total"]
    for a, b in zip(m1.state_dict().values(), m2.state_dict().values()):
        assert torch.equal(a, b)
    _, h3 = train_arrays(x, y, TrainConfig(lr=1e-2, batch_size=4, epochs=3, arch=TINY, seed=1))
    assert h3["step_total"] != h1["step_total"]


def test_progress_callback_and_epoch_stats():
    x, y = toy_batch(n=5, L=16)
    seen = []
    _, hist = train_arrays(x, y, TrainConfig(batch_size=2, epochs=2, arch=TINY),
                           progress=lambda e, s: seen.append(e))
    assert seen == [0, 1]
    assert len(hist["step_total"]) == 6
    assert set(hist["epochs"][0]) == {"total", "ddpm", "ae", "cls", "epoch"}


def test_empty_dataset_and_bad_configs():
    with pytest.raises(ValidationError):
        train_arrays(np.zeros((0, 2, 16)), np.zeros(0), TrainConfig(arch=TINY))
    empty = TrialSet(np.zeros((0, 2, 16), np.float32), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int),
                     np.zeros((0, 2)), 1000.0, 16, "EEG_ONLY", ["a", "b"], ["EEG", "EEG"])
    with pytest.raises(ValidationError):
        train(empty, TrainConfig())
    for bad in ({"lr": 0}, {"optimizer": "rmsprop"}, {"precision": "half"}, {"beta_hi": 1.0}, {"w_cls": -1}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nope": 1})
    with pytest.raises(ConfigError):
        TrainConfig(arch={"depth": 4}).model_config(2, 16)


def test_divergence_aborts_with_diagnostics():
    x, y = toy_batch(n=4, L=16)
    x[0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="non-finite loss at epoch 0"):
        train_arrays(x, y, TrainConfig(batch_size=4, epochs=1, arch=TINY))


def test_predict_matches_forward_at_least_noised_step():
    cfg = TrainConfig(arch=TINY)
    model = build_model(cfg, 2, 16)
    x, _ = toy_batch(n=3, L=16)
    logits = predict(model, x)
    xt = torch.tensor(x)
    full = model(xt, xt * math.sqrt(cfg.schedule().alpha_bar[0]), torch.ones(3, dtype=torch.long))[3]
    assert np.allclose(logits, full.detach().double().numpy(), atol=1e-6)
    assert np.allclose(predict(model, x[0]), logits[:1], atol=1e-6)
    assert predict(model, np.zeros((0, 2, 16))).shape == (0, 15)


def test_top_k_rules():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((50, 15))
    assert np.array_equal(top_k(logits, 1)[:, 0], logits.argmax(axis=1))
    tie = np.zeros(15)
    tie[3] = tie[7] = 2.0
    assert top_k(tie, 1)[0, 0] == 3
    assert list(top_k(tie, 2)[0]) == [3, 7]
    t3 = top_k(logits, 3)
    assert np.all(t3[:, 0] == top_k(logits, 1)[:, 0])
    assert np.all(np.take_along_axis(logits, t3, 1)[:, :-1] >= np.take_along_axis(logits, t3, 1)[:, 1:])
    with pytest.raises(ValidationError):
        top_k(logits, 0)
    with pytest.raises(ValidationError):
        top_k(logits, 16)


def test_checkpoint_round_trip(tmp_path):
    x, y = toy_batch(n=4, L=16)
    cfg = TrainConfig(batch_size=4, epochs=2, arch=TINY, seed=5)
    model, _ = train_arrays(x, y, cfg)
    path = save_checkpoint(model, cfg, tmp_path / "m" / "a.ckpt", extra={"modality": "EEG_ONLY"})
    back, cfg2, extra = load_checkpoint(path)
    assert cfg2 == cfg and extra == {"modality": "EEG_ONLY"}
    for (k, a), (k2, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert k == k2 and a.dtype == b.dtype and torch.equal(a, b)
    assert np.array_equal(predict(back, x), predict(model, x))
    save_checkpoint(back, cfg2, tmp_path / "b.ckpt", extra=extra)
    assert (tmp_path / "b.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_float64_and_corruption(tmp_path):
    cfg = TrainConfig(arch=TINY, precision="float64")
    model = build_model(cfg, 3, 16)
    path = save_checkpoint(model, cfg, tmp_path / "c.ckpt")
    back, _, _ = load_checkpoint(path)
    assert next(back.parameters()).dtype == torch.float64
    raw = path.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    (tmp_path / "magic.ckpt").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "head.ckpt").write_bytes(raw[:20] + b"\xff" + raw[21:])
    for name in ("short", "magic", "head"):
        with pytest.raises(IntegrityError):
            load_checkpoint(tmp_path / f"{name}.ckpt")
