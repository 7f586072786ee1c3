import numpy as np
import pytest
import torch
import torch.nn as nn

from shm import imaging
from shm.model import CheckpointError, MNetConfig, TNetConfig, infer_full, load_checkpoint
from shm.train import (SampleBank, StageConfig, TrainingDiverged, crop_resize, desk_scale,
                       paper_defaults, read_log, trainer)
from shm.train import data


def small(stage, **kw):
    base = dict(batch_size=2, crop_size=32, outer_crop=64, inner_crops=(32, 48), inner_size=32,
                radius_range=(1, 4), trimap_radius=2, checkpoint_every=0, max_steps=4,
                tnet=TNetConfig(base_channels=4, depth=2), mnet=MNetConfig(width_multiplier=1 / 16))
    base.update(kw)
    return desk_scale(stage, **base)


def test_published_presets():
    t, m, e = paper_defaults("pretrain_t"), paper_defaults("pretrain_m"), paper_defaults("e2e")
    assert t.crop_size == 400 and m.crop_size == 320
    assert e.outer_crop == 800 and e.inner_crops == (320, 480, 640) and e.inner_size == 320
    assert e.flip_prob == 0.5 and e.learning_rate == 1e-5 and e.batch_size == 10
    assert t.learning_rate == m.learning_rate == 1e-4


def test_desk_presets_shrink_crops():
    e = desk_scale("e2e")
    assert e.outer_crop == 160 and e.inner_crops == (64, 96, 128) and e.inner_size == 64
    steps = [desk_scale(s).max_steps for s in ("pretrain_t", "pretrain_m", "e2e")]
    assert desk_scale("seg").max_steps == desk_scale("reg").max_steps == sum(steps)


def test_config_validation():
    with pytest.raises(ValueError):
        StageConfig(stage="finetune")
    with pytest.raises(ValueError):
        StageConfig(stage="e2e", outer_crop=100, inner_crops=(128,))
    cfg = StageConfig(stage="e2e", tnet={"base_channels": 4}, mnet={"width_multiplier": 0.5})
    assert cfg.tnet.base_channels == 4 and cfg.mnet.width_multiplier == 0.5


def test_crop_resize_matches_numpy_path():
    rng = np.random.default_rng(0)
    raster = rng.random((2, 40, 40, 3))
    t = torch.from_numpy(raster.transpose(0, 3, 1, 2).copy())
    windows = [(3, 5, 24), (0, 10, 30)]
    out = crop_resize(t, windows, 16)
    for k, (top, left, side) in enumerate(windows):
        want = imaging.resize(imaging.crop(raster[k], top, left, side, side), 16, 16)
        np.testing.assert_allclose(out[k].numpy().transpose(1, 2, 0), want, atol=1e-12)


class RasterTNet(nn.Module):
    """Logits whose softmax is an affine function of the coordinate channels."""

    def forward(self, x):
        p0 = 0.2 + 0.25 * x[:, 0:1]
        p1 = 0.2 + 0.25 * x[:, 1:2]
        return torch.log(torch.cat([p0, p1, 1 - p0 - p1], 1))


class SpyMNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.w = nn.Parameter(torch.zeros(()))
        self.inputs = None

    def forward(self, image, trimap):
        self.inputs = (image.detach(), trimap.detach())
        return torch.sigmoid(self.w + image.mean(1, keepdim=True))


def test_inner_crop_aligned_between_image_and_trimap():
    n, size = 3, 48
    yy, xx = np.mgrid[:size, :size] / (size - 1)
    raster = np.stack([yy, xx, np.full_like(yy, 0.5)], 0)
    img = torch.from_numpy(np.repeat(raster[None], n, 0)).float()
    batch = data.E2EBatch(image=img, fg=img, bg=img * 0, alpha=img[:, :1],
                          labels=torch.zeros(n, size, size, dtype=torch.long),
                          windows=[(0, 0, 48), (5, 9, 30), (20, 3, 24)])
    cfg = small("e2e", inner_size=16)
    spy = SpyMNet()
    trainer.e2e_forward(RasterTNet(), spy, batch, cfg)
    image_i, probs_i = spy.inputs
    torch.testing.assert_close(probs_i[:, 0], 0.2 + 0.25 * image_i[:, 0], atol=1e-6, rtol=0)
    torch.testing.assert_close(probs_i[:, 1], 0.2 + 0.25 * image_i[:, 1], atol=1e-6, rtol=0)
    # the window in pixel units: top-left sample of window (5, 9, 30) at 16 px
    scale = 30 / 16
    assert float(image_i[1, 0, 0, 0]) == pytest.approx((5 + 0.5 * scale - 0.5) / 47, abs=1e-6)
    assert float(image_i[1, 1, 0, 0]) == pytest.approx((9 + 0.5 * scale - 0.5) / 47, abs=1e-6)


def test_batches_depend_only_on_seed_and_step(tiny_manifest):
    bank = SampleBank.from_manifest(tiny_manifest, "train", radius=2)
    cfg = small("e2e")
    a, b = data.e2e_batch(bank, cfg, 5), data.e2e_batch(bank, cfg, 5)
    assert torch.equal(a.image, b.image) and a.windows == b.windows
    assert not torch.equal(data.e2e_batch(bank, cfg, 6).image, a.image)
    for w in a.windows:
        assert w[0] + w[2] <= cfg.outer_crop and w[1] + w[2] <= cfg.outer_crop
    m = data.matting_batch(bank, small("pretrain_m"), 0)
    assert m["trimap"].shape == (2, 3, 32, 32)
    torch.testing.assert_close(m["trimap"].sum(1), torch.ones(2, 32, 32))


def test_one_e2e_step_moves_both_networks(tiny_manifest, tmp_path):
    state = trainer.new_state(small("e2e", max_steps=1))
    before = {k: [p.detach().clone() for p in n.parameters()] for k, n in state.nets.items()}
    trainer.run(state, tiny_manifest, tmp_path)
    for k, net in state.nets.items():
        delta = sum(float((p.detach() - q).norm()) for p, q in zip(net.parameters(), before[k]))
        assert delta > 0, k


def test_resume_matches_uninterrupted(tiny_manifest, tmp_path):
    cfg = small("pretrain_t", max_steps=10)
    trainer.run(trainer.new_state(cfg), tiny_manifest, tmp_path / "full")
    half = trainer.run(trainer.new_state(cfg.replace(max_steps=5)), tiny_manifest, tmp_path / "part")
    assert half.step == 5
    resumed = trainer.resume_state(tmp_path / "part" / "checkpoint", cfg)
    trainer.run(resumed, tiny_manifest, tmp_path / "part")
    full = [r["total"] for r in read_log(tmp_path / "full" / "metrics.csv")]
    part = [r["total"] for r in read_log(tmp_path / "part" / "metrics.csv")]
    assert full == part


def test_resume_rejects_changed_architecture(tiny_manifest, tmp_path):
    trainer.run(trainer.new_state(small("pretrain_m", max_steps=1)), tiny_manifest, tmp_path)
    with pytest.raises(CheckpointError, match="fingerprint"):
        trainer.resume_state(tmp_path / "checkpoint",
                             small("pretrain_m", mnet=MNetConfig(width_multiplier=1 / 8)))
    with pytest.raises(CheckpointError, match="stage"):
        trainer.resume_state(tmp_path / "checkpoint", small("pretrain_t"))


def test_pretrained_parts_initialise_e2e(tiny_manifest, tmp_path):
    ct = trainer.pretrain_tnet(tiny_manifest, small("pretrain_t", max_steps=2), tmp_path / "t")
    cm = trainer.pretrain_mnet(tiny_manifest, small("pretrain_m", max_steps=2), tmp_path / "m")
    state = trainer.init_e2e(small("e2e"), ct, cm)
    ref = trainer.assemble(ct, cm)
    for a, b in zip(state.nets["tnet"].state_dict().values(), ref.tnet.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(CheckpointError):
        trainer.init_e2e(small("e2e", tnet=TNetConfig(base_channels=8, depth=2)), ct, cm)


def test_log_columns_and_repeatability(tiny_manifest, tmp_path):
    for name in ("a", "b"):
        trainer.run(trainer.new_state(small("e2e", max_steps=3)), tiny_manifest, tmp_path / name)
    text = (tmp_path / "a" / "metrics.csv").read_text()
    assert text.splitlines()[0] == "step,stage,alpha_term,comp_term,trimap_term,total,val_SAD"
    assert text == (tmp_path / "b" / "metrics.csv").read_text()


def test_validation_every_n_steps(tiny_manifest, tmp_path):
    cfg = small("reg", max_steps=4, val_every=2, val_foregrounds=1)
    state = trainer.run(trainer.new_state(cfg), tiny_manifest, tmp_path)
    vals = [r["val_SAD"] for r in read_log(tmp_path / "metrics.csv")]
    assert [bool(v) for v in vals] == [False, True, False, True]
    assert state.best_val == min(float(v) for v in vals if v)


def test_divergence_keeps_last_good_checkpoint(tiny_manifest, tmp_path, monkeypatch):
    real = trainer._STEPS["pretrain_t"]

    def flaky(state, bank, step, overfit):
        loss, terms = real(state, bank, step, overfit)
        return (loss * float("nan"), terms) if step == 2 else (loss, terms)

    monkeypatch.setitem(trainer._STEPS, "pretrain_t", flaky)
    with pytest.raises(TrainingDiverged, match="step 2"):
        trainer.run(trainer.new_state(small("pretrain_t", checkpoint_every=1)), tiny_manifest, tmp_path)
    assert load_checkpoint(tmp_path / "checkpoint").step == 2


@pytest.mark.parametrize("stage", ["seg", "reg"])
def test_baselines_produce_mattes(tiny_manifest, tmp_path, stage):
    path = trainer.train_baseline(tiny_manifest, small(stage, max_steps=2), tmp_path)
    model = trainer.load_predictor(path)
    img = np.random.default_rng(0).random((40, 50, 3))
    out = infer_full(img, model)
    assert out.shape == (40, 50) and 0 <= out.min() and out.max() <= 1
    if stage == "seg":
        assert set(np.unique(out)) <= {0.0, 1.0}
