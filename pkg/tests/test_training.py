from dataclasses import replace

import numpy as np
import pytest

from fadnet.numerics import Parameter
from fadnet.synthdata import generate_corpus
from fadnet.training import (
    AdamState,
    PairDataset,
    TrainConfig,
    adamw_step,
    batch_indices,
    build_model,
    train,
)


def _cfg(**kw):
    base = dict(learning_rate=1e-3, batch_size=4, max_steps=6, modality="audio", seed=3)
    return TrainConfig(**{**base, **kw})


def test_adamw_zero_gradient_is_noop():
    p = Parameter(np.array([1.5, -2.0]))
    adamw_step([("p", p)], AdamState(), TrainConfig(weight_decay=0.0))
    assert np.array_equal(p.data, [1.5, -2.0])


def test_adamw_hand_computed_step():
    lr, b1, b2, wd, eps = 0.1, 0.95, 0.999, 0.01, 1e-8
    p = Parameter(np.array([1.0]))
    p.grad[...] = 0.5
    cfg = TrainConfig(learning_rate=lr, beta1=b1, beta2=b2, weight_decay=wd, eps=eps)
    st = adamw_step([("p", p)], AdamState(), cfg)
    m = (1 - b1) * 0.5
    v = (1 - b2) * 0.25
    expected = 1.0 * (1 - lr * wd) - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    assert abs(p.data[0] - expected) < 1e-12
    assert st.step == 1


def test_adamw_weight_decay_only():
    p = Parameter(np.array([2.0, -4.0]))
    adamw_step([("p", p)], AdamState(), TrainConfig(learning_rate=0.01, weight_decay=0.5))
    assert np.allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.01 * 0.5), rtol=0, atol=1e-15)


def test_adamw_rejects_non_finite():
    p = Parameter(np.zeros(3))
    p.grad[1] = np.nan
    with pytest.raises(FloatingPointError, match="enc.w"):
        adamw_step([("enc.w", p)], AdamState(), TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(modality="smell").validate()


def test_batches_cover_each_epoch():
    cfg = TrainConfig(batch_size=4, seed=1)
    seen = np.concatenate([batch_indices(cfg, 10, s) for s in range(3)])
    assert sorted(seen) == list(range(10))
    assert np.array_equal(batch_indices(cfg, 10, 5), batch_indices(cfg, 10, 5))


def test_pair_dataset_targets_next_clip(tiny_corpus):
    data = PairDataset(tiny_corpus, 8)
    assert len(data) == len(tiny_corpus) * 3
    frames, mels, target = data.batch([0, 4])
    s, i = data.pairs[4]
    assert np.array_equal(target[1], tiny_corpus.listener_motion[s, (i + 1) * 8:(i + 2) * 8])
    assert np.array_equal(frames[1], tiny_corpus.speaker_frames[s, i * 8:(i + 1) * 8])


def test_descent_probe(tiny_corpus, tiny_model_cfg):
    model = build_model(tiny_corpus, _cfg(), tiny_model_cfg)
    model.astype(np.float64)
    data = PairDataset(tiny_corpus, 8, tiny_model_cfg.mel, need_frames=False)
    _, mels, target = data.batch(range(8))
    rng = np.random.default_rng(0)
    k, eps = rng.integers(1, 101, 8), rng.standard_normal((8, 8, 56))
    loss0 = model.loss(None, mels, target, k, eps)
    model.zero_grad()
    loss0.backward()
    adamw_step(list(model.named_parameters()), AdamState(),
               TrainConfig(learning_rate=1e-6, weight_decay=0.0))
    loss1 = model.loss(None, mels, target, k, eps)
    assert float(loss1.data) < float(loss0.data)


def test_oracle_denoiser_loss_is_zero(tiny_corpus, tiny_model_cfg):
    from fadnet.diffusion import training_loss
    model = build_model(tiny_corpus, _cfg(), tiny_model_cfg)
    eps = np.random.default_rng(1).standard_normal((2, 8, 56)).astype(np.float32)
    loss = training_loss(lambda x, k, M: eps, np.zeros((2, 8, 56), np.float32), None,
                         np.array([3, 9]), eps, model.schedule)
    assert float(loss.data) == 0.0


def test_loss_trend_decreases(tiny_model_cfg):
    corpus = generate_corpus(12, T=64, seed=11)
    mcfg = replace(tiny_model_cfg, elnet=replace(tiny_model_cfg.elnet, base_width=32,
                                                 groups=8, time_embed_dim=64))
    res = train(corpus, _cfg(max_steps=200, batch_size=32), model_cfg=mcfg)
    n = len(res.losses) // 10
    assert np.mean(res.losses[-n:]) < np.mean(res.losses[:n])


@pytest.mark.parametrize("modality", ["audio", "both"])
def test_identical_seeds_give_identical_checkpoints(tmp_path, tiny_corpus, tiny_model_cfg,
                                                    modality):
    cfg = _cfg(modality=modality, max_steps=3)
    a = train(tiny_corpus, cfg, tmp_path / "a", tiny_model_cfg)
    b = train(tiny_corpus, cfg, tmp_path / "b", tiny_model_cfg)
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert (tmp_path / "a" / "loss.csv").read_text().splitlines()[0] == "step,loss,wall_ms"


def test_resume_reproduces_unbroken_run(tmp_path, tiny_corpus, tiny_model_cfg):
    cfg = _cfg(max_steps=20, checkpoint_every=10)
    full = train(tiny_corpus, cfg, tmp_path / "full", tiny_model_cfg)
    part = train(tiny_corpus, cfg, tmp_path / "part", tiny_model_cfg, stop_after=10)
    assert part.losses == full.losses[:10]
    resumed = train(tiny_corpus, cfg, tmp_path / "part", tiny_model_cfg,
                    resume=tmp_path / "part" / "step_000010.ckpt")
    assert np.array_equal(np.float32(resumed.losses), np.float32(full.losses[10:]))
    assert resumed.checkpoint.read_bytes() == full.checkpoint.read_bytes()
    rows = (tmp_path / "part" / "loss.csv").read_text().splitlines()
    assert len(rows) == 21


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_errors(tiny_corpus, tiny_model_cfg):
    with pytest.raises(ValueError, match="empty"):
        train(tiny_corpus.subset([]), _cfg(), model_cfg=tiny_model_cfg)
    bad = tiny_corpus.subset(range(len(tiny_corpus)))
    bad.listener_motion = bad.listener_motion.copy()
    bad.listener_motion[0, 10] = np.inf
    with pytest.raises(FloatingPointError):
        train(bad, _cfg(max_steps=10), model_cfg=tiny_model_cfg)
