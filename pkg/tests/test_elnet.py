import numpy as np
import pytest

from fadnet.diffusion import make_schedule
from fadnet.elnet import (
    ELNet,
    ELNetConfig,
    count_flops,
    elnet_layer_plan,
    timestep_embedding,
)
from fadnet.numerics import Tensor, grad_check, mse, no_grad

TINY = dict(cond_dim=12, base_width=8, groups=2, time_embed_dim=8)


def _inputs(rng, cfg, B=None, dtype=np.float32):
    lead = (B,) if B else ()
    x = rng.standard_normal(lead + (cfg.clip_len, cfg.motion_dim)).astype(dtype)
    M = rng.standard_normal(lead + (cfg.clip_len, cfg.cond_dim)).astype(dtype)
    return x, M


def test_embedding_at_zero():
    e = timestep_embedding(0, 16)
    assert np.array_equal(e, np.r_[np.zeros(8), np.ones(8)])


def test_embeddings_distinct_over_schedule():
    E = timestep_embedding(np.arange(1, 101), 128)
    assert E.shape == (100, 128)
    d = np.abs(E[:, None, :] - E[None, :, :]).max(-1)
    assert d[~np.eye(100, dtype=bool)].min() > 0


def test_embedding_errors():
    with pytest.raises(ValueError):
        timestep_embedding(3, 7)
    with pytest.raises(ValueError):
        timestep_embedding(-1, 8)


@pytest.mark.parametrize("bad", [dict(clip_len=6), dict(base_width=60), dict(prediction="x0")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ELNetConfig(**bad).validate()


def test_output_shape_and_determinism():
    net = ELNet(seed=0)
    x, M = _inputs(np.random.default_rng(0), net.cfg)
    a = net.denoise(x, 37, M).data
    b = net.denoise(x, 37, M).data
    assert a.shape == (8, 56)
    assert np.array_equal(a, b)
    xb, Mb = _inputs(np.random.default_rng(0), net.cfg, B=3)
    assert net.denoise(xb, np.array([1, 50, 100]), Mb).shape == (3, 8, 56)


def test_batched_matches_unbatched():
    net = ELNet(ELNetConfig(**TINY), seed=1, dtype=np.float64)
    xb, Mb = _inputs(np.random.default_rng(1), net.cfg, B=3, dtype=np.float64)
    ks = np.array([3, 40, 99])
    out = net.denoise(xb, ks, Mb).data
    for i in range(3):
        assert np.allclose(out[i], net.denoise(xb[i], ks[i], Mb[i]).data, atol=1e-12)


def test_shape_errors():
    net = ELNet(seed=0)
    x, M = _inputs(np.random.default_rng(0), net.cfg)
    with pytest.raises(ValueError):
        net.denoise(x[:4], 3, M)
    with pytest.raises(ValueError):
        net.denoise(x, 3, M[:, :100])
    with pytest.raises(ValueError):
        net.denoise(x, 0, M)


def test_zero_head_gives_zero_noise_in_epsilon_mode():
    net = ELNet(ELNetConfig(prediction="epsilon"), seed=0)
    net.out_w.data[...] = 0
    for s in range(3):
        x, M = _inputs(np.random.default_rng(s), net.cfg)
        assert not net.denoise(x, 10 + s, M).data.any()


def test_zero_head_in_v_mode_returns_scaled_input():
    net = ELNet(ELNetConfig(**TINY), seed=0, dtype=np.float64)
    net.out_w.data[...] = 0
    x, M = _inputs(np.random.default_rng(0), net.cfg, dtype=np.float64)
    k = 60
    ab = make_schedule(100).alpha_bar[k - 1]
    assert np.allclose(net.denoise(x, k, M).data, np.sqrt(1 - ab) * x, atol=1e-12)


def test_condition_pathway():
    net = ELNet(seed=3)
    rng = np.random.default_rng(3)
    x, M = _inputs(rng, net.cfg)
    M2 = M + rng.standard_normal(M.shape).astype(np.float32)
    assert np.linalg.norm(net.denoise(x, 20, M).data - net.denoise(x, 20, M2).data) > 1e-3
    net.in_w.data[:, net.cfg.motion_dim:, :] = 0
    assert np.array_equal(net.denoise(x, 20, M).data, net.denoise(x, 20, M2).data)


def test_skip_ablation_changes_output():
    net = ELNet(seed=4)
    x, M = _inputs(np.random.default_rng(4), net.cfg)
    assert not np.allclose(net.denoise(x, 5, M).data, net.denoise(x, 5, M, ablate_skips=True).data)


def test_parameter_budget():
    assert ELNet().num_parameters() < 5_000_000


@pytest.mark.parametrize("prediction", ["epsilon", "v"])
@pytest.mark.parametrize("seed", range(5))
def test_full_network_gradient_wrt_condition(seed, prediction):
    cfg = ELNetConfig(prediction=prediction, **TINY)
    net = ELNet(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(100 + seed)
    x, M = _inputs(rng, cfg, B=2, dtype=np.float64)
    target = rng.standard_normal(x.shape)
    f = lambda m: mse(net.denoise(x, np.array([7, 80]), m), Tensor(target))
    assert grad_check(f, M) < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_full_network_gradient_wrt_parameters(seed):
    net = ELNet(ELNetConfig(**TINY), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x, M = _inputs(rng, net.cfg, B=2, dtype=np.float64)
    target = rng.standard_normal(x.shape)
    ks = np.array([2, 64])

    def loss():
        return mse(net.denoise(x, ks, M), Tensor(target))

    net.zero_grad()
    loss().backward()
    h, worst = 1e-5, 0.0
    for name, p in net.named_parameters():
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(3, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss().data)
            flat[i] = orig - h
            fm = float(loss().data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(p.grad.reshape(-1)[i] - num) / max(1.0, abs(num)))
    assert worst < 1e-3


def test_layer_plan_matches_parameters():
    net = ELNet()
    params = dict(net.named_parameters())
    for name, kind, fan_in, fan_out, _ in elnet_layer_plan(net.cfg):
        w = params[name + "_w"]
        assert w.shape[0] == fan_out
        assert int(np.prod(w.shape[1:])) == fan_in


# independent per-layer recount of the default configuration (l=8, widths 64/128)
RECOUNT_DENOISER = sum([
    2 * 2 * 128 * 128,                                          # time MLP
    2 * 376 * 3 * 64 * 8,                                       # input conv
    2 * (2 * 2 * 192 * 64 * 8 + 2 * 128 * 64),                  # level-0 res blocks
    2 * 192 * 64 * 4,                                           # downsample 0
    2 * 192 * 128 * 4 + 2 * 128 * 128 + 2 * 384 * 128 * 4 + 2 * 64 * 128 * 4,
    2 * 384 * 128 * 4 * 2 + 2 * 128 * 128,                      # level-1 res blocks
    2 * 384 * 128 * 2,                                          # downsample 1
    2 * (2 * 384 * 128 * 2 * 2 + 2 * 128 * 128),                # bottleneck
    2 * 384 * 128 * 4,                                          # upsample 1 conv
    2 * 768 * 128 * 4 + 2 * 128 * 128 + 2 * 384 * 128 * 4 + 2 * 256 * 128 * 4,
    2 * 384 * 128 * 4 * 2 + 2 * 128 * 128,
    2 * 384 * 128 * 8,                                          # upsample 0 conv
    2 * 576 * 64 * 8 + 2 * 128 * 64 + 2 * 192 * 64 * 8 + 2 * 192 * 64 * 8,
    2 * 192 * 64 * 8 * 2 + 2 * 128 * 64,
    2 * 64 * 56 * 8,                                            # output head
])
RECOUNT_VISUAL = 8 * (2 * 9 * 16 * 48 ** 2 + 2 * 144 * 32 * 24 ** 2 + 2 * 288 * 64 * 12 ** 2
                      + 2 * 576 * 96 * 6 ** 2 + 2 * 96 * 96 * 6 ** 2 + 2 * 96 * 36 * 2)
RECOUNT_AUDIO = 8 * 2 * 513 * 128


def test_flops_match_manual_recount():
    f = count_flops()
    assert f["denoiser_pass"] == RECOUNT_DENOISER == 9_633_792
    assert f["visual"] == RECOUNT_VISUAL
    assert f["audio"] == RECOUNT_AUDIO
    assert f["total"] == RECOUNT_VISUAL + RECOUNT_AUDIO + RECOUNT_DENOISER


def test_flops_conv_formula_and_linearity():
    plan = dict((n, (fi, fo, L)) for n, _, fi, fo, L in elnet_layer_plan(ELNetConfig()))
    fi, fo, L = plan["in"]
    assert 2 * fi * fo * L == 2 * 376 * 64 * 3 * 8
    f1, f2, f10 = (count_flops(steps=s) for s in (1, 2, 10))
    assert f2["total"] - f1["total"] == f1["denoiser_pass"]
    assert f10["total"] - f1["total"] == 9 * f1["denoiser_pass"]
    assert count_flops(modality="audio")["visual"] == 0


def test_v_mode_float64_sampler_path():
    net = ELNet(seed=0)
    x, M = _inputs(np.random.default_rng(0), net.cfg)
    with no_grad():
        out = net.denoise(x.astype(np.float64), 100, M)
    assert out.dtype == np.float64
