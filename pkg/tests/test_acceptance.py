"""Acceptance gate: one test (and one printed PASS/FAIL line) per criterion.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v -s`` or
``python3 tests/test_acceptance.py``. Criteria 3 and 4 train real models and
take roughly half an hour on one CPU core.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fadnet.diffusion import make_schedule, q_sample, reverse_step, sample
from fadnet.elnet import count_flops
from fadnet.evalkit import frechet_distance, kmeans_fit, l2_metric, run_baseline, shannon_index, \
    tlcc, KMeansModel
from fadnet.inference import CountingDenoiser, predict_corpus
from fadnet.model import ListenerModel, ModelConfig, save_checkpoint, load_checkpoint
from fadnet.motion import split_metric_views
from fadnet.numerics import conv1d, conv2d, grad_check
from fadnet.perception import clip_mels
from fadnet.synthdata import DyadParams, generate_corpus, generate_dyad, read_dataset, \
    split_indices, write_dataset
from fadnet.training import TrainConfig, train
from fadnet.bench import bench_inference

sys.path.insert(0, str(Path(__file__).parent))
from test_numerics import GRAD_CASES, loop_conv1d, loop_conv2d  # noqa: E402

L = 8
# Training recipe for the learning checks (see the decisions ledger for lr).
ACCEPT_TRAIN = dict(learning_rate=1e-3, batch_size=16, max_steps=600)
ABLATION_SEEDS = (0, 1, 2)


def report(capsys, n, name, ok, detail):
    line = f"[acceptance] criterion {n} ({name}): {'PASS' if ok else 'FAIL'} - {detail}"
    with capsys.disabled():
        print("\n" + line, flush=True)
    return ok


def expr_l2(preds, gts):
    return float(np.mean([l2_metric(split_metric_views(p)[0], split_metric_views(g)[0])
                          for p, g in zip(preds, gts)]))


# -- shared learning runs ------------------------------------------------------------

class LearningRuns:
    def __init__(self):
        self.corpus = generate_corpus(100, T=64, delay=4, seed=0, noise_sigma=0.02)
        tr, va, te = split_indices(100, 0)
        self.train = self.corpus.subset(tr)
        self.held = self.corpus.subset(np.r_[va, te])
        self.gt = self.held.listener_motion[:, L:]
        self.mels = np.stack([clip_mels(a, 64, L) for a in self.held.speaker_audio])
        self._runs = {}

    def run(self, modality, seed):
        key = (modality, seed)
        if key not in self._runs:
            cfg = TrainConfig(modality=modality, seed=seed, **ACCEPT_TRAIN)
            t0 = time.perf_counter()
            res = train(self.train, cfg)
            self._runs[key] = (res, time.perf_counter() - t0)
        return self._runs[key]

    def l2(self, modality, seed, steps=1):
        res, _ = self.run(modality, seed)
        return expr_l2(predict_corpus(res.model, self.held, steps, 0, self.mels), self.gt)

    def baseline_l2(self, kind):
        bank = {"listener_motion": self.train.listener_motion}
        preds = [run_baseline(kind, bank, {}, seed=s)[L:] for s in range(len(self.held))]
        return expr_l2(preds, self.gt)


@pytest.fixture(scope="module")
def runs():
    return LearningRuns()


# -- criteria ----------------------------------------------------------------------------

def test_criterion_1_numerics(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for name, make in GRAD_CASES.items():
        for seed in range(20):
            f, x = make(np.random.default_rng(seed))
            worst = max(worst, grad_check(f, x))
    exact = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.integers(-8, 9, (4, 16)).astype(np.float64)
        w = rng.integers(-4, 5, (4, 4, 3)).astype(np.float64)
        b = rng.integers(-4, 5, 4).astype(np.float64)
        for stride, pad in ((1, 0), (1, 1), (2, 1)):
            exact &= np.array_equal(conv1d(x, w, b, stride, pad).data,
                                    loop_conv1d(x, w, b, stride, pad))
        x2 = rng.integers(-8, 9, (4, 4, 16)).astype(np.float64)
        w2 = rng.integers(-4, 5, (3, 4, 2, 2)).astype(np.float64)
        exact &= np.array_equal(conv2d(x2, w2, b[:3], 1, 0).data, loop_conv2d(x2, w2, b[:3], 1, 0))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and exact and elapsed < 60
    report(capsys, 1, "numerics", ok,
           f"max grad rel err {worst:.2e} over {len(GRAD_CASES)} ops x 20 seeds; "
           f"conv loop oracle exact={exact}; {elapsed:.1f}s")
    assert ok


def test_criterion_2_diffusion(capsys):
    t0 = time.perf_counter()
    sched = make_schedule(100)
    prod_err = float(np.max(np.abs(sched.alpha_bar - np.cumprod(sched.alpha))))
    monotone = bool(np.all(np.diff(sched.alpha_bar) < 0))

    rng = np.random.default_rng(0)
    var = q_sample(np.zeros((10_000, 56)), 50, rng.standard_normal((10_000, 56)), sched).var(0)
    var_err = float(abs(var.mean() / (1 - sched.ab(50)) - 1))  # pooled over dimensions

    x0 = rng.standard_normal((8, 56))
    xs, e = [x0], []
    for j in range(100):
        e.append(rng.standard_normal(x0.shape))
        xs.append(np.sqrt(sched.alpha[j]) * xs[-1] + np.sqrt(sched.beta[j]) * e[-1])
    x = xs[-1]
    for k in range(100, 0, -1):
        eps = e[k - 1] * np.sqrt(1 - sched.alpha_bar[k - 1]) / np.sqrt(sched.beta[k - 1])
        x = reverse_step(x, k, eps, sched, np.zeros_like(x))
    chain_err = float(np.max(np.abs(x - x0)))

    calls = {}
    for S in (1, 5, 10):
        den = CountingDenoiser(lambda x, k, M: 0.1 * np.tanh(x))
        sample(den, np.zeros((8, 320)), S, sched, 0)
        calls[S] = den.calls
    elapsed = time.perf_counter() - t0
    ok = (prod_err < 1e-12 and monotone and var_err < 0.05 and chain_err < 1e-4
          and all(calls[S] == S for S in calls) and elapsed < 60)
    report(capsys, 2, "diffusion identities", ok,
           f"prod err {prod_err:.1e}, monotone={monotone}, MC var err {var_err:.3f}, "
           f"chain err {chain_err:.1e}, calls {calls}; {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_3_learning(capsys, runs):
    res, seconds = runs.run("both", 0)
    l2_s1 = runs.l2("both", 0, steps=1)
    l2_s10 = runs.l2("both", 0, steps=10)
    med, rnd = runs.baseline_l2("median"), runs.baseline_l2("random")
    n = len(res.losses) // 10
    trend = np.mean(res.losses[-n:]) < np.mean(res.losses[:n])
    ok = (seconds <= 1800 and l2_s1 <= 0.8 * med and l2_s1 <= 0.85 * rnd
          and l2_s1 <= 1.1 * l2_s10)
    report(capsys, 3, "learning", ok,
           f"held-out expr L2 {l2_s1:.3f} vs median {med:.3f} ({l2_s1 / med - 1:+.0%}) and "
           f"random {rnd:.3f} ({l2_s1 / rnd - 1:+.0%}); S=10 L2 {l2_s10:.3f} "
           f"(S1/S10 {l2_s1 / l2_s10:.2f}); train {seconds / 60:.1f} min; "
           f"loss trend down={trend}")
    assert ok


@pytest.mark.slow
def test_criterion_4_ablation(capsys, runs):
    means = {m: float(np.mean([runs.l2(m, s) for s in ABLATION_SEEDS]))
             for m in ("audio", "video", "both")}
    ok = means["both"] <= min(means["audio"], means["video"])
    report(capsys, 4, "modality ablation", ok,
           "mean held-out expr L2 over seeds " + ", ".join(f"{k}={v:.3f}" for k, v in means.items()))
    assert ok


def test_criterion_5_metrics(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    A = rng.standard_normal((2000, 6)) @ rng.standard_normal((6, 6))
    fd_same = frechet_distance(A, A)
    fd_1d = frechet_distance(rng.standard_normal(100_000), rng.standard_normal(100_000) + 2)
    km = kmeans_fit(rng.standard_normal((500, 3)), 16, seed=0)
    si_const = shannon_index(np.tile(km.centroids[3], (64, 1)), km)
    k5 = KMeansModel(5, np.arange(5.0)[:, None], 0, 10)
    si_unif = shannon_index(np.repeat(np.arange(5.0), 7)[:, None], k5)
    _, _, spk, lst = generate_dyad(DyadParams(seed=0, T=512, delay=4))
    _, lag = tlcc(lst, spk, 30)
    elapsed = time.perf_counter() - t0
    ok = (abs(fd_same) < 1e-8 and abs(fd_1d / 4 - 1) < 0.02 and si_const == 0
          and abs(si_unif - np.log(5)) < 1e-9 and abs(lag - 4) <= 1 and elapsed < 120)
    report(capsys, 5, "metric oracles", ok,
           f"FD(A,A)={fd_same:.1e}, 1-D FD={fd_1d:.4f} (target 4), SI const={si_const}, "
           f"SI uniform-ln5={si_unif - np.log(5):.1e}, TLCC lag={lag} (d=4); {elapsed:.1f}s")
    assert ok


def test_criterion_6_efficiency(capsys):
    model = ListenerModel(ModelConfig())
    corpus = generate_corpus(1, T=16, seed=5)
    frames = corpus.speaker_frames[0, :L]
    mels = clip_mels(corpus.speaker_audio[0], 16, L)[0]
    rows = {r["steps"]: r for r in bench_inference(model, frames, mels, (1, 10), repeats=30)}
    f1, f2, f10 = (count_flops(steps=s) for s in (1, 2, 10))
    linear = (f2["total"] - f1["total"] == f1["denoiser_pass"]
              and f10["total"] - f1["total"] == 9 * f1["denoiser_pass"])
    t1, t10 = rows[1]["median_ms"], rows[10]["median_ms"]
    ok = t1 < 50 and linear and t1 < t10 and rows[1]["denoiser_calls"] == 1
    report(capsys, 6, "efficiency", ok,
           f"S=1 median {t1:.2f} ms (p95 {rows[1]['p95_ms']:.2f}), S=10 median {t10:.2f} ms, "
           f"ratio S10/S1 {t10 / t1:.2f}; FLOPs S=1 {f1['total']:,}, denoiser pass "
           f"{f1['denoiser_pass']:,}, linear={linear}")
    assert ok


def test_criterion_7_determinism(capsys, tmp_path):
    from fadnet.elnet import ELNetConfig
    from fadnet.perception import MelConfig, VisualEncoderConfig

    corpus = generate_corpus(6, T=32, seed=3)
    mcfg = ModelConfig(ELNetConfig(cond_dim=24, base_width=8, groups=2, time_embed_dim=16),
                       VisualEncoderConfig(widths=(4, 4, 4, 4), head_channels=4, output_dim=8),
                       MelConfig(n_mels=16))
    cfg = TrainConfig(max_steps=4, batch_size=4, learning_rate=1e-3, seed=7)
    a = train(corpus, cfg, tmp_path / "a", mcfg)
    b = train(corpus, cfg, tmp_path / "b", mcfg)
    same_ckpt = a.checkpoint.read_bytes() == b.checkpoint.read_bytes()

    ma, _, _ = load_checkpoint(a.checkpoint)
    save_checkpoint(tmp_path / "again.ckpt", ma, *_reload_optimizer(a.checkpoint))
    ckpt_roundtrip = (tmp_path / "again.ckpt").read_bytes() == a.checkpoint.read_bytes()

    g1 = predict_corpus(ma, corpus, 5, 11).astype("<f4").tobytes()
    g2 = predict_corpus(load_checkpoint(b.checkpoint)[0], corpus, 5, 11).astype("<f4").tobytes()
    same_blobs = g1 == g2

    write_dataset(corpus, tmp_path / "d1")
    write_dataset(read_dataset(tmp_path / "d1"), tmp_path / "d2")
    data_roundtrip = all((tmp_path / "d1" / f).read_bytes() == (tmp_path / "d2" / f).read_bytes()
                         for f in ("manifest.json", "speaker_frames.f32", "speaker_audio.f32",
                                   "speaker_motion.f32", "listener_motion.f32"))
    ok = same_ckpt and ckpt_roundtrip and same_blobs and data_roundtrip
    report(capsys, 7, "determinism & persistence", ok,
           f"identical checkpoints={same_ckpt}, checkpoint round trip={ckpt_roundtrip}, "
           f"identical generated blobs={same_blobs}, dataset round trip={data_roundtrip}")
    assert ok


def _reload_optimizer(path):
    _, optim, header = load_checkpoint(path)
    return optim, header["step"], header["extra"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
