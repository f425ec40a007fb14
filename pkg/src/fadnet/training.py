"""Joint training of the perception encoders and ELNet on (clip, next clip) pairs."""
import csv
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffusion import sample_timesteps
from .model import ListenerModel, ModelConfig, load_checkpoint, save_checkpoint
from .motion import MOTION_DIM
from .perception import MODALITIES, MelConfig, clip_mels


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.95
    beta2: float = 0.999
    weight_decay: float = 1e-4
    eps: float = 1e-8
    epochs: int = 20
    max_steps: int = 0  # > 0 overrides epochs
    batch_size: int = 32
    K: int = 100
    clip_len: int = 8
    seed: int = 0
    modality: str = "both"
    checkpoint_every: int = 0

    def validate(self):
        for name in ("learning_rate", "epochs", "batch_size", "K", "clip_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("weight_decay must be >= 0 and eps > 0")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_arrays(self):
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays, step):
        st = cls(step=step)
        for k, a in arrays.items():
            kind, name = k.split(".", 1)
            getattr(st, kind)[name] = np.array(a)
        return st


def adamw_step(named_params, state: AdamState, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update in place; returns ``state``."""
    named_params = list(named_params)
    for name, p in named_params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    lr, b1, b2 = cfg.learning_rate, cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in named_params:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if cfg.weight_decay:
            p.data *= 1 - lr * cfg.weight_decay
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)
    return state


# -- data --------------------------------------------------------------------------

class PairDataset:
    """(speaker clip i, listener clip i+1) pairs drawn from a corpus."""

    def __init__(self, corpus, l: int = 8, mel_cfg: MelConfig = MelConfig(), need_frames=True):
        self.corpus = corpus
        self.l = l
        self.n_clips = corpus.T // l
        self.need_frames = need_frames
        self.mels = np.stack([clip_mels(a, corpus.T, l, mel_cfg) for a in corpus.speaker_audio]
                             ).astype(np.float32) if len(corpus) else np.zeros((0,))
        self.pairs = [(s, i) for s in range(len(corpus)) for i in range(self.n_clips - 1)]

    def __len__(self):
        return len(self.pairs)

    def batch(self, idx):
        l = self.l
        sel = [self.pairs[j] for j in idx]
        mels = np.stack([self.mels[s, i] for s, i in sel])
        target = np.stack([self.corpus.listener_motion[s, (i + 1) * l:(i + 2) * l] for s, i in sel])
        frames = None
        if self.need_frames:
            frames = np.stack([self.corpus.speaker_frames[s, i * l:(i + 1) * l] for s, i in sel])
        return frames, mels, target


# -- loop ------------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ListenerModel
    losses: list
    checkpoint: Path = None
    steps: int = 0


def build_model(train_corpus, cfg: TrainConfig, model_cfg: ModelConfig = None,
                dataset: PairDataset = None) -> ListenerModel:
    model_cfg = model_cfg or ModelConfig()
    model_cfg = replace(model_cfg, modality=cfg.modality,
                        elnet=replace(model_cfg.elnet, K=cfg.K, clip_len=cfg.clip_len))
    model = ListenerModel(model_cfg, seed=cfg.seed)
    dataset = dataset or PairDataset(train_corpus, cfg.clip_len, model_cfg.mel, False)
    model.set_normalizers(train_corpus.listener_motion, dataset.mels)
    return model


def total_steps(cfg: TrainConfig, n_pairs: int) -> int:
    if cfg.max_steps > 0:
        return cfg.max_steps
    return cfg.epochs * math.ceil(n_pairs / cfg.batch_size)


def batch_indices(cfg: TrainConfig, n_pairs: int, step: int):
    """Minibatch for ``step``: a slice of the (seed, epoch) permutation."""
    per_epoch = math.ceil(n_pairs / cfg.batch_size)
    epoch, j = divmod(step, per_epoch)
    perm = np.random.default_rng([cfg.seed, epoch, 1]).permutation(n_pairs)
    return perm[j * cfg.batch_size:(j + 1) * cfg.batch_size]


def train(corpus, cfg: TrainConfig, out_dir=None, model_cfg: ModelConfig = None,
          resume=None, log_every: int = 0, stop_after: int = None) -> TrainResult:
    """Train on every (clip, next clip) pair of ``corpus``.

    Each step is fully determined by (seed, step), so resuming from a
    checkpoint written at step ``s`` reproduces the unbroken run. ``stop_after``
    ends the run early (at that step count) without changing the schedule.
    """
    cfg.validate()
    if len(corpus) == 0:
        raise ValueError("empty dataset")
    mel_cfg = (model_cfg or ModelConfig()).mel
    data = PairDataset(corpus, cfg.clip_len, mel_cfg, need_frames=cfg.modality != "audio")
    if len(data) == 0:
        raise ValueError("empty dataset: sequences shorter than two clips")
    if resume is not None:
        model, optim, header = load_checkpoint(resume)
        if model.cfg.modality != cfg.modality:
            raise ValueError("checkpoint modality differs from the training config")
        state = AdamState.from_arrays(optim, header["step"])
    else:
        model = build_model(corpus, cfg, model_cfg, data)
        state = AdamState()
    n_total = total_steps(cfg, len(data))
    end = n_total if stop_after is None else min(n_total, stop_after)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    params = list(model.named_parameters())
    losses, rows = [], []
    step = state.step
    while step < end:
        idx = batch_indices(cfg, len(data), step)
        frames, mels, target = data.batch(idx)
        rng = np.random.default_rng([cfg.seed, step, 2])
        k = sample_timesteps(rng, cfg.K, len(idx))
        eps = rng.standard_normal((len(idx), cfg.clip_len, MOTION_DIM)).astype(np.float32)
        t0 = time.perf_counter()
        loss = model.loss(frames, mels, target, k, eps)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {step} (timesteps {k.tolist()})")
        model.zero_grad()
        loss.backward()
        adamw_step(params, state, cfg)
        step = state.step
        wall = (time.perf_counter() - t0) * 1e3
        losses.append(value)
        rows.append((step, value, wall))
        if log_every and step % log_every == 0:
            print(f"step {step}/{n_total} loss {np.mean(losses[-log_every:]):.4f}", flush=True)
        if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"step_{step:06d}.ckpt", model, state.to_arrays(), step,
                            {"train": asdict(cfg)})
    ckpt = None
    if out_dir:
        ckpt = out_dir / "model.ckpt"
        save_checkpoint(ckpt, model, state.to_arrays(), step, {"train": asdict(cfg)})
        write_loss_trace(out_dir / "loss.csv", rows, append=resume is not None)
    return TrainResult(model, losses, ckpt, step)


def write_loss_trace(path, rows, append=False):
    path = Path(path)
    fresh = not (append and path.exists())
    with open(path, "w" if fresh else "a", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(["step", "loss", "wall_ms"])
        for step, loss, wall in rows:
            w.writerow([step, repr(loss), f"{wall:.3f}"])
