"""Clip-streaming generation over whole sequences and corpora."""
import time

import numpy as np

from .model import ListenerModel
from .motion import segment_clips
from .perception import clip_mels


class CountingDenoiser:
    """Wraps a denoiser and counts its invocations."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x, k, M):
        self.calls += 1
        return self.fn(x, k, M)


def stream_sequence(model: ListenerModel, frames, audio, steps=1, seed=0, mels=None):
    """Generate next-clip listener motion clip by clip (batch 1).

    Returns (motion [(n-1)*l, 56] for frames [l, n*l), per-clip latency seconds,
    per-clip denoiser call counts). Latency brackets only encoders + sampling.
    """
    l = model.cfg.elnet.clip_len
    T = np.asarray(frames).shape[0]
    stream = segment_clips(frames, audio, l)
    if mels is None:
        mels = clip_mels(audio, T, l, model.cfg.mel)
    outs, lat, calls = [], [], []
    for clip in stream.clips[:-1]:
        den = CountingDenoiser(model.elnet.denoise)
        fr = None if model.cfg.modality == "audio" else clip.video[None]
        m = mels[clip.index][None]
        t0 = time.perf_counter()
        out = model.generate(fr, m, steps, np.random.default_rng([seed, clip.index]), den)
        lat.append(time.perf_counter() - t0)
        outs.append(out[0])
        calls.append(den.calls)
    return np.concatenate(outs), lat, calls


def predict_corpus(model: ListenerModel, corpus, steps=1, seed=0, mels=None):
    """Batched generation for every sequence: [N, (n-1)*l, 56] covering frames [l, n*l)."""
    l = model.cfg.elnet.clip_len
    n = corpus.T // l
    preds = []
    for s in range(len(corpus)):
        m = mels[s] if mels is not None else clip_mels(corpus.speaker_audio[s], corpus.T, l,
                                                       model.cfg.mel)
        fr = None
        if model.cfg.modality != "audio":
            fr = corpus.speaker_frames[s, :n * l].reshape((n, l) + corpus.speaker_frames.shape[2:])
        out = model.generate(None if fr is None else fr[:-1], m[:n - 1], steps,
                             np.random.default_rng([seed, s]))
        preds.append(out.reshape(-1, out.shape[-1]))
    return np.stack(preds)


def target_range(T: int, l: int):
    """Frames covered by next-clip predictions: [l, n*l)."""
    return l, (T // l) * l
