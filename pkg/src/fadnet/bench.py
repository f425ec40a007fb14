"""Latency / FLOPs benchmarking of single-clip inference and of the conv kernels."""
import time

import numpy as np

from .elnet import count_flops
from .inference import CountingDenoiser


def latency_stats(samples):
    s = np.asarray(samples, dtype=np.float64)
    return {"median_ms": float(np.median(s) * 1e3), "p95_ms": float(np.percentile(s, 95) * 1e3)}


def bench_inference(model, frames, mels, steps_list=(1, 5, 10), repeats=20, warmup=3, seed=0):
    """Per-clip end-to-end latency (encoders + S denoiser passes, batch 1).

    ``frames`` is one clip [l, C, R, R] (ignored for audio-only models) and
    ``mels`` is [l, n_mels]. Warm-up runs are excluded from the statistics.
    """
    if warmup < 3:
        raise ValueError("at least 3 warm-up runs are required")
    fr = None if model.cfg.modality == "audio" else np.asarray(frames)[None]
    m = np.asarray(mels)[None]
    rows = []
    for S in steps_list:
        times, calls = [], []
        for r in range(warmup + repeats):
            den = CountingDenoiser(model.elnet.denoise)
            t0 = time.perf_counter()
            model.generate(fr, m, S, np.random.default_rng([seed, r]), den)
            dt = time.perf_counter() - t0
            if r >= warmup:
                times.append(dt)
                calls.append(den.calls)
        flops = count_flops(model.cfg.elnet, model.cfg.visual, model.cfg.mel, S,
                            model.cfg.modality)
        rows.append({"steps": S, **latency_stats(times), "denoiser_calls": int(np.max(calls)),
                     "flops": flops["total"], "denoiser_flops": S * flops["denoiser_pass"],
                     "repeats": repeats})
    return rows


def bench_kernels(repeats=20, seed=0):
    """Median time of im2col/col2im under each available kernel backend."""
    from .numerics import kernels

    rng = np.random.default_rng(seed)
    x2 = rng.standard_normal((64, 16, 48, 48)).astype(np.float32)
    x1 = rng.standard_normal((16, 192, 8)).astype(np.float32)
    cases = {
        "im2col2d": (lambda k: k.im2col2d(x2, 3, 3, 2, 1)),
        "col2im2d": None,
        "im2col1d": (lambda k: k.im2col1d(x1, 3, 1, 1)),
        "col2im1d": None,
    }
    rows = []
    for name in kernels.available_backends():
        k = kernels.get_backend(name)
        c2 = k.im2col2d(x2, 3, 3, 2, 1)
        c1 = k.im2col1d(x1, 3, 1, 1)
        cases["col2im2d"] = lambda k, c2=c2: k.col2im2d(c2, 16, 48, 48, 3, 3, 2, 1)
        cases["col2im1d"] = lambda k, c1=c1: k.col2im1d(c1, 192, 8, 3, 1, 1)
        for op, fn in cases.items():
            fn(k)
            ts = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn(k)
                ts.append(time.perf_counter() - t0)
            rows.append({"backend": name, "op": op, "median_ms": float(np.median(ts) * 1e3)})
    return rows
