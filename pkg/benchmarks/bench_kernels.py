"""Compare the compiled (Cython) and pure-Python conv kernels.

Reports per-kernel median times plus an end-to-end S=1 inference and a
training step under each backend. Usage: ``python3 benchmarks/bench_kernels.py``.
"""
import argparse
import time

import numpy as np

from fadnet.bench import bench_inference, bench_kernels
from fadnet.model import ListenerModel, ModelConfig
from fadnet.numerics import kernels
from fadnet.perception import clip_mels
from fadnet.synthdata import generate_corpus
from fadnet.training import TrainConfig, train


def end_to_end(repeats):
    model = ListenerModel(ModelConfig())
    corpus = generate_corpus(4, T=32, seed=5)
    frames = corpus.speaker_frames[0, :8]
    mels = clip_mels(corpus.speaker_audio[0], 32, 8)[0]
    rows = []
    for name in kernels.available_backends():
        kernels.set_backend(name)
        inf = bench_inference(model, frames, mels, (1,), repeats)[0]
        t0 = time.perf_counter()
        train(corpus, TrainConfig(max_steps=3, batch_size=8, learning_rate=1e-3))
        step_ms = (time.perf_counter() - t0) / 3 * 1e3
        rows.append((name, inf["median_ms"], step_ms))
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeats", type=int, default=20)
    args = p.parse_args()
    print(f"backends: {', '.join(kernels.available_backends())} (active: {kernels.BACKEND})")
    rows = bench_kernels(args.repeats)
    ops = sorted({r["op"] for r in rows})
    by = {(r["backend"], r["op"]): r["median_ms"] for r in rows}
    print(f"{'kernel':<10} " + " ".join(f"{b:>10}" for b in kernels.available_backends())
          + "   speedup")
    for op in ops:
        t = [by[(b, op)] for b in kernels.available_backends()]
        speed = f"{t[-1] / t[0]:8.1f}x" if len(t) > 1 else ""
        print(f"{op:<10} " + " ".join(f"{v:8.2f}ms" for v in t) + f"  {speed}")
    print("\nend to end (default model):")
    for name, inf_ms, step_ms in end_to_end(args.repeats):
        print(f"  {name:<8} S=1 inference {inf_ms:7.2f} ms   train step (batch 8) {step_ms:7.1f} ms")


if __name__ == "__main__":
    main()
