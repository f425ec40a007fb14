"""Command-line interface: gen-data / train / generate / eval / bench."""
import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .bench import bench_inference
from .elnet import ELNetConfig
from .evalkit import BASELINES, evaluate, kmeans_fit, l2_metric, run_baseline, shannon_index, \
    write_reports
from .inference import predict_corpus, stream_sequence, target_range
from .model import ModelConfig, load_checkpoint
from .motion import split_metric_views
from .perception import MelConfig, clip_mels
from .synthdata import generate_corpus, load_split, read_manifest, write_dataset
from .training import TrainConfig, train

SPLITS = ("train", "val", "test", "heldout")


def _seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(os.environ.get("FAD_SEED", "0"))


def load_run_config(path=None, overrides=None):
    """Merge a JSON config file with CLI overrides into (TrainConfig, ModelConfig)."""
    raw = json.loads(Path(path).read_text()) if path else {}
    model_raw = raw.pop("model", {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    tcfg = TrainConfig(**{**raw, **overrides})
    mcfg = ModelConfig.from_dict({**model_raw, "modality": tcfg.modality})
    mcfg = replace(mcfg, elnet=replace(mcfg.elnet, K=tcfg.K, clip_len=tcfg.clip_len))
    tcfg.validate()
    mcfg.validate()
    return tcfg, mcfg


def _corpus_split(manifest, split):
    if split == "heldout":
        from .synthdata import read_dataset
        m = read_manifest(manifest)
        return read_dataset(manifest).subset(m["split"]["val"] + m["split"]["test"])
    return load_split(manifest, split)


# -- commands --------------------------------------------------------------------

def cmd_gen_data(args):
    corpus = generate_corpus(args.sequences, args.frames, args.delay, _seed(args),
                             args.noise_sigma)
    path = write_dataset(corpus, args.out)
    if args.wav:
        from .synthdata import export_wavs
        export_wavs(corpus, Path(args.out) / "wav")
    print(path)


def cmd_train(args):
    if not Path(args.data).exists():
        raise FileNotFoundError(f"data path not found: {args.data}")
    overrides = {"modality": args.modality, "seed": args.seed, "epochs": args.epochs,
                 "max_steps": args.max_steps, "batch_size": args.batch_size,
                 "learning_rate": args.lr, "checkpoint_every": args.checkpoint_every}
    if overrides["seed"] is None and "FAD_SEED" in os.environ:
        overrides["seed"] = int(os.environ["FAD_SEED"])
    tcfg, mcfg = load_run_config(args.config, overrides)
    corpus = load_split(args.data, "train")
    res = train(corpus, tcfg, args.out, mcfg, resume=args.resume, log_every=args.log_every)
    print(res.checkpoint)


def cmd_generate(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    corpus = _corpus_split(args.input_manifest, args.split)
    l = model.cfg.elnet.clip_len
    if corpus.T < 2 * l:
        raise ValueError(f"sequences of {corpus.T} frames are shorter than two clips")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(args)
    preds, rows = [], []
    for s in range(len(corpus)):
        motion, lat, calls = stream_sequence(model, corpus.speaker_frames[s],
                                             corpus.speaker_audio[s], args.steps, [seed, s])
        preds.append(motion)
        rows += [(s, i, f"{t * 1e3:.4f}", c) for i, (t, c) in enumerate(zip(lat, calls))]
    preds = np.stack(preds).astype("<f4")
    (out / "pred.f32").write_bytes(preds.tobytes())
    a, b = target_range(corpus.T, l)
    meta = {"shape": list(preds.shape), "dtype": "<f4", "frames": [a, b], "steps": args.steps,
            "split": args.split, "manifest": str(Path(args.input_manifest).resolve())}
    (out / "pred.f32.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    with open(out / "latency.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sequence", "clip", "latency_ms", "denoiser_calls"])
        w.writerows(rows)
    print(out / "pred.f32")


def _read_pred(path):
    meta = json.loads(Path(str(path) + ".json").read_text())
    raw = Path(path).read_bytes()
    if len(raw) != int(np.prod(meta["shape"])) * 4:
        raise ValueError(f"{path}: size does not match declared shape {meta['shape']}")
    return np.frombuffer(raw, "<f4").reshape(meta["shape"]), meta


def evaluation_table(preds, gt_corpus, train_corpus, frames, k=16, seed=0, max_lag=30):
    """Metric reports for the model predictions and every baseline."""
    a, b = frames
    l = a
    gts = [g[a:b] for g in gt_corpus.listener_motion]
    speakers = [s[a:b] for s in gt_corpus.speaker_motion]
    km = {}
    flat = train_corpus.listener_motion.reshape(-1, train_corpus.listener_motion.shape[-1])
    for vi, view in enumerate(("expression", "rotation")):
        km[view] = kmeans_fit(split_metric_views(flat)[vi], k, seed, view=view)
    reports = evaluate("model", list(preds), gts, speakers, km, max_lag) if preds is not None \
        else []
    mel_cfg = MelConfig()
    train_audio = np.stack([clip_mels(x, train_corpus.T, l, mel_cfg)
                            for x in train_corpus.speaker_audio])
    bank = {"listener_motion": train_corpus.listener_motion,
            "speaker_motion": train_corpus.speaker_motion, "audio_features": train_audio}
    for kind in BASELINES:
        out = []
        for s in range(len(gt_corpus)):
            query = {"speaker_motion": gt_corpus.speaker_motion[s],
                     "audio_features": clip_mels(gt_corpus.speaker_audio[s], gt_corpus.T, l,
                                                 mel_cfg)}
            out.append(run_baseline(kind, bank, query, seed=seed * 100003 + s)[a:b])
        reports += evaluate(kind, out, gts, speakers, km, max_lag)
    return reports


def cmd_eval(args):
    preds, meta = _read_pred(args.pred)
    gt_corpus = _corpus_split(args.gt, meta.get("split", args.split))
    if preds.shape[0] != len(gt_corpus):
        raise ValueError(f"{preds.shape[0]} predicted sequences vs {len(gt_corpus)} ground truth")
    train_corpus = load_split(args.train_data, "train")
    reports = evaluation_table(preds, gt_corpus, train_corpus, tuple(meta["frames"]), args.k,
                               _seed(args))
    csv_path, json_path = write_reports(reports, args.out)
    print(csv_path)
    print(json_path)


def cmd_bench(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    steps_list = [int(s) for s in str(args.steps_list).split(",") if s]
    l = model.cfg.elnet.clip_len
    seed = _seed(args)
    if args.data:
        held = _corpus_split(args.data, "heldout")
    else:
        held = generate_corpus(args.eval_sequences, 8 * l, 4, seed=seed)
    frames = held.speaker_frames[0, :l]
    mels = clip_mels(held.speaker_audio[0], held.T, l, model.cfg.mel)[0]
    rows = bench_inference(model, frames, mels, steps_list, args.repeats, args.warmup, seed)
    a, b = target_range(held.T, l)
    flat_train = held.listener_motion.reshape(-1, held.listener_motion.shape[-1])
    km = kmeans_fit(split_metric_views(flat_train)[0], args.k, seed)
    for row in rows:
        preds = predict_corpus(model, held, row["steps"], seed)
        gts = held.listener_motion[:, a:b]
        row["l2_expression"] = float(np.mean([l2_metric(split_metric_views(p)[0],
                                                        split_metric_views(g)[0])
                                              for p, g in zip(preds, gts)]))
        row["si_expression"] = float(np.mean([shannon_index(split_metric_views(p)[0], km)
                                              for p in preds]))
    base = rows[0]["median_ms"]
    for row in rows:
        row["latency_ratio"] = row["median_ms"] / base
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for row in rows:
        print(f"S={row['steps']:>3} median {row['median_ms']:.2f} ms  p95 {row['p95_ms']:.2f} ms"
              f"  FLOPs {row['flops']:,}  L2(expr) {row['l2_expression']:.3f}")
    print(out)


# -- argument parsing ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fadnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dyad corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--sequences", type=int, default=100)
    g.add_argument("--frames", type=int, default=64)
    g.add_argument("--delay", type=int, default=4)
    g.add_argument("--noise-sigma", type=float, default=0.02)
    g.add_argument("--seed", type=int)
    g.add_argument("--wav", action="store_true", help="also export speaker audio as WAV")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train encoders + ELNet on the train split")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--modality", choices=("audio", "video", "both"))
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--resume")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="stream next-clip listener motion")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input-manifest", required=True)
    s.add_argument("--steps", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=SPLITS, default="test")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="metrics + baselines report")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--train-data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", choices=SPLITS, default="test")
    e.add_argument("--k", type=int, default=16)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="latency / FLOPs / quality sweep over step counts")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--steps-list", default="1,5,10")
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--data")
    b.add_argument("--eval-sequences", type=int, default=10)
    b.add_argument("--k", type=int, default=16)
    b.add_argument("--out", default="bench.csv")
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # one machine-parsable line on every failure path
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
