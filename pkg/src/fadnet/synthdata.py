"""Deterministic synthetic dyads with a known speaker -> listener dependency.

A smooth latent ``z_t`` drives every speaker channel: the speaker's own motion
(affine in ``z``), a rendered Gaussian blob (position from ``z[0:2]``, size from
``z[2]``) and a tone bank whose per-tone log power is linear in ``z[2:8]``. The
listener reacts ``delay`` frames later through a fixed coupling matrix. Video
and audio therefore carry overlapping but distinct parts of ``z``.
"""
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .motion import FPS, MOTION_DIM, N_EXPRESSION, SAMPLE_RATE, n_audio_samples
from .perception import write_wav

MANIFEST_VERSION = 1
RESOLUTION = 96
TONES_HZ = (250.0, 520.0, 1100.0, 1900.0, 3100.0, 4700.0)
ROTATION_GAIN = 0.3  # jaw/head coefficients move less than expression
BURN_IN = 64


@dataclass(frozen=True)
class DyadParams:
    seed: int = 0
    T: int = 64
    delay: int = 4
    smoothing: float = 0.6
    noise_sigma: float = 0.02
    latent_dim: int = 8
    corpus_seed: int = 0  # seeds the maps shared across a corpus

    def validate(self):
        if not 0 < self.delay < self.T:
            raise ValueError(f"need 0 < delay < T, got delay={self.delay}, T={self.T}")
        if not 0 < self.smoothing < 1:
            raise ValueError("smoothing must lie in (0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.latent_dim < 8:
            raise ValueError("latent_dim must be at least 8 (video and audio channels)")


@dataclass(frozen=True)
class DyadMaps:
    coupling: np.ndarray  # [56, latent_dim] listener reaction
    speaker_map: np.ndarray  # [56, latent_dim]
    speaker_bias: np.ndarray  # [56]


def corpus_maps(corpus_seed: int, latent_dim: int = 8) -> DyadMaps:
    rng = np.random.default_rng([corpus_seed, 0xC0FFEE])
    gain = np.ones((MOTION_DIM, 1))
    gain[N_EXPRESSION:] = ROTATION_GAIN
    coupling = rng.standard_normal((MOTION_DIM, latent_dim)) / np.sqrt(latent_dim) * gain
    speaker = rng.standard_normal((MOTION_DIM, latent_dim)) / np.sqrt(latent_dim) * gain
    bias = 0.1 * rng.standard_normal(MOTION_DIM)
    return DyadMaps(coupling, speaker, bias)


def _ema(x, a):
    out = np.empty_like(x)
    acc = x[0]
    for t in range(x.shape[0]):
        acc = a * acc + (1 - a) * x[t]
        out[t] = acc
    return out


def latent_trajectory(rng, n: int, dim: int, smoothing: float) -> np.ndarray:
    """Unit-scale smooth latent: sinusoid mixture + jitter, EMA-smoothed. [n, dim]"""
    t = np.arange(n)[:, None, None]
    freqs = rng.uniform(1 / 90, 1 / 25, size=(1, dim, 3))  # cycles per frame
    phase = rng.uniform(0, 2 * np.pi, size=(1, dim, 3))
    amp = np.sqrt(2 / 3)
    z = (amp * np.sin(2 * np.pi * freqs * t + phase)).sum(-1)
    z = z + 0.1 * rng.standard_normal(z.shape)
    return _ema(z, smoothing)


def render_blob(z: np.ndarray, res: int = RESOLUTION) -> np.ndarray:
    """Grayscale frames [T, 1, res, res] of a Gaussian blob driven by z[:, 0:3]."""
    c = (res - 1) / 2
    cx = c + 0.3 * res * np.tanh(z[:, 0] / 2)
    cy = c + 0.3 * res * np.tanh(z[:, 1] / 2)
    sigma = 0.07 * res * np.exp(0.3 * np.clip(z[:, 2], -3, 3))
    g = np.arange(res, dtype=np.float64)
    gx = np.exp(-((g[None, :] - cx[:, None]) ** 2) / (2 * sigma[:, None] ** 2))
    gy = np.exp(-((g[None, :] - cy[:, None]) ** 2) / (2 * sigma[:, None] ** 2))
    return (gy[:, :, None] * gx[:, None, :])[:, None].astype(np.float32)


def synth_audio(z: np.ndarray, rng, T: int) -> np.ndarray:
    """Tone bank: tone j's amplitude is 0.05 * exp(z[:, 2 + j] / 2), so its log power is linear in z."""
    n = n_audio_samples(T)
    ts = np.arange(n) / SAMPLE_RATE
    frame_t = (np.arange(T) + 0.5) / FPS
    out = np.zeros(n)
    for j, f in enumerate(TONES_HZ):
        amp = np.interp(ts, frame_t, 0.05 * np.exp(0.5 * np.clip(z[:, 2 + j], -3, 3)))
        out += amp * np.sin(2 * np.pi * f * ts + rng.uniform(0, 2 * np.pi))
    out += 1e-3 * rng.standard_normal(n)
    return out.astype(np.float32)


def generate_dyad(params: DyadParams, maps: DyadMaps = None):
    """(speaker_frames [T,1,96,96], speaker_audio [n_samples], speaker_motion [T,56],
    listener_motion [T,56]), all float32 and deterministic given the params."""
    params.validate()
    maps = maps or corpus_maps(params.corpus_seed, params.latent_dim)
    rng = np.random.default_rng([params.corpus_seed, params.seed])
    T, d = params.T, params.delay
    z_all = latent_trajectory(rng, BURN_IN + d + T, params.latent_dim, params.smoothing)
    z = z_all[BURN_IN + d:]  # speaker-time latent
    z_lag = z_all[BURN_IN:BURN_IN + T]  # z_{t-d}
    speaker_motion = z @ maps.speaker_map.T + maps.speaker_bias
    noise = rng.standard_normal((T, MOTION_DIM)) * params.noise_sigma
    listener = z_lag @ maps.coupling.T + _ema(noise, params.smoothing)
    frames = render_blob(z)
    audio = synth_audio(z, rng, T)
    return (frames, audio, speaker_motion.astype(np.float32), listener.astype(np.float32))


def generate_latent(params: DyadParams) -> np.ndarray:
    """The speaker-time latent z used by :func:`generate_dyad` (for analysis/tests)."""
    rng = np.random.default_rng([params.corpus_seed, params.seed])
    z_all = latent_trajectory(rng, BURN_IN + params.delay + params.T, params.latent_dim,
                              params.smoothing)
    return z_all[BURN_IN + params.delay:], z_all[BURN_IN:BURN_IN + params.T]


# -- corpora -------------------------------------------------------------------

FIELDS = ("speaker_frames", "speaker_audio", "speaker_motion", "listener_motion")


@dataclass
class Corpus:
    speaker_frames: np.ndarray  # [N, T, 1, 96, 96]
    speaker_audio: np.ndarray  # [N, n_samples]
    speaker_motion: np.ndarray  # [N, T, 56]
    listener_motion: np.ndarray  # [N, T, 56]
    seeds: list
    params: dict

    def __len__(self):
        return len(self.seeds)

    @property
    def T(self):
        return self.listener_motion.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Corpus(*(getattr(self, f)[idx] for f in FIELDS),
                      seeds=[self.seeds[i] for i in idx], params=dict(self.params))


def generate_corpus(n_sequences: int, T: int = 64, delay: int = 4, seed: int = 0,
                    noise_sigma: float = 0.02, smoothing: float = 0.6) -> Corpus:
    if n_sequences < 1:
        raise ValueError("need at least one sequence")
    base = DyadParams(seed=0, T=T, delay=delay, smoothing=smoothing,
                      noise_sigma=noise_sigma, corpus_seed=seed)
    base.validate()
    maps = corpus_maps(seed, base.latent_dim)
    outs = [generate_dyad(DyadParams(**{**asdict(base), "seed": i}), maps)
            for i in range(n_sequences)]
    arrays = [np.stack([o[j] for o in outs]) for j in range(4)]
    params = asdict(base)
    params.pop("seed")
    return Corpus(*arrays, seeds=list(range(n_sequences)), params=params)


def split_indices(n: int, seed: int = 0, fractions=(0.7, 0.2, 0.1)):
    """Disjoint train/val/test sequence indices (seed-stable)."""
    perm = np.random.default_rng([seed, 0x5117]).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


# -- on-disk format --------------------------------------------------------------

def write_dataset(corpus: Corpus, out_dir) -> Path:
    """Write one little-endian float32 blob per field plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blobs = {}
    for name in FIELDS:
        arr = np.ascontiguousarray(getattr(corpus, name), dtype="<f4")
        fname = f"{name}.f32"
        (out_dir / fname).write_bytes(arr.tobytes())
        blobs[name] = {"path": fname, "shape": list(arr.shape), "dtype": "<f4",
                       "bytes": int(arr.nbytes)}
    train, val, test = split_indices(len(corpus), corpus.params.get("corpus_seed", 0))
    manifest = {
        "version": MANIFEST_VERSION,
        "n_sequences": len(corpus),
        "frames": corpus.T,
        "fps": FPS,
        "sample_rate": SAMPLE_RATE,
        "params": corpus.params,
        "sequence_seeds": list(map(int, corpus.seeds)),
        "split": {"train": train.tolist(), "val": val.tolist(), "test": test.tolist()},
        "blobs": blobs,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {manifest.get('version')!r}")
    for name in FIELDS:
        if name not in manifest["blobs"]:
            raise ValueError(f"{path}: manifest lacks blob {name!r}")
        b = manifest["blobs"][name]
        expected = int(np.prod(b["shape"])) * 4
        blob = path.parent / b["path"]
        if not blob.exists():
            raise ValueError(f"blob {name} missing: {blob}")
        actual = blob.stat().st_size
        if actual != expected or b.get("bytes", expected) != expected:
            raise ValueError(f"blob {name} size mismatch: {actual} bytes on disk, "
                             f"{expected} declared by shape {b['shape']}")
    manifest["_root"] = str(path.parent)
    return manifest


def read_dataset(path) -> Corpus:
    manifest = read_manifest(path)
    root = Path(manifest["_root"])
    arrays = []
    for name in FIELDS:
        b = manifest["blobs"][name]
        arrays.append(np.fromfile(root / b["path"], dtype="<f4").reshape(b["shape"]))
    return Corpus(*arrays, seeds=manifest["sequence_seeds"], params=manifest["params"])


def load_split(path, which: str) -> Corpus:
    manifest = read_manifest(path)
    return read_dataset(path).subset(manifest["split"][which])


def export_wavs(corpus: Corpus, out_dir):
    """One 16-bit PCM WAV per sequence's speaker audio."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, audio in enumerate(corpus.speaker_audio):
        p = out_dir / f"speaker_{i:04d}.wav"
        write_wav(p, audio)
        paths.append(p)
    return paths


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
