"""Speaker perception: log-mel audio features, a strided conv visual encoder with
a spatial-softmax head, and frame-aligned fusion into the condition embedding.
"""
import json
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .motion import FPS, SAMPLE_RATE, audio_boundary, n_audio_samples
from .numerics import Module, Parameter, Tensor, as_tensor, concat, conv2d, he_normal, relu, softmax
from .numerics.tensor import matmul

MODALITIES = ("audio", "video", "both")


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = SAMPLE_RATE
    n_mels: int = 128
    fft_size: int = 1024
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    fps: int = FPS

    def validate(self):
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= Nyquist")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_points(cfg: MelConfig) -> np.ndarray:
    """The n_mels + 2 triangle corner frequencies in Hz (HTK mel scale)."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Unnormalized triangular filters, [n_mels, fft_size // 2 + 1]."""
    pts = mel_points(cfg)
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    lo, center, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


_FB_CACHE = {}


def _filterbank(cfg):
    fb = _FB_CACHE.get(cfg)
    if fb is None:
        fb = _FB_CACHE[cfg] = mel_filterbank(cfg)
    return fb


def frame_centers(n_frames: int, cfg: MelConfig) -> np.ndarray:
    """Sample index at the midpoint of each video frame."""
    t = np.arange(n_frames)
    hop = cfg.sample_rate / cfg.fps
    return np.round(t * hop + hop / 2).astype(np.int64)


def mel_spectrogram(audio, cfg: MelConfig = MelConfig(), n_frames: int = 8) -> np.ndarray:
    """Log-mel features with one row per video frame, [n_frames, n_mels]."""
    cfg.validate()
    audio = np.asarray(audio, dtype=np.float64)
    need = int(round(n_frames * cfg.sample_rate / cfg.fps))
    if audio.ndim != 1 or audio.shape[0] < need - 1:
        raise ValueError(f"audio too short: {audio.shape[0]} samples for {n_frames} frames")
    half = cfg.fft_size // 2
    padded = np.pad(audio, (half, half + cfg.fft_size))
    starts = frame_centers(n_frames, cfg)  # window start in padded coordinates
    idx = starts[:, None] + np.arange(cfg.fft_size)[None, :]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(cfg.fft_size) / cfg.fft_size)
    spec = np.fft.rfft(padded[idx] * window, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ _filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor))


# -- visual pathway -----------------------------------------------------------

@dataclass(frozen=True)
class VisualEncoderConfig:
    input_resolution: int = 96
    image_channels: int = 1
    widths: Tuple[int, ...] = (16, 32, 64, 96)
    head_channels: int = 96
    output_dim: int = 192
    temperature: float = 1.0

    def validate(self):
        if self.output_dim != 2 * self.head_channels:
            raise ValueError("output_dim must equal 2 * head_channels")
        if self.input_resolution % (2 ** len(self.widths)):
            raise ValueError("input resolution must be divisible by 2**len(widths)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def feature_resolution(self):
        return self.input_resolution // 2 ** len(self.widths)


def _grid(n):
    return np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)


def spatial_softmax(featmap, temperature: float = 1.0):
    """Expected (x, y) location under a per-channel softmax over cells.

    ``featmap`` is [C, H, W] or [N, C, H, W]; output is [2C] or [N, 2C] laid out
    as x0, y0, x1, y1, ... with coordinates in [-1, 1].
    """
    featmap = as_tensor(featmap)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(featmap.data)):
        raise ValueError("spatial_softmax input contains non-finite values")
    squeeze = featmap.ndim == 3
    if squeeze:
        featmap = featmap.reshape((1,) + featmap.shape)
    N, C, H, W = featmap.shape
    ys, xs = np.meshgrid(_grid(H), _grid(W), indexing="ij")
    pos = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(featmap.dtype)  # [H*W, 2]
    flat = featmap.reshape(N, C, H * W)
    if temperature != 1.0:
        flat = flat * (1.0 / temperature)
    p = softmax(flat, axis=-1)
    out = matmul(p, Tensor(pos)).reshape(N, 2 * C)
    return out.reshape(2 * C) if squeeze else out


class VisualEncoder(Module):
    """Strided 3x3 conv stack + 1x1 projection head + spatial softmax."""

    def __init__(self, cfg: VisualEncoderConfig = VisualEncoderConfig(), seed=0,
                 dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c_in = cfg.image_channels
        self.n_stages = len(cfg.widths)
        for i, w in enumerate(cfg.widths):
            setattr(self, f"conv{i}_w", Parameter(he_normal(rng, (w, c_in, 3, 3), c_in * 9, dtype)))
            setattr(self, f"conv{i}_b", Parameter(np.zeros(w, dtype)))
            c_in = w
        self.head_w = Parameter(
            (rng.standard_normal((cfg.head_channels, c_in, 1, 1)) / np.sqrt(c_in)).astype(dtype))
        self.head_b = Parameter(np.zeros(cfg.head_channels, dtype))

    def feature_map(self, frames):
        h = as_tensor(frames)
        for i in range(self.n_stages):
            h = relu(conv2d(h, getattr(self, f"conv{i}_w"), getattr(self, f"conv{i}_b"),
                            stride=2, padding=1))
        return conv2d(h, self.head_w, self.head_b)

    def __call__(self, frames):
        """[N, C_img, R, R] frames -> [N, output_dim] keypoint features."""
        return spatial_softmax(self.feature_map(frames), self.cfg.temperature)


def encode_visual(frames, encoder: VisualEncoder):
    """Encode each of the ``l`` frames of a clip independently, [l, d_v]."""
    frames = as_tensor(frames)
    r = encoder.cfg.input_resolution
    if frames.ndim != 4 or frames.shape[2:] != (r, r):
        raise ValueError(f"expected [l, C, {r}, {r}] frames, got {frames.shape}")
    return encoder(frames)


# -- fusion -------------------------------------------------------------------

def fuse(video_feats, audio_feats, modality: str = "both"):
    """Concatenate per-frame video and audio features; the absent modality is zeroed.

    Works on [l, d] or batched [B, l, d] inputs.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
    video_feats, audio_feats = as_tensor(video_feats), as_tensor(audio_feats)
    if video_feats.shape[:-1] != audio_feats.shape[:-1]:
        raise ValueError(f"row-count mismatch: video {video_feats.shape}, "
                         f"audio {audio_feats.shape}")
    dtype = video_feats.dtype
    if audio_feats.dtype != dtype:
        audio_feats = Tensor(audio_feats.data.astype(dtype)) if not audio_feats.requires_grad \
            else audio_feats
    if modality == "audio":
        video_feats = Tensor(np.zeros(video_feats.shape, dtype))
    elif modality == "video":
        audio_feats = Tensor(np.zeros(audio_feats.shape, dtype))
    return concat([video_feats, audio_feats], axis=-1)


# -- file formats -------------------------------------------------------------

def write_wav(path, audio, sample_rate=SAMPLE_RATE):
    """16-bit PCM mono WAV."""
    pcm = np.clip(np.round(np.asarray(audio) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_audio(path, sample_rate=SAMPLE_RATE) -> np.ndarray:
    """Read 16-bit PCM mono WAV or raw little-endian float32 samples."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise ValueError("expected 16-bit PCM mono WAV")
            if w.getframerate() != sample_rate:
                raise ValueError(f"expected {sample_rate} Hz audio, got {w.getframerate()}")
            pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
        return pcm.astype(np.float32) / 32768.0
    return np.fromfile(path, dtype="<f4")


def write_frames(path, frames):
    """Raw float32 frame blob plus a ``.json`` sidecar holding [T, C, H, W]."""
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise ValueError("frames must be [T, C, H, W]")
    Path(path).write_bytes(frames.tobytes())
    Path(str(path) + ".json").write_text(json.dumps({"shape": list(frames.shape), "dtype": "<f4"}))


def read_frames(path) -> np.ndarray:
    meta = json.loads(Path(str(path) + ".json").read_text())
    shape = tuple(meta["shape"])
    raw = Path(path).read_bytes()
    if len(raw) != int(np.prod(shape)) * 4:
        raise ValueError(f"{path}: {len(raw)} bytes does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def clip_mels(audio, T: int, l: int, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Log-mel features for every clip of a sequence, [n, l, n_mels]."""
    n = T // l
    if np.asarray(audio).shape[0] < n_audio_samples(T) - 1:
        raise ValueError("audio/video misaligned")
    out = np.empty((n, l, cfg.n_mels))
    for i in range(n):
        a0, a1 = audio_boundary(i * l), audio_boundary((i + 1) * l)
        out[i] = mel_spectrogram(audio[a0:a1], cfg, l)
    return out
