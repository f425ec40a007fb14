"""Facial-motion coefficient types and clip segmentation of video/audio streams."""
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

FPS = 30
SAMPLE_RATE = 16000
N_EXPRESSION = 50
N_JAW = 3
N_HEAD = 3
MOTION_DIM = N_EXPRESSION + N_JAW + N_HEAD  # 56
ROTATION_SLICE = slice(N_EXPRESSION, MOTION_DIM)


@dataclass(frozen=True)
class MotionFrame:
    """One frame of listener coefficients: 50 expression, 3 jaw, 3 head."""

    expression: np.ndarray
    jaw: np.ndarray
    head: np.ndarray

    def __post_init__(self):
        for name, n in (("expression", N_EXPRESSION), ("jaw", N_JAW), ("head", N_HEAD)):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.expression, self.jaw, self.head])

    @classmethod
    def from_vector(cls, vec) -> "MotionFrame":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (MOTION_DIM,):
            raise ValueError(f"motion vector must have length {MOTION_DIM}")
        return cls(vec[:N_EXPRESSION], vec[N_EXPRESSION:N_EXPRESSION + N_JAW],
                   vec[N_EXPRESSION + N_JAW:])

    def __eq__(self, other):
        if not isinstance(other, MotionFrame):
            return NotImplemented
        return np.array_equal(self.to_vector(), other.to_vector())

    __hash__ = None


@dataclass(frozen=True)
class MotionSequence:
    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a motion sequence needs at least one frame")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)


def flatten_motion(seq: MotionSequence) -> np.ndarray:
    """Stack a sequence into a [T, 56] matrix (expression | jaw | head)."""
    out = np.stack([f.to_vector() for f in seq.frames])
    if not np.all(np.isfinite(out)):
        raise ValueError("motion sequence contains non-finite values")
    return out


def unflatten_motion(m) -> MotionSequence:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != MOTION_DIM:
        raise ValueError(f"expected a [T, {MOTION_DIM}] matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("motion matrix contains non-finite values")
    return MotionSequence(tuple(MotionFrame.from_vector(row) for row in m))


def split_metric_views(m):
    """Split [..., 56] motion into the expression [..., 50] and rotation [..., 6] views."""
    m = np.asarray(m)
    if m.shape[-1] != MOTION_DIM:
        raise ValueError(f"expected {MOTION_DIM} columns, got {m.shape[-1]}")
    return m[..., :N_EXPRESSION], m[..., ROTATION_SLICE]


@dataclass(frozen=True)
class Clip:
    index: int
    video: np.ndarray  # [l, ...frame dims]
    audio: np.ndarray  # samples at 16 kHz

    @property
    def start_frame(self):
        return self.index * len(self.video)


@dataclass(frozen=True)
class ClipStream:
    clips: List[Clip] = field(default_factory=list)
    l: int = 8

    @property
    def n(self):
        return len(self.clips)


def audio_boundary(frame: int) -> int:
    """Sample index of the start of video frame ``frame`` (nearest sample)."""
    return int(round(frame * SAMPLE_RATE / FPS))


def n_audio_samples(n_frames: int) -> int:
    return audio_boundary(n_frames)


def segment_clips(video, audio, l: int) -> ClipStream:
    """Cut frame-aligned clips of ``l`` frames; trailing frames beyond n*l are dropped."""
    video = np.asarray(video)
    audio = np.asarray(audio)
    if l < 1:
        raise ValueError("clip length must be positive")
    T = video.shape[0]
    if T < l:
        raise ValueError("input shorter than one clip")
    if audio.shape[0] < audio_boundary(T) - 1:
        raise ValueError("audio/video misaligned")
    n = T // l
    clips = []
    for i in range(n):
        a0, a1 = audio_boundary(i * l), audio_boundary((i + 1) * l)
        window = audio[a0:a1]
        if window.shape[0] < a1 - a0:  # last clip may be short by one rounding sample
            window = np.concatenate([window, np.zeros(a1 - a0 - window.shape[0], audio.dtype)])
        clips.append(Clip(i, video[i * l:(i + 1) * l], window))
    return ClipStream(clips, l)


def clip_windows(T: int, l: int) -> Sequence[tuple]:
    """(input frames, target frames) ranges for next-clip prediction."""
    n = T // l
    return [((i * l, (i + 1) * l), ((i + 1) * l, (i + 2) * l)) for i in range(n - 1)]
