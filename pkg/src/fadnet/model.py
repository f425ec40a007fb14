"""The end-to-end listener generator: perception encoders + ELNet + diffusion sampler,
and the checkpoint file format."""
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import make_schedule, sample, training_loss
from .elnet import ELNet, ELNetConfig
from .motion import MOTION_DIM
from .numerics import Module, Tensor, as_tensor, no_grad
from .perception import MODALITIES, MelConfig, VisualEncoder, VisualEncoderConfig, fuse

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    elnet: ELNetConfig = field(default_factory=ELNetConfig)
    visual: VisualEncoderConfig = field(default_factory=VisualEncoderConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    modality: str = "both"

    def validate(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        self.elnet.validate()
        self.visual.validate()
        self.mel.validate()
        if self.elnet.cond_dim != self.visual.output_dim + self.mel.n_mels:
            raise ValueError("ELNet cond_dim must equal d_v + d_a")

    def to_dict(self):
        d = asdict(self)
        d["visual"]["widths"] = list(self.visual.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        v = dict(d.get("visual", {}))
        if "widths" in v:
            v["widths"] = tuple(v["widths"])
        return cls(elnet=ELNetConfig(**d.get("elnet", {})), visual=VisualEncoderConfig(**v),
                   mel=MelConfig(**d.get("mel", {})), modality=d.get("modality", "both"))


class ListenerModel(Module):
    """Speaker clip (frames + log-mels) -> next-clip listener motion."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed=0, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.visual = VisualEncoder(cfg.visual, seed=seed, dtype=dtype)
        self.elnet = ELNet(cfg.elnet, seed=seed + 1, dtype=dtype)
        self.register_buffer("motion_mean", np.zeros(MOTION_DIM, dtype))
        self.register_buffer("motion_std", np.ones(MOTION_DIM, dtype))
        self.schedule = make_schedule(cfg.elnet.K, cfg.elnet.schedule)

    def set_normalizers(self, motion, mels):
        """Fit per-coefficient motion and per-mel-bin audio standardization."""
        motion = np.asarray(motion, np.float64).reshape(-1, MOTION_DIM)
        std = motion.std(0)
        self.register_buffer("motion_mean", motion.mean(0).astype(self.dtype))
        self.register_buffer("motion_std", np.where(std > 1e-6, std, 1.0).astype(self.dtype))
        mels = np.asarray(mels, np.float64).reshape(-1, self.cfg.mel.n_mels)
        dv = self.cfg.visual.output_dim
        mean = np.zeros(self.cfg.elnet.cond_dim)
        sd = np.ones(self.cfg.elnet.cond_dim)
        mean[dv:], sd[dv:] = mels.mean(0), mels.std(0)
        self.elnet.set_condition_stats(mean, sd)

    def normalize(self, motion):
        return (np.asarray(motion) - self.motion_mean) / self.motion_std

    def denormalize(self, x):
        return np.asarray(x) * self.motion_std + self.motion_mean

    def encode(self, frames, mels):
        """Condition embedding M for a batch of clips.

        ``frames`` is [B, l, C, R, R] (may be None for audio-only models) and
        ``mels`` is [B, l, n_mels]; returns a [B, l, d_v + d_a] tensor.
        """
        cfg = self.cfg
        mels = as_tensor(np.asarray(mels, dtype=self.dtype))
        B, L = mels.shape[:2]
        if cfg.modality == "audio" or frames is None:
            if cfg.modality != "audio":
                raise ValueError(f"modality {cfg.modality!r} needs video frames")
            video = Tensor(np.zeros((B, L, cfg.visual.output_dim), self.dtype))
        else:
            frames = np.asarray(frames, dtype=self.dtype)
            if frames.shape[:2] != (B, L):
                raise ValueError(f"frames {frames.shape[:2]} and mels {(B, L)} disagree")
            flat = frames.reshape((B * L,) + frames.shape[2:])
            video = self.visual(flat).reshape(B, L, cfg.visual.output_dim)
        return fuse(video, mels, cfg.modality)

    def loss(self, frames, mels, target, k, eps):
        """Noise-prediction loss for a batch of (clip, next-clip motion) pairs."""
        x0 = self.normalize(target).astype(self.dtype)
        return training_loss(self.elnet.denoise, x0, self.encode(frames, mels), k, eps,
                             self.schedule)

    def generate(self, frames, mels, steps=1, seed=0, denoiser=None):
        """Sample listener motion [B, l, 56] in original coefficient units."""
        with no_grad():
            M = self.encode(frames, mels)
            B, L = M.shape[:2]
            den = denoiser or self.elnet.denoise
            x = sample(den, M, steps, self.schedule, seed, shape=(B, L, MOTION_DIM))
        return self.denormalize(x)


# -- checkpoint format ----------------------------------------------------------
# <u64 LE header length> <UTF-8 JSON header> <little-endian float32 blob>

def save_checkpoint(path, model: ListenerModel, optimizer_state=None, step=0, extra=None):
    """Write weights (+ optional optimizer moments) deterministically."""
    entries = list(model.state_dict().items())
    if optimizer_state:
        entries += [(f"optim.{k}", v) for k, v in optimizer_state.items()]
    manifest, chunks, offset = [], [], 0
    for name, arr in entries:
        a = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite values in {name}")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "step": int(step),
        "extra": extra or {},
        "tensors": manifest,
        "blob_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for c in chunks:
            f.write(c)
    tmp.replace(path)


def read_checkpoint(path):
    """Return (header, {name: float32 array}) after validating version and sizes."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n].decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    blob = raw[8 + n:]
    if len(blob) != header["blob_bytes"]:
        raise ValueError(f"{path}: blob is {len(blob)} bytes, header declares "
                         f"{header['blob_bytes']}")
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=t["offset"])
        arrays[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)
    return header, arrays


def load_checkpoint(path, model: ListenerModel = None):
    """Load weights into ``model`` (built from the stored config when omitted).

    Returns (model, optimizer_state, header).
    """
    header, arrays = read_checkpoint(path)
    if model is None:
        model = ListenerModel(ModelConfig.from_dict(header["config"]))
    weights = {k: v for k, v in arrays.items() if not k.startswith("optim.")}
    optim = {k[len("optim."):]: v for k, v in arrays.items() if k.startswith("optim.")}
    model.load_state_dict(weights)
    return model, optim, header
