"""ELNet: a 1-D convolutional U-Net noise predictor over the clip's time axis."""
from dataclasses import asdict, dataclass

import numpy as np

from .diffusion import make_schedule
from .motion import MOTION_DIM
from .numerics import (
    Module,
    Parameter,
    Tensor,
    as_tensor,
    concat,
    conv1d,
    group_norm,
    he_normal,
    linear,
    silu,
    upsample_nearest1d,
)

PREDICTIONS = ("epsilon", "v")


@dataclass(frozen=True)
class ELNetConfig:
    motion_dim: int = MOTION_DIM
    cond_dim: int = 320
    base_width: int = 64
    depth: int = 2
    groups: int = 8
    time_embed_dim: int = 128
    clip_len: int = 8
    res_blocks: int = 2
    K: int = 100
    schedule: str = "squared_cosine"
    prediction: str = "v"

    @property
    def in_channels(self):
        return self.motion_dim + self.cond_dim

    @property
    def widths(self):
        return [self.base_width * 2 ** i for i in range(self.depth)]

    def validate(self):
        if self.clip_len % (2 ** self.depth):
            raise ValueError(f"clip length {self.clip_len} not divisible by 2**depth")
        if self.base_width % self.groups:
            raise ValueError("base_width must be divisible by groups")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if self.prediction not in PREDICTIONS:
            raise ValueError(f"prediction must be one of {PREDICTIONS}")

    def to_dict(self):
        return asdict(self)


def sinusoidal_embedding(k, dim: int) -> np.ndarray:
    """[sin(k f_i) ..., cos(k f_i) ...] with log-spaced frequencies; [dim] or [B, dim]."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(k, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def timestep_embedding(k, dim: int) -> np.ndarray:
    k_arr = np.asarray(k)
    if np.any(k_arr < 0):
        raise ValueError("timestep must be non-negative")
    return sinusoidal_embedding(k_arr, dim)


def _conv_param(rng, cout, cin, k, dtype):
    return Parameter(he_normal(rng, (cout, cin, k), cin * k, dtype))


class ResBlock(Module):
    def __init__(self, cin, cout, temb_dim, groups, rng, dtype):
        super().__init__()
        self.groups = groups
        self.conv1_w = _conv_param(rng, cout, cin, 3, dtype)
        self.conv1_b = Parameter(np.zeros(cout, dtype))
        self.norm1_g = Parameter(np.ones(cout, dtype))
        self.norm1_b = Parameter(np.zeros(cout, dtype))
        self.temb_w = Parameter((rng.standard_normal((cout, temb_dim)) / np.sqrt(temb_dim))
                                .astype(dtype))
        self.temb_b = Parameter(np.zeros(cout, dtype))
        self.conv2_w = _conv_param(rng, cout, cout, 3, dtype)
        self.conv2_b = Parameter(np.zeros(cout, dtype))
        self.norm2_g = Parameter(np.ones(cout, dtype))
        self.norm2_b = Parameter(np.zeros(cout, dtype))
        if cin != cout:
            self.skip_w = Parameter(he_normal(rng, (cout, cin, 1), cin, dtype))
            self.skip_b = Parameter(np.zeros(cout, dtype))
        self.has_proj = cin != cout

    def __call__(self, x, temb_act):
        h = conv1d(x, self.conv1_w, self.conv1_b, 1, 1)
        h = silu(group_norm(h, self.groups, self.norm1_g, self.norm1_b))
        shift = linear(temb_act, self.temb_w, self.temb_b)  # [B, cout]
        h = h + shift.reshape(shift.shape + (1,))
        h = conv1d(h, self.conv2_w, self.conv2_b, 1, 1)
        h = silu(group_norm(h, self.groups, self.norm2_g, self.norm2_b))
        res = conv1d(x, self.skip_w, self.skip_b) if self.has_proj else x
        return h + res


class ELNet(Module):
    """Noise predictor eps(x_k, k, M) over [B, l, 56] motion with [B, l, d_m] condition."""

    def __init__(self, cfg: ELNetConfig = ELNetConfig(), seed=0, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        td = cfg.time_embed_dim
        self.time1_w = Parameter((rng.standard_normal((td, td)) / np.sqrt(td)).astype(dtype))
        self.time1_b = Parameter(np.zeros(td, dtype))
        self.time2_w = Parameter((rng.standard_normal((td, td)) / np.sqrt(td)).astype(dtype))
        self.time2_b = Parameter(np.zeros(td, dtype))
        w0 = cfg.widths[0]
        self.in_w = _conv_param(rng, w0, cfg.in_channels, 3, dtype)
        self.in_b = Parameter(np.zeros(w0, dtype))

        c = w0
        self.down = []
        for lvl, w in enumerate(cfg.widths):
            blocks = []
            for j in range(cfg.res_blocks):
                blk = ResBlock(c, w, td, cfg.groups, rng, dtype)
                setattr(self, f"down{lvl}_res{j}", blk)
                blocks.append(blk)
                c = w
            setattr(self, f"down{lvl}_ds_w", _conv_param(rng, c, c, 3, dtype))
            setattr(self, f"down{lvl}_ds_b", Parameter(np.zeros(c, dtype)))
            self.down.append(blocks)
        self.mid = []
        for j in range(cfg.res_blocks):
            blk = ResBlock(c, c, td, cfg.groups, rng, dtype)
            setattr(self, f"mid_res{j}", blk)
            self.mid.append(blk)
        self.up = {}
        for lvl in reversed(range(cfg.depth)):
            w = cfg.widths[lvl]
            setattr(self, f"up{lvl}_us_w", _conv_param(rng, c, c, 3, dtype))
            setattr(self, f"up{lvl}_us_b", Parameter(np.zeros(c, dtype)))
            blocks = []
            cin = c + w
            for j in range(cfg.res_blocks):
                blk = ResBlock(cin, w, td, cfg.groups, rng, dtype)
                setattr(self, f"up{lvl}_res{j}", blk)
                blocks.append(blk)
                cin = w
            c = w
            self.up[lvl] = blocks
        self.out_norm_g = Parameter(np.ones(c, dtype))
        self.out_norm_b = Parameter(np.zeros(c, dtype))
        self.out_w = Parameter(he_normal(rng, (cfg.motion_dim, c, 1), c, dtype) * 0.1)
        self.out_b = Parameter(np.zeros(cfg.motion_dim, dtype))
        self.register_buffer("cond_mean", np.zeros(cfg.cond_dim, dtype))
        self.register_buffer("cond_std", np.ones(cfg.cond_dim, dtype))
        sched = make_schedule(cfg.K, cfg.schedule)
        self._sqrt_ab = np.sqrt(sched.alpha_bar)
        self._sqrt_1mab = np.sqrt(1.0 - sched.alpha_bar)

    def set_condition_stats(self, mean, std):
        std = np.where(np.asarray(std) > 1e-6, std, 1.0)
        self.register_buffer("cond_mean", np.asarray(mean, self.dtype))
        self.register_buffer("cond_std", np.asarray(std, self.dtype))

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = dtype
        return self

    def __call__(self, xk, k, M, ablate_skips=False):
        return self.denoise(xk, k, M, ablate_skips=ablate_skips)

    def denoise(self, xk, k, M, ablate_skips=False):
        """Predicted noise with the shape of ``xk`` ([l, 56] or [B, l, 56])."""
        cfg = self.cfg
        x_in = np.asarray(xk.data if isinstance(xk, Tensor) else xk)
        M = as_tensor(M)
        squeeze = x_in.ndim == 2
        if squeeze:
            x_in = x_in[None]
            M = M.reshape((1,) + M.shape)
        B, L, D = x_in.shape
        if D != cfg.motion_dim or L != cfg.clip_len:
            raise ValueError(f"expected motion [*, {cfg.clip_len}, {cfg.motion_dim}], "
                             f"got {x_in.shape}")
        if M.shape != (B, L, cfg.cond_dim):
            raise ValueError(f"expected condition [{B}, {L}, {cfg.cond_dim}], got {M.shape}")
        k_arr = np.broadcast_to(np.asarray(k), (B,))
        if np.any(k_arr < 1) or np.any(k_arr > cfg.K):
            raise ValueError(f"timestep out of range 1..{cfg.K}")
        dt = self.dtype

        if M.dtype != dt:
            M = Tensor(M.data.astype(dt)) if not M.requires_grad else M
        m_norm = (M - self.cond_mean) * (1.0 / self.cond_std)
        h = concat([Tensor(x_in.astype(dt)), m_norm], axis=-1).transpose(0, 2, 1)

        temb = Tensor(timestep_embedding(k_arr, cfg.time_embed_dim).astype(dt))
        temb = linear(silu(linear(temb, self.time1_w, self.time1_b)), self.time2_w, self.time2_b)
        t_act = silu(temb)

        h = conv1d(h, self.in_w, self.in_b, 1, 1)
        skips = []
        for lvl, blocks in enumerate(self.down):
            for blk in blocks:
                h = blk(h, t_act)
            skips.append(h)
            h = conv1d(h, getattr(self, f"down{lvl}_ds_w"), getattr(self, f"down{lvl}_ds_b"), 2, 1)
        for blk in self.mid:
            h = blk(h, t_act)
        for lvl in reversed(range(cfg.depth)):
            h = upsample_nearest1d(h)
            h = conv1d(h, getattr(self, f"up{lvl}_us_w"), getattr(self, f"up{lvl}_us_b"), 1, 1)
            skip = skips[lvl]
            if ablate_skips:
                skip = Tensor(np.zeros(skip.shape, dt))
            h = concat([h, skip], axis=1)
            for blk in self.up[lvl]:
                h = blk(h, t_act)
        h = silu(group_norm(h, cfg.groups, self.out_norm_g, self.out_norm_b))
        raw = conv1d(h, self.out_w, self.out_b).transpose(0, 2, 1)  # [B, L, 56]

        if cfg.prediction == "epsilon":
            eps = raw
        else:
            # head predicts v = sqrt(ab) eps - sqrt(1 - ab) x0; convert to eps
            out_dt = np.result_type(x_in.dtype, dt)
            sab = self._sqrt_ab[k_arr - 1].reshape(B, 1, 1)
            s1ab = self._sqrt_1mab[k_arr - 1].reshape(B, 1, 1)
            if out_dt != dt and not raw.requires_grad:
                raw = Tensor(raw.data.astype(out_dt))
            eps = raw * sab.astype(raw.dtype) + Tensor((s1ab * x_in).astype(raw.dtype))
        return eps.reshape(eps.shape[1:]) if squeeze else eps


# -- FLOPs accounting -----------------------------------------------------------

def elnet_layer_plan(cfg: ELNetConfig):
    """Every multiply-add layer of one denoiser pass: (name, kind, fan_in, fan_out, positions)."""
    cfg.validate()
    td = cfg.time_embed_dim
    plan = [("time1", "dense", td, td, 1), ("time2", "dense", td, td, 1)]
    L = cfg.clip_len
    w0 = cfg.widths[0]
    plan.append(("in", "conv", cfg.in_channels * 3, w0, L))

    def res(name, cin, cout, length):
        rows = [(f"{name}.conv1", "conv", cin * 3, cout, length),
                (f"{name}.temb", "dense", td, cout, 1),
                (f"{name}.conv2", "conv", cout * 3, cout, length)]
        if cin != cout:
            rows.append((f"{name}.skip", "conv", cin, cout, length))
        return rows

    c = w0
    for lvl, w in enumerate(cfg.widths):
        for j in range(cfg.res_blocks):
            plan += res(f"down{lvl}_res{j}", c, w, L)
            c = w
        L //= 2
        plan.append((f"down{lvl}_ds", "conv", c * 3, c, L))
    for j in range(cfg.res_blocks):
        plan += res(f"mid_res{j}", c, c, L)
    for lvl in reversed(range(cfg.depth)):
        w = cfg.widths[lvl]
        L *= 2
        plan.append((f"up{lvl}_us", "conv", c * 3, c, L))
        cin = c + w
        for j in range(cfg.res_blocks):
            plan += res(f"up{lvl}_res{j}", cin, w, L)
            cin = w
        c = w
    plan.append(("out", "conv", c, cfg.motion_dim, L))
    return plan


def visual_layer_plan(vcfg, l: int):
    r = vcfg.input_resolution
    c = vcfg.image_channels
    plan = []
    for i, w in enumerate(vcfg.widths):
        r //= 2
        plan.append((f"conv{i}", "conv", c * 9, w, r * r * l))
        c = w
    plan.append(("head", "conv", c, vcfg.head_channels, r * r * l))
    plan.append(("spatial_softmax", "matmul", r * r, 2, vcfg.head_channels * l))
    return plan


def count_flops(cfg: ELNetConfig = ELNetConfig(), vcfg=None, mel_cfg=None, steps: int = 1,
                modality: str = "both"):
    """Analytic FLOPs (2 x multiply-adds) for one clip: encoders + ``steps`` denoiser passes."""
    from .perception import MelConfig, VisualEncoderConfig

    vcfg = vcfg or VisualEncoderConfig()
    mel_cfg = mel_cfg or MelConfig()
    denoiser = sum(2 * fi * fo * n for _, _, fi, fo, n in elnet_layer_plan(cfg))
    visual = 0
    if modality in ("video", "both"):
        visual = sum(2 * fi * fo * n for _, _, fi, fo, n in visual_layer_plan(vcfg, cfg.clip_len))
    audio = 0
    if modality in ("audio", "both"):
        audio = 2 * (mel_cfg.fft_size // 2 + 1) * mel_cfg.n_mels * cfg.clip_len
    return {
        "visual": visual,
        "audio": audio,
        "denoiser_pass": denoiser,
        "steps": steps,
        "total": visual + audio + steps * denoiser,
    }
