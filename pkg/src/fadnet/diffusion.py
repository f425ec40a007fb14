"""Noise schedules, forward noising, the conditional reverse process and the
noise-prediction training loss.

Timesteps are 1-based: ``k`` runs over 1..K and ``alpha_bar(0) == 1``.
All schedule arithmetic is float64.
"""
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, mse

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class Schedule:
    K: int
    beta: np.ndarray
    timesteps: tuple = None  # original step index behind each entry (respaced schedules)
    alpha_in: np.ndarray = None  # exact 1 - beta when known (avoids cancellation near ab=0)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (self.K,):
            raise ValueError("beta must have length K")
        if not np.all((beta > 0) & (beta < 1)):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        if self.timesteps is None:
            object.__setattr__(self, "timesteps", tuple(range(1, self.K + 1)))
        alpha = 1.0 - beta if self.alpha_in is None else np.asarray(self.alpha_in, np.float64)
        alpha_bar = np.cumprod(alpha)
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        post_var = beta * (1.0 - prev) / (1.0 - alpha_bar)
        for name, val in (("alpha", alpha), ("alpha_bar", alpha_bar),
                          ("alpha_bar_prev", prev), ("posterior_var", post_var),
                          ("scale", 1.0 / np.sqrt(alpha)),
                          ("eps_coef", beta / np.sqrt(1.0 - alpha_bar)),
                          ("sigma", np.sqrt(post_var))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def check_step(self, k):
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.K):
            raise ValueError(f"timestep out of range 1..{self.K}: {k}")

    def ab(self, k):
        """alpha_bar at (1-based) step ``k``; ``ab(0) == 1``."""
        k = np.asarray(k)
        return np.where(k == 0, 1.0, self.alpha_bar[np.maximum(k, 1) - 1])


def cosine_alpha_bar(k, K, s=COSINE_OFFSET):
    f = np.cos(((np.asarray(k, dtype=np.float64) / K + s) / (1 + s)) * np.pi / 2) ** 2
    f0 = np.cos((s / (1 + s)) * np.pi / 2) ** 2
    return f / f0


def make_schedule(K: int, kind: str = "squared_cosine") -> Schedule:
    if K < 1:
        raise ValueError("K must be at least 1")
    if kind == "squared_cosine":
        ab = cosine_alpha_bar(np.arange(K + 1), K)
        beta = np.minimum(1.0 - ab[1:] / ab[:-1], MAX_BETA)
    elif kind == "linear":
        beta = np.linspace(1e-4 * 1000 / K, 0.02 * 1000 / K, K) if K > 1 else np.array([0.5])
        beta = np.minimum(beta, MAX_BETA)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return Schedule(K, beta)


def respaced_steps(K: int, S: int) -> np.ndarray:
    """S evenly strided timesteps from K down to 1."""
    if not 1 <= S <= K:
        raise ValueError(f"step count must be in 1..{K}, got {S}")
    if S == 1:
        return np.array([K])
    return np.round(np.linspace(K, 1, S)).astype(int)


def respace(sched: Schedule, steps) -> Schedule:
    """Schedule over a decreasing subset of timesteps (identity subset returns ``sched``)."""
    steps = [int(s) for s in steps]
    if steps == list(range(sched.K, 0, -1)):
        return sched
    asc = sorted(steps)
    ab = sched.alpha_bar[np.array(asc) - 1]
    prev = np.concatenate([[1.0], ab[:-1]])
    alpha = ab / prev
    return Schedule(len(asc), 1.0 - alpha, timesteps=tuple(asc), alpha_in=alpha)


def q_sample(x0, k, eps, sched: Schedule):
    """Closed-form forward marginal sqrt(ab_k) x0 + sqrt(1 - ab_k) eps.

    ``k`` may be an int or one step per leading batch item.
    """
    sched.check_step(k)
    x0 = np.asarray(x0)
    ab = sched.ab(np.asarray(k))
    ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    out = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps)
    return out.astype(np.float32) if x0.dtype == np.float32 else out


def reverse_step(xk, k: int, eps_hat, sched: Schedule, noise):
    """x_{k-1} = scale_k (x_k - eps_coef_k eps_hat) + sigma_k noise."""
    sched.check_step(k)
    i = int(k) - 1
    xk = np.asarray(xk, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    out = sched.scale[i] * (xk - sched.eps_coef[i] * eps_hat)
    if sched.sigma[i] > 0:
        out = out + sched.sigma[i] * np.asarray(noise, dtype=np.float64)
    return out


def predict_x0(xk, k: int, eps_hat, sched: Schedule):
    ab = sched.ab(k)
    return (np.asarray(xk, np.float64) - np.sqrt(1.0 - ab) * np.asarray(eps_hat, np.float64)) \
        / np.sqrt(ab)


def _eps_array(out):
    return out.data if isinstance(out, Tensor) else np.asarray(out)


def sample(denoiser, M, S: int, sched: Schedule, rng_seed, shape=None):
    """Draw X^K ~ N(0, I) and run ``S`` respaced reverse steps.

    ``denoiser(x, k, M)`` returns the predicted noise; ``k`` passed to it is
    always an original timestep. ``M`` is [l, d_m] or batched [B, l, d_m];
    the output has the motion shape ``shape`` (default ``M.shape[:-1] + (56,)``).
    With ``S == 1`` this is the direct jump from step K to the clean estimate.
    """
    steps = respaced_steps(sched.K, S)
    sub = respace(sched, steps)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if shape is None:
        m_shape = M.shape if hasattr(M, "shape") else np.shape(M)
        shape = tuple(m_shape[:-1]) + (56,)
    x = rng.standard_normal(shape)
    batched = len(shape) == 3
    for j in range(sub.K, 0, -1):
        k_orig = sub.timesteps[j - 1]
        k_arg = np.full(shape[0], k_orig) if batched else k_orig
        eps_hat = _eps_array(denoiser(x, k_arg, M))
        noise = rng.standard_normal(shape) if sub.sigma[j - 1] > 0 else 0.0
        x = reverse_step(x, j, eps_hat, sub, noise)
    return x


def training_loss(denoiser, x0, M, k, eps, sched: Schedule):
    """MSE between the injected noise and the denoiser's prediction of it."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps, dtype=x0.dtype)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    xk = q_sample(x0, k, eps, sched).astype(x0.dtype, copy=False)
    eps_hat = denoiser(xk, k, M)
    if not isinstance(eps_hat, Tensor):
        eps_hat = Tensor(np.asarray(eps_hat, dtype=x0.dtype))
    if eps_hat.shape != eps.shape:
        raise ValueError(f"denoiser output {eps_hat.shape} does not match {eps.shape}")
    return mse(eps_hat, Tensor(eps))


def sample_timesteps(rng, K: int, n: int) -> np.ndarray:
    """Per-item uniform timesteps in 1..K."""
    return rng.integers(1, K + 1, size=n)
