"""Finite-difference verification of reverse-mode gradients."""
import numpy as np

from .tensor import Tensor


def grad_check(f, x, h=1e-4):
    """Max relative error between the analytic and central-difference gradient.

    ``f`` maps a :class:`Tensor` to a scalar :class:`Tensor`. The check runs in
    float64; the error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    _finite(out.data)
    if out.requires_grad:
        out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)
    _finite(analytic)

    numeric = np.zeros_like(x)
    flat, nflat = x.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x.copy())).data)
        flat[i] = orig - h
        fm = float(f(Tensor(x.copy())).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * h)
    _finite(numeric)
    if x.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max())


def _finite(arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite intermediate during gradient check")
