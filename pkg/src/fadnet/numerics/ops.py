"""Differentiable layers: convolutions, normalization, activations, losses.

Convolutions accept an optional leading batch axis; an unbatched input is
treated as a batch of one and returned unbatched.
"""
import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, add, matmul


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` [N, C_in, L] with ``weight`` [C_out, C_in, k]."""
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects [N,C,L] input and [O,C,k] weight, got "
                         f"{x.shape} and {weight.shape}")
    N, C, L = xd.shape
    O, Cw, k = weight.shape
    if Cw != C:
        raise ValueError(f"conv1d channel mismatch: input has {C}, weight expects {Cw}")
    if stride < 1 or k > L + 2 * padding:
        raise ValueError("conv1d: kernel larger than padded input or stride < 1")
    xd = np.ascontiguousarray(xd, dtype=weight.dtype)
    cols = kernels.im2col1d(xd, k, stride, padding)  # [N, C*k, Lout]
    w2 = weight.data.reshape(O, C * k)
    out = np.matmul(w2, cols)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g3 = g[None] if squeeze else g
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3)
            gx = kernels.col2im1d(gcols, C, L, k, stride, padding)
            if squeeze:
                gx = gx[0]
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return Tensor.from_op(out[0] if squeeze else out, parents, backward)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` [N, C_in, H, W] with ``weight`` [C_out, C_in, kh, kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects [N,C,H,W] input and [O,C,kh,kw] weight, got "
                         f"{x.shape} and {weight.shape}")
    N, C, H, W = xd.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ValueError(f"conv2d channel mismatch: input has {C}, weight expects {Cw}")
    if stride < 1 or kh > H + 2 * padding or kw > W + 2 * padding:
        raise ValueError("conv2d: kernel larger than padded input or stride < 1")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    xd = np.ascontiguousarray(xd, dtype=weight.dtype)
    cols = kernels.im2col2d(xd, kh, kw, stride, padding)  # [N, C*kh*kw, Ho*Wo]
    w2 = weight.data.reshape(O, C * kh * kw)
    out = np.matmul(w2, cols)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
    out = out.reshape(N, O, Ho, Wo)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g3 = (g[None] if squeeze else g).reshape(N, O, Ho * Wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3)
            gx = kernels.col2im2d(gcols, C, H, W, kh, kw, stride, padding)
            if squeeze:
                gx = gx[0]
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return Tensor.from_op(out[0] if squeeze else out, parents, backward)


def group_norm(x, groups, gamma, beta, eps=1e-5, batched=None):
    """Group normalization over ``x`` [N, C, ...] or unbatched [C, ...].

    ``batched=None`` infers the layout: inputs with three or more axes whose
    second axis matches ``gamma`` are batched.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("group_norm eps must be positive")
    C = gamma.shape[0]
    if batched is None:
        batched = x.ndim >= 3 and x.shape[1] == C
    squeeze = not batched
    xd = x.data[None] if squeeze else x.data
    N = xd.shape[0]
    if xd.shape[1] != C:
        raise ValueError(f"group_norm: {xd.shape[1]} channels but gamma has {C}")
    if C % groups:
        raise ValueError(f"group_norm: channels {C} not divisible by groups {groups}")
    spatial = xd.shape[2:]
    xg = xd.reshape(N, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(xd.shape)
    bshape = (1, C) + (1,) * len(spatial)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    m = xg.shape[2]

    def backward(g):
        g4 = g[None] if squeeze else g
        red = (0,) + tuple(range(2, g4.ndim))
        gg = (g4 * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g4.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (g4 * gamma.data.reshape(bshape)).reshape(N, groups, m)
            xh = xhat.reshape(N, groups, m)
            gx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                        - xh * (dxhat * xh).mean(axis=2, keepdims=True))
            gx = gx.reshape(xd.shape)
            if squeeze:
                gx = gx[0]
        return gx, gg, gbeta

    return Tensor.from_op(out[0] if squeeze else out, (x, gamma, beta), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1 - s),))


def silu(x):
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s
    return Tensor.from_op(out, (x,), lambda g: (g * (s + out * (1 - s)),))


def exp(x):
    x = as_tensor(x)
    e = np.exp(x.data)
    return Tensor.from_op(e, (x,), lambda g: (g * e,))


def linear(x, weight, bias=None):
    """Dense layer ``x @ weight.T + bias`` with ``weight`` [out, in]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight in {weight.shape[1]}")
    wt = transpose_2d(weight)
    out = matmul(x if x.ndim >= 2 else x.reshape(1, -1), wt)
    if x.ndim == 1:
        out = out.reshape(-1)
    if bias is not None:
        out = add(out, bias)
    return out


def transpose_2d(w):
    return Tensor.from_op(w.data.T, (w,), lambda g: (g.T,))


def softmax(x, axis=-1):
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for {x.ndim}-d input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(p, (x,), backward)


def downsample1d(x, weight, bias=None):
    """Stride-2 convolution (kernel 3, padding 1) halving the temporal axis."""
    return conv1d(x, weight, bias, stride=2, padding=1)


def upsample_nearest1d(x, factor=2):
    """Nearest-neighbour repeat along the last axis."""
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(g.shape[:-1] + (-1, factor)).sum(axis=-1),)

    return Tensor.from_op(np.repeat(x.data, factor, axis=-1), (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    if not -nd <= axis < nd:
        raise ValueError(f"concat axis {axis} out of range")
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(
            t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax
        ):
            raise ValueError("concat: incompatible shapes "
                             f"{[tuple(t.shape) for t in tensors]}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    out = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor.from_op(out, tuple(tensors), backward)


def mse(a, b):
    """Mean of squared differences over every element."""
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    val = np.asarray((diff * diff).sum() / n, dtype=a.dtype)

    def backward(g):
        gd = (2.0 / n) * g * diff
        return (gd if a.requires_grad else None), (-gd if b.requires_grad else None)

    return Tensor.from_op(val, (a, b), backward)
