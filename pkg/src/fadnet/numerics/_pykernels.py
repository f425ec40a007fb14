"""Pure-numpy im2col / col2im, used when the compiled extension is absent."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col1d(x, k, stride, pad):
    N, C, L = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride]  # [N, C, Lout, k]
    Lout = win.shape[2]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(N, C * k, Lout)


def col2im1d(cols, C, L, k, stride, pad):
    N, _, Lout = cols.shape
    cols = cols.reshape(N, C, k, Lout)
    out = np.zeros((N, C, L + 2 * pad), dtype=cols.dtype)
    for j in range(k):
        out[:, :, j:j + stride * Lout:stride] += cols[:, :, j, :]
    return np.ascontiguousarray(out[:, :, pad:pad + L])


def im2col2d(x, kh, kw, stride, pad):
    N, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(N, C * kh * kw, Ho * Wo)


def col2im2d(cols, C, H, W, kh, kw, stride, pad):
    N = cols.shape[0]
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    cols = cols.reshape(N, C, kh, kw, Ho, Wo)
    out = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += cols[:, :, i, j]
    return np.ascontiguousarray(out[:, :, pad:pad + H, pad:pad + W])
