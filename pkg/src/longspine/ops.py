"""Forward/backward primitives for the fixed layer set.

Everything operates on plain numpy arrays in the layout (N, C, D, H, W):
batch, channel, slice/depth, height, width.  2D convolutions are the
depth-1 special case of the same kernel arithmetic.  Each forward returns
``(output, cache)`` and the matching backward consumes the cache, so a
layer can be evaluated twice (weight-shared branches) without its caches
colliding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

AXIS_NAMES = ("batch", "channel", "depth", "height", "width")


class ShapeError(ValueError):
    """Raised when tensor extents are inconsistent with an operation."""


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution: kernel (kd, kh, kw), per-axis stride and
    zero padding ordered (depth, height, width)."""

    out_channels: int
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    pad: tuple[int, int, int] = (0, 0, 0)

    def out_extent(self, axis: int, in_extent: int) -> int:
        k, s, p = self.kernel[axis], self.stride[axis], self.pad[axis]
        return (in_extent + 2 * p - k) // s + 1

    def check(self, x_shape, w_shape, b_shape) -> None:
        if len(x_shape) != 5:
            raise ShapeError(f"conv input must have 5 axes (N,C,D,H,W), got {len(x_shape)}")
        if len(w_shape) != 5:
            raise ShapeError(f"conv weights must have 5 axes (O,C,kd,kh,kw), got {len(w_shape)}")
        if w_shape[0] != self.out_channels:
            raise ShapeError(f"weight out-channel axis is {w_shape[0]}, spec says {self.out_channels}")
        if tuple(w_shape[2:]) != self.kernel:
            raise ShapeError(f"weight kernel axes {tuple(w_shape[2:])} do not match spec kernel {self.kernel}")
        if x_shape[1] != w_shape[1]:
            raise ShapeError(f"channel axis mismatch: input has {x_shape[1]}, weights expect {w_shape[1]}")
        if b_shape != (self.out_channels,):
            raise ShapeError(f"bias must have shape ({self.out_channels},), got {b_shape}")
        for axis in range(3):
            padded = x_shape[2 + axis] + 2 * self.pad[axis]
            if self.kernel[axis] > padded:
                raise ShapeError(
                    f"kernel {AXIS_NAMES[2 + axis]} {self.kernel[axis]} exceeds padded input "
                    f"{AXIS_NAMES[2 + axis]} {padded}"
                )


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec):
    """Cross-correlation of x (N,C,D,H,W) with kernels w (O,C,kd,kh,kw).

    Output extent per spatial axis is floor((in + 2*pad - k)/stride) + 1.
    A kernel depth equal to the padded input depth collapses the slice
    axis to extent 1.
    """
    spec.check(x.shape, w.shape, b.shape)
    pd, ph, pw = spec.pad
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    sd, sh, sw = spec.stride
    win = sliding_window_view(xp, spec.kernel, axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    # (N, C, OD, OH, OW, kd, kh, kw) x (O, C, kd, kh, kw) -> (N, OD, OH, OW, O)
    y = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    y = np.ascontiguousarray(np.moveaxis(y, -1, 1))
    y += b[None, :, None, None, None]
    cache = (xp, x.shape, w, spec)
    return y, cache


def conv_backward(dy: np.ndarray, cache):
    """Gradients (dx, dw, db) of a conv_forward call.

    dw and the offset-wise input gradient come from two large tensordots;
    the remaining work is a scatter-add over kernel offsets.
    """
    xp, x_shape, w, spec = cache
    O, C, KD, KH, KW = w.shape
    sd, sh, sw = spec.stride
    _, _, OD, OH, OW = dy.shape

    db = dy.sum(axis=(0, 2, 3, 4))
    win = sliding_window_view(xp, spec.kernel, axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    # dw[o,c,i,j,k] = sum_{n,d,h,w} dy[n,o,d,h,w] * win[n,c,d,h,w,i,j,k]
    dw = np.tensordot(dy, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))

    # g[n,d,h,w,c,i,j,k] = sum_o dy[n,o,d,h,w] * w[o,c,i,j,k]
    g = np.tensordot(dy, w, axes=(1, 0))
    g = np.moveaxis(g, 4, 1)  # (N, C, OD, OH, OW, KD, KH, KW)
    dxp = np.zeros_like(xp)
    for i in range(KD):
        for j in range(KH):
            for k in range(KW):
                dxp[:, :, i : i + OD * sd : sd, j : j + OH * sh : sh, k : k + OW * sw : sw] += g[..., i, j, k]

    pd, ph, pw = spec.pad
    D, H, W = x_shape[2:]
    dx = dxp[:, :, pd : pd + D, ph : ph + H, pw : pw + W]
    return dx, dw, db


def _replicate_pad_even(x: np.ndarray):
    """Replicate the last row/column when height or width is odd."""
    H, W = x.shape[-2:]
    if H % 2:
        x = np.concatenate([x, x[..., -1:, :]], axis=-2)
    if W % 2:
        x = np.concatenate([x, x[..., :, -1:]], axis=-1)
    return x, H, W


def maxpool2x2_forward(x: np.ndarray):
    """2x2/stride-2 max pooling over (H, W); depth axis untouched."""
    if x.ndim != 5:
        raise ShapeError(f"pool input must have 5 axes (N,C,D,H,W), got {x.ndim}")
    xp, H, W = _replicate_pad_even(x)
    N, C, D, Hp, Wp = xp.shape
    win = xp.reshape(N, C, D, Hp // 2, 2, Wp // 2, 2)
    flat = win.transpose(0, 1, 2, 3, 5, 4, 6).reshape(N, C, D, Hp // 2, Wp // 2, 4)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    cache = (arg, x.shape, (Hp, Wp))
    return y, cache


def maxpool2x2_backward(dy: np.ndarray, cache):
    arg, x_shape, (Hp, Wp) = cache
    N, C, D, H, W = x_shape
    flat = np.zeros((N, C, D, Hp // 2, Wp // 2, 4), dtype=dy.dtype)
    np.put_along_axis(flat, arg[..., None], dy[..., None], axis=-1)
    win = flat.reshape(N, C, D, Hp // 2, Wp // 2, 2, 2).transpose(0, 1, 2, 3, 5, 4, 6)
    dxp = win.reshape(N, C, D, Hp, Wp)
    # fold replicate-padded cells back onto the edge they copied
    if Hp != H:
        dxp[..., H - 1, :] += dxp[..., H, :]
        dxp = dxp[..., :H, :]
    if Wp != W:
        dxp[..., :, W - 1] += dxp[..., :, W]
        dxp = dxp[..., :, :W]
    return dxp


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask):
    return dy * mask


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map. Trailing axes of x are flattened to the fan-in."""
    xf = x.reshape(x.shape[0], -1)
    if xf.shape[1] != w.shape[0]:
        raise ShapeError(f"fan-in mismatch: flattened input is {xf.shape[1]}, weights expect {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias must have shape ({w.shape[1]},), got {b.shape}")
    y = xf @ w + b
    return y, (xf, x.shape, w)


def fc_backward(dy: np.ndarray, cache):
    xf, x_shape, w = cache
    dw = xf.T @ dy
    db = dy.sum(axis=0)
    dx = (dy @ w.T).reshape(x_shape)
    return dx, dw, db


def log_sum_exp(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = logits.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(logits - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_log_loss(logits: np.ndarray, true_class: int, class_weight: float = 1.0):
    """Weighted negative log-likelihood of one K-way sample.

    Returns (loss, dlogits) with loss = alpha * (logsumexp(y) - y_c) and
    dlogits = alpha * (softmax(y) - onehot(c)).
    """
    logits = np.asarray(logits)
    K = logits.shape[-1]
    if not 0 <= int(true_class) < K:
        raise ShapeError(f"class index {true_class} out of range for {K} logits")
    loss = class_weight * (log_sum_exp(logits) - logits[..., int(true_class)])
    d = softmax(logits)
    d[..., int(true_class)] -= 1.0
    return float(loss), class_weight * d


def softmax_log_loss_batch(logits: np.ndarray, classes: np.ndarray, class_weights: np.ndarray | None = None):
    """Sum of weighted softmax log losses over a batch of (N, K) logits."""
    N, K = logits.shape
    classes = np.asarray(classes, dtype=np.intp)
    if classes.min(initial=0) < 0 or classes.max(initial=0) >= K:
        raise ShapeError(f"class index out of range for {K} logits")
    alpha = np.ones(K, dtype=logits.dtype) if class_weights is None else np.asarray(class_weights)
    lse = log_sum_exp(logits, axis=1)
    picked = logits[np.arange(N), classes]
    loss = float((alpha[classes] * (lse - picked)).sum())
    d = softmax(logits, axis=1)
    d[np.arange(N), classes] -= 1.0
    d *= alpha[classes][:, None]
    return loss, d


def finite_diff_grad(loss_fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar loss, one element at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = loss_fn(x)
        flat[i] = orig - eps
        lo = loss_fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(1e-8, |a|+|b|), the usual gradient-check metric."""
    denom = np.maximum(1e-8, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))
