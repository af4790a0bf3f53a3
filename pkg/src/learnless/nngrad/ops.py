"""Forward/backward kernels on float64 numpy arrays in NCHW layout.

Every forward takes a single image ``(C, H, W)`` or a batch ``(N, C, H, W)``;
backward returns gradients in the same layout as the forward inputs.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BCE_EPS = 1e-7


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(x4: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) view over the zero-padded input."""
    if padding:
        x4 = np.pad(x4, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x4, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _check_conv(x4, w, b, stride, padding):
    if w.ndim != 4:
        raise ValueError(f"conv weights must be (O, C, kh, kw), got {w.shape}")
    if x4.shape[1] != w.shape[1]:
        raise ValueError(f"input has {x4.shape[1]} channels, weights expect {w.shape[1]}")
    if b is not None and np.shape(b) != (w.shape[0],):
        raise ValueError(f"bias shape {np.shape(b)} does not match {w.shape[0]} output channels")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    for size, k in zip(x4.shape[2:], w.shape[2:]):
        if conv_out_size(size, k, stride, padding) < 1:
            raise ValueError(f"kernel {w.shape[2:]} larger than padded input {x4.shape[2:]}")


def conv2d_forward(x, w, b, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation; output side is ``(H + 2p - k) // s + 1``."""
    x4, single = _batched(x)
    w = np.asarray(w, dtype=np.float64)
    _check_conv(x4, w, b, stride, padding)
    win = _windows(x4, w.shape[2], w.shape[3], stride, padding)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    out = out.transpose(0, 3, 1, 2)
    if b is not None:
        out = out + np.asarray(b, dtype=np.float64)[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(upstream, x, w, stride: int = 1, padding: int = 0, ordered: bool = False):
    """Gradients ``(grad_w, grad_b, grad_x)`` of a conv given ``dL/d(output)``.

    ``grad_w[o, c, m, n]`` sums ``upstream[o, r, q] * x[c, r*s+m-p, q*s+n-p]``
    over all output positions. With ``ordered=True`` that sum runs strictly
    sequentially over positions in (n, r, q) order, which makes the result
    reproducible term by term; otherwise BLAS picks the order.
    """
    x4, single = _batched(x)
    g4, _ = _batched(upstream)
    w = np.asarray(w, dtype=np.float64)
    _check_conv(x4, w, None, stride, padding)
    n, c, h, wd = x4.shape
    o, _, kh, kw = w.shape
    ho, wo = conv_out_size(h, kh, stride, padding), conv_out_size(wd, kw, stride, padding)
    if g4.shape != (n, o, ho, wo):
        raise ValueError(f"upstream gradient shape {g4.shape} != conv output shape {(n, o, ho, wo)}")
    win = _windows(x4, kh, kw, stride, padding)

    if ordered:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        ups = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        prods = ups[:, :, None] * cols[:, None, :]
        grad_w = np.cumsum(prods, axis=0)[-1].reshape(o, c, kh, kw)
        grad_b = np.cumsum(ups, axis=0)[-1]
    else:
        grad_w = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
        grad_b = g4.sum(axis=(0, 2, 3))

    gcols = np.tensordot(g4, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_x = gxp[:, :, padding:padding + h, padding:padding + wd]
    grad_x = np.ascontiguousarray(grad_x)
    return grad_w, grad_b, (grad_x[0] if single else grad_x)


def masked_gradient_oracle(x, mask, upstream, w, stride: int = 1, padding: int = 0) -> np.ndarray:
    """First-layer weight gradient by explicit summation that skips masked pixels.

    Positions are visited in the same sequential (n, r, q) order as
    ``conv2d_backward(..., ordered=True)``; a summand is dropped entirely when
    its input pixel is masked out or lies in the zero padding. Agreement with
    the backward pass on ``x * mask`` is therefore exact.
    """
    x4, _ = _batched(x)
    g4, _ = _batched(upstream)
    w = np.asarray(w, dtype=np.float64)
    mask = np.asarray(mask)
    n, c, h, wd = x4.shape
    o, _, kh, kw = w.shape
    if mask.shape != (h, wd):
        raise ValueError(f"mask shape {mask.shape} != input spatial shape {(h, wd)}")
    ho, wo = conv_out_size(h, kh, stride, padding), conv_out_size(wd, kw, stride, padding)
    if g4.shape != (n, o, ho, wo):
        raise ValueError(f"upstream gradient shape {g4.shape} != {(n, o, ho, wo)}")

    mi, mj = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    acc = np.zeros((o, c, kh, kw))
    for b in range(n):
        for r in range(ho):
            for q in range(wo):
                iy, ix = r * stride + mi - padding, q * stride + mj - padding
                inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < wd)
                iyc, ixc = np.clip(iy, 0, h - 1), np.clip(ix, 0, wd - 1)
                keep = inside & (mask[iyc, ixc] != 0)  # kh, kw
                pix = x4[b][:, iyc, ixc]  # C, kh, kw
                term = g4[b, :, r, q][:, None, None, None] * pix[None]
                acc = np.where(keep[None, None], acc + term, acc)
    return acc


def _pool_pad(x4, size, fill):
    h, w = x4.shape[2:]
    ph, pw = (-h) % size, (-w) % size
    if ph or pw:
        x4 = np.pad(x4, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=fill)
    return x4


def avgpool2d_forward(x, size: int = 2) -> np.ndarray:
    """Non-overlapping average pool; ragged edge windows average their valid pixels."""
    x4, single = _batched(x)
    n, c, h, w = x4.shape
    xp = _pool_pad(x4, size, 0.0)
    ho, wo = xp.shape[2] // size, xp.shape[3] // size
    sums = xp.reshape(n, c, ho, size, wo, size).sum(axis=(3, 5))
    out = sums / _pool_counts(h, w, size)
    return out[0] if single else out


def _pool_counts(h, w, size):
    rows = np.minimum(size, h - np.arange(0, h, size))
    cols = np.minimum(size, w - np.arange(0, w, size))
    return np.outer(rows, cols).astype(np.float64)


def avgpool2d_backward(upstream, input_shape, size: int = 2) -> np.ndarray:
    g4, single = _batched(upstream)
    h, w = input_shape[-2:]
    g = g4 / _pool_counts(h, w, size)
    g = np.repeat(np.repeat(g, size, axis=2), size, axis=3)[:, :, :h, :w]
    g = np.ascontiguousarray(g)
    return g[0] if single else g


def maxpool2d_forward(x, size: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pool. Returns ``(out, argmax)``; first max wins ties."""
    x4, single = _batched(x)
    n, c, h, w = x4.shape
    xp = _pool_pad(x4, size, -np.inf)
    ho, wo = xp.shape[2] // size, xp.shape[3] // size
    blocks = xp.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return (out[0] if single else out), arg


def maxpool2d_backward(upstream, argmax, input_shape, size: int = 2) -> np.ndarray:
    g4, single = _batched(upstream)
    n, c, ho, wo = g4.shape
    h, w = input_shape[-2:]
    onehot = np.zeros((n, c, ho, wo, size * size))
    np.put_along_axis(onehot, argmax.reshape(n, c, ho, wo)[..., None], g4[..., None], axis=-1)
    g = onehot.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size)
    g = np.ascontiguousarray(g[:, :, :h, :w])
    return g[0] if single else g


def upsample_forward(x, factor: int = 2) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def upsample_backward(upstream, factor: int = 2) -> np.ndarray:
    g = np.asarray(upstream)
    *lead, h, w = g.shape
    return g.reshape(*lead, h // factor, factor, w // factor, factor).sum(axis=(-3, -1))


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(upstream, out) -> np.ndarray:
    return upstream * out * (1.0 - out)


def silu_forward(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def silu_backward(upstream, x) -> np.ndarray:
    s = sigmoid(x)
    return upstream * s * (1.0 + x * (1.0 - s))


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(upstream, x) -> np.ndarray:
    return upstream * (np.asarray(x) > 0)


def dense_forward(x, w, b) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"dense input width {x.shape[-1]} != weight fan-in {w.shape[1]}")
    return x @ w.T + b


def dense_backward(upstream, x, w):
    """``(grad_w, grad_b, grad_x)`` for ``y = x W^T + b`` with ``x`` of shape (N, in)."""
    g = np.asarray(upstream, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if g.ndim == 1:
        g, x = g[None], x[None]
        return g.T @ x, g.sum(axis=0), (g @ w)[0]
    return g.T @ x, g.sum(axis=0), g @ w


def global_avgpool_forward(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).mean(axis=(-2, -1))


def global_avgpool_backward(upstream, input_shape) -> np.ndarray:
    h, w = input_shape[-2:]
    g = np.asarray(upstream)[..., None, None] / (h * w)
    return np.broadcast_to(g, input_shape).copy()


def bce_loss(prediction, label, eps: float = BCE_EPS):
    """Binary cross-entropy on probabilities and its derivative in the prediction.

    Works elementwise; predictions are clamped to ``[eps, 1 - eps]``.
    """
    y = np.asarray(label, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    p = np.clip(np.asarray(prediction, dtype=np.float64), eps, 1.0 - eps)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = -(y / p) + (1.0 - y) / (1.0 - p)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
