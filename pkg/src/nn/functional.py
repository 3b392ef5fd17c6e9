"""Differentiable layer primitives built on :mod:`src.nn.tensor`.

Convolutions and batch normalisation carry hand-written backward passes; the
LSTM cell is composed from tensor primitives so its gradient comes from the
tape.
"""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.utils.common.exceptions import DegenerateDataError, ShapeError, ValidationError

from .tensor import Tensor, concat

LSTMState = Tuple[Tensor, Tensor]


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output size of a strided, zero-padded cross-correlation."""
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: Input of shape N×Cin×H×W
        weight: Filters of shape Cout×Cin×kh×kw
        bias: Optional bias of shape Cout
        stride: Step between output positions
        padding: Zero padding on every spatial border

    Returns:
        Tensor of shape N×Cout×H'×W'
    """
    if x.ndim != 4:
        raise ShapeError("conv2d expects N×C×H×W input", 4, x.ndim)
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError("conv2d input channels do not match the layer", cin_w, cin)
    s, p = int(stride), int(padding)
    ho, wo = conv_output_size(h, kh, s, p), conv_output_size(w, kw, s, p)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d output would be empty", ">= 1", (ho, wo))

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                    rows, cols = slice(i, i + s * ho, s), slice(j, j + s * wo, s)
                    gxp[:, :, rows, cols] += contrib.transpose(0, 3, 1, 2)
            gx = gxp[:, :, p : p + h, p : p + w]
        if weight.requires_grad:
            gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grads: Tuple[Optional[np.ndarray], ...] = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)) if bias.requires_grad else None,)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, "conv2d", backward)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
    padding: int = 1,
) -> Tensor:
    """Transposed 2-D convolution (the adjoint of :func:`conv2d`).

    Args:
        x: Input of shape N×Cin×H×W
        weight: Filters of shape Cin×Cout×kh×kw
        bias: Optional bias of shape Cout
        stride: Upsampling factor
        padding: Rows/columns cropped from every border of the full output

    Returns:
        Tensor of shape N×Cout×H'×W' with H' = (H−1)·stride − 2·padding + kh
    """
    if x.ndim != 4:
        raise ShapeError("conv_transpose2d expects N×C×H×W input", 4, x.ndim)
    n, cin, h, w = x.shape
    cin_w, cout, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError("conv_transpose2d input channels do not match the layer", cin_w, cin)
    s, p = int(stride), int(padding)
    ho, wo = conv_transpose_output_size(h, kh, s, p), conv_transpose_output_size(w, kw, s, p)
    if ho < 1 or wo < 1:
        raise ShapeError("conv_transpose2d output would be empty", ">= 1", (ho, wo))

    hf, wf = (h - 1) * s + kh, (w - 1) * s + kw
    full = np.zeros((n, cout, hf, wf), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(x.data, weight.data[:, :, i, j], axes=([1], [0]))
            full[:, :, i : i + s * h : s, j : j + s * w : s] += contrib.transpose(0, 3, 1, 2)
    out = full[:, :, p : p + ho, p : p + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        gfull = np.zeros((n, cout, hf, wf), dtype=g.dtype)
        gfull[:, :, p : p + ho, p : p + wo] = g
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                patch = gfull[:, :, i : i + s * h : s, j : j + s * w : s]
                if gx is not None:
                    gx += np.tensordot(patch, weight.data[:, :, i, j], axes=([1], [1])).transpose(
                        0, 3, 1, 2
                    )
                if gw is not None:
                    gw[:, :, i, j] = np.tensordot(x.data, patch, axes=([0, 2, 3], [0, 2, 3]))
        grads: Tuple[Optional[np.ndarray], ...] = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)) if bias.requires_grad else None,)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, "conv_transpose2d", backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """Elementwise ``max(x, slope·x)`` for ``slope`` in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise ValidationError("Leaky ReLU slope must lie in (0, 1)", field="slope", value=slope)
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data).astype(x.dtype)
    scale = np.where(positive, 1.0, slope).astype(x.dtype)
    return Tensor._make(out, (x,), "leaky_relu", lambda g: (g * scale,))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalisation over every axis except the feature axis 1.

    In training mode the batch statistics normalise the input and the running
    buffers are updated in place by momentum (unbiased variance). In eval mode
    the running buffers are used.
    """
    if x.ndim < 2:
        raise ShapeError("batchnorm expects at least N×F input", ">= 2", x.ndim)
    features = gamma.shape[0]
    if x.shape[1] != features:
        raise ShapeError("batchnorm feature axis does not match the layer", features, x.shape[1])
    axes = (0,) + tuple(range(2, x.ndim))
    view = (1, features) + (1,) * (x.ndim - 2)
    data = x.data.astype(np.float64)
    g_view = gamma.data.astype(np.float64).reshape(view)
    b_view = beta.data.astype(np.float64).reshape(view)

    if training:
        if x.shape[0] < 2:
            raise DegenerateDataError(
                "batchnorm in training mode needs a batch of at least 2", stage="batchnorm"
            )
        count = data.size // features
        mean = data.mean(axis=axes, keepdims=True)
        var = ((data - mean) ** 2).mean(axis=axes, keepdims=True)
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.reshape(features).astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(features).astype(running_var.dtype)
    else:
        count = 0
        mean = running_mean.astype(np.float64).reshape(view)
        var = running_var.astype(np.float64).reshape(view)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (data - mean) * inv_std
    out = (g_view * xhat + b_view).astype(x.dtype)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        g64 = g.astype(np.float64)
        ggamma = (g64 * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g64.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g64 * g_view
            if training:
                gx = (
                    inv_std
                    / count
                    * (
                        count * dxhat
                        - dxhat.sum(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                    )
                )
            else:
                gx = dxhat * inv_std
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), "batchnorm", backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as in×out."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            "linear input width does not match the layer", weight.shape[0], x.shape[-1]
        )
    out = x @ weight
    return out + bias if bias is not None else out


def lstm_step(
    x_t: Tensor, state: LSTMState, weight: Tensor, bias: Tensor
) -> Tuple[Tensor, LSTMState]:
    """One LSTM cell update.

    ``weight`` is the fused (I + H)×4H matrix and ``bias`` the fused 4H vector,
    gate blocks ordered input, forget, candidate, output.

    Returns:
        ``(h', (h', c'))``
    """
    h, c = state
    hidden = weight.shape[1] // 4
    if x_t.ndim != 2 or h.ndim != 2 or c.ndim != 2:
        raise ShapeError(
            "lstm_step expects N×I input and N×H state", 2, (x_t.ndim, h.ndim, c.ndim)
        )
    if x_t.shape[1] + hidden != weight.shape[0]:
        raise ShapeError(
            "lstm_step input width does not match the cell",
            weight.shape[0] - hidden,
            x_t.shape[1],
        )
    if h.shape != (x_t.shape[0], hidden) or c.shape != h.shape:
        raise ShapeError(
            "lstm_step state shape does not match the cell", (x_t.shape[0], hidden), h.shape
        )

    gates = concat([x_t, h], axis=1) @ weight + bias
    i = gates[:, 0:hidden].sigmoid()
    f = gates[:, hidden : 2 * hidden].sigmoid()
    g = gates[:, 2 * hidden : 3 * hidden].tanh()
    o = gates[:, 3 * hidden : 4 * hidden].sigmoid()
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    return h_next, (h_next, c_next)


def _pool_bins(size: int, bins: int) -> Tuple[Tuple[int, int], ...]:
    return tuple(
        (int(np.floor(k * size / bins)), int(np.ceil((k + 1) * size / bins))) for k in range(bins)
    )


def adaptive_avg_pool2d(x: Tensor, grid: Tuple[int, int] = (1, 1)) -> Tensor:
    """Average ``x`` (N×C×H×W) over a ``gh×gw`` grid of floor/ceil bins.

    Returns:
        Tensor of shape N×C×gh×gw
    """
    if x.ndim != 4:
        raise ShapeError("adaptive_avg_pool2d expects N×C×H×W input", 4, x.ndim)
    n, ch, h, w = x.shape
    gh, gw = grid
    if gh > h or gw > w:
        raise ShapeError("pooling grid is larger than the feature map", (h, w), grid)
    rows, cols = _pool_bins(h, gh), _pool_bins(w, gw)
    out = np.empty((n, ch, gh, gw), dtype=x.dtype)
    for a, (r0, r1) in enumerate(rows):
        for b, (c0, c1) in enumerate(cols):
            out[:, :, a, b] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3), dtype=np.float64)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        gx = np.zeros_like(x.data)
        for a, (r0, r1) in enumerate(rows):
            for b, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] += (g[:, :, a, b] / area)[:, :, None, None]
        return (gx,)

    return Tensor._make(out, (x,), "adaptive_avg_pool2d", backward)
