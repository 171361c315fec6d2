"""Frequency-axis convolutions over ``(..., bins, channels)`` tensors.

Kernels are stored as ``(N, Cin_per_group, Cout)``. Padding is "same": the
output has ``ceil(bins / stride)`` entries; when the total padding is odd the
extra zero goes on the left.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make


def same_padding(length: int, taps: int, stride: int) -> tuple[int, int, int]:
    out = -(-length // stride)
    total = max((out - 1) * stride + taps - length, 0)
    return out, total - total // 2, total // 2


def _pad(x: np.ndarray, left: int, right: int) -> np.ndarray:
    pad = [(0, 0)] * x.ndim
    pad[-2] = (left, right)
    return np.pad(x, pad)


def windows(xp: np.ndarray, taps: int, stride: int, out: int) -> np.ndarray:
    """View of shape ``(..., out, taps, C)`` over the padded input."""
    view = np.lib.stride_tricks.sliding_window_view(xp, taps, axis=-2)  # (..., L', C, N)
    return view[..., : (out - 1) * stride + 1 : stride, :, :].swapaxes(-1, -2)


def scatter(cols: np.ndarray, length: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`windows`: sum ``(..., out, taps, C)`` back onto ``length`` positions."""
    out, taps = cols.shape[-3], cols.shape[-2]
    res = np.zeros(cols.shape[:-3] + (length, cols.shape[-1]))
    for n in range(taps):
        res[..., n : n + (out - 1) * stride + 1 : stride, :] += cols[..., n, :]
    return res


def _lead(a: np.ndarray, keep: int) -> np.ndarray:
    """Collapse all but the last ``keep`` axes into one."""
    return a.reshape((-1,) + a.shape[a.ndim - keep :])


def _check_kernel(x: np.ndarray, w: np.ndarray, groups: int):
    if w.ndim != 3:
        raise ValueError(f"kernel must be (N, Cin/groups, Cout), got {w.shape}")
    cin = x.shape[-1]
    if cin % groups or w.shape[2] % groups or w.shape[1] * groups != cin:
        raise ValueError(f"kernel {w.shape} does not match {cin} input channels with {groups} groups")


def conv_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, groups: int = 1) -> np.ndarray:
    _check_kernel(x, w, groups)
    taps = w.shape[0]
    out, left, right = same_padding(x.shape[-2], taps, stride)
    cols = windows(_pad(x, left, right), taps, stride, out)
    if groups == 1:
        lead = cols.shape[:-2]
        flat = cols.reshape(-1, taps * x.shape[-1])
        return (flat @ w.reshape(-1, w.shape[2])).reshape(lead + (w.shape[2],))
    cin_g, cout = w.shape[1], w.shape[2]
    cols = cols.reshape(cols.shape[:-1] + (groups, cin_g))
    wg = w.reshape(taps, cin_g, groups, cout // groups)
    y = np.einsum("...lngc,ncgo->...lgo", cols, wg)
    return y.reshape(y.shape[:-2] + (cout,))


def conv_backward(x, w, g, stride=1, groups=1):
    taps = w.shape[0]
    length = x.shape[-2]
    out, left, right = same_padding(length, taps, stride)
    cols = windows(_pad(x, left, right), taps, stride, out)
    cin_g, cout = w.shape[1], w.shape[2]
    if groups == 1:
        g2 = g.reshape(-1, cout)
        flat = cols.reshape(-1, taps * cin_g)
        dw = (flat.T @ g2).reshape(w.shape)
        dcols = (g2 @ w.reshape(-1, cout).T).reshape(cols.shape)
    else:
        gg = g.reshape(g.shape[:-1] + (groups, cout // groups))
        colsg = cols.reshape(cols.shape[:-1] + (groups, cin_g))
        wg = w.reshape(taps, cin_g, groups, cout // groups)
        dw = np.einsum("mlngc,mlgo->ncgo", _lead(colsg, 4), _lead(gg, 3)).reshape(w.shape)
        dcols = np.einsum("...lgo,ncgo->...lngc", gg, wg).reshape(cols.shape)
    dxp = scatter(dcols, length + left + right, stride)
    return dxp[..., left : left + length, :], dw


def conv_freq(x, w, b=None, stride: int = 1, groups: int = 1) -> Tensor:
    """Convolution along the frequency axis, applied identically to every frame."""
    x, w = as_tensor(x), as_tensor(w)
    y = conv_forward(x.data, w.data, stride, groups)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
        parents.append(b)

    def back(g):
        dx, dw = conv_backward(x.data, w.data, g, stride, groups)
        grads = [dx, dw]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return make(y, parents, back)


def deconv_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    taps, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ValueError(f"kernel {w.shape} does not match {x.shape[-1]} input channels")
    length = x.shape[-2] * stride
    _, left, right = same_padding(length, taps, stride)
    cols = (x @ w.transpose(1, 0, 2).reshape(cin, taps * cout)).reshape(x.shape[:-1] + (taps, cout))
    yp = scatter(cols, length + left + right, stride)
    return yp[..., left : left + length, :]


def deconv_backward(x, w, g, stride):
    taps = w.shape[0]
    length = g.shape[-2]
    out, left, right = same_padding(length, taps, stride)
    gwin = windows(_pad(g, left, right), taps, stride, out)  # (..., Lin, N, Cout)
    cin, cout = w.shape[1], w.shape[2]
    wt = w.transpose(1, 0, 2).reshape(cin, taps * cout)
    gflat = gwin.reshape(gwin.shape[:-2] + (taps * cout,))
    dx = gflat @ wt.T
    dw = (_lead(x, 1).T @ _lead(gflat, 1)).reshape(cin, taps, cout).transpose(1, 0, 2)
    return dx, dw


def deconv_freq(x, w, b=None, stride: int = 2) -> Tensor:
    """Transposed convolution; the exact adjoint of :func:`conv_freq` at the same geometry."""
    x, w = as_tensor(x), as_tensor(w)
    y = deconv_forward(x.data, w.data, stride)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
        parents.append(b)

    def back(g):
        dx, dw = deconv_backward(x.data, w.data, g, stride)
        grads = [dx, dw]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return make(y, parents, back)


def depthwise_conv(x, k, b=None) -> Tensor:
    """Per-channel convolution, kernel ``(N, C)``; no cross-channel mixing."""
    x, k = as_tensor(x), as_tensor(k)
    if k.ndim != 2 or k.shape[1] != x.shape[-1]:
        raise ValueError(f"depthwise kernel {k.shape} does not match {x.shape[-1]} channels")
    taps = k.shape[0]
    length = x.shape[-2]
    out, left, right = same_padding(length, taps, 1)
    cols = windows(_pad(x.data, left, right), taps, 1, out)
    y = np.zeros(x.shape[:-2] + (out, x.shape[-1]))
    for n in range(taps):
        y += cols[..., n, :] * k.data[n]
    parents = [x, k]
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
        parents.append(b)

    def back(g):
        dcols = g[..., :, None, :] * k.data
        dx = scatter(dcols, length + left + right, 1)[..., left : left + length, :]
        g2 = _lead(g, 1)
        dk = np.stack([(_lead(cols[..., n, :], 1) * g2).sum(axis=0) for n in range(taps)])
        grads = [dx, dk]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return make(y, parents, back)
