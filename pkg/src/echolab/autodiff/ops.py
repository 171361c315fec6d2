"""Elementwise, shape and signal-chain primitives."""
from __future__ import annotations

import numpy as np

from .. import dsp
from .tensor import Tensor, as_tensor, make


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(a: Tensor) -> Tensor:
    return make(a.data**2, (a,), lambda g: (2.0 * a.data * g,))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(np.asarray(out), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def log10(a: Tensor) -> Tensor:
    return make(np.log10(a.data), (a,), lambda g: (g / (a.data * np.log(10.0)),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out**2),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a: Tensor) -> Tensor:
    neg = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, neg)
    return make(out, (a,), lambda g: (g * np.where(a.data > 0, 1.0, neg + 1.0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def reshape(a: Tensor, shape) -> Tensor:
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make(a.data[index], (a,), back)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


# complex values are carried as a trailing axis of size 2: (..., [re, im])

def mask_gain(mask: Tensor) -> Tensor:
    """Complex gain ``tanh(|M|) M/|M|`` with the zero-gain rule below 1e-12."""
    mr, mi = mask.data[..., 0], mask.data[..., 1]
    mag = np.sqrt(mr**2 + mi**2)
    small = mag < dsp.EPS_MASK
    safe = np.where(small, 1.0, mag)
    t = np.tanh(mag)
    ratio = np.where(small, 0.0, t / safe)
    out = np.stack([ratio * mr, ratio * mi], axis=-1)

    def back(g):
        gr, gi = g[..., 0], g[..., 1]
        # d(ratio)/d|M| = (1 - t^2)/|M| - t/|M|^2 ;  d|M|/dm = m/|M|
        dratio = np.where(small, 0.0, ((1.0 - t**2) / safe - t / safe**2) / safe)
        common = (gr * mr + gi * mi) * dratio
        return (np.stack([ratio * gr + common * mr, ratio * gi + common * mi], axis=-1),)

    return make(out, (mask,), back)


def complex_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ar, ai = a.data[..., 0], a.data[..., 1]
    br, bi = b.data[..., 0], b.data[..., 1]
    out = np.stack([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

    def back(g):
        gr, gi = g[..., 0], g[..., 1]
        ga = np.stack([gr * br + gi * bi, -gr * bi + gi * br], axis=-1)
        gb = np.stack([gr * ar + gi * ai, -gr * ai + gi * ar], axis=-1)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make(out, (a, b), back)


def synthesize(spectra: Tensor, params: dsp.FrameParams = dsp.DEFAULT_PARAMS) -> Tensor:
    """Differentiable :func:`echolab.dsp.synthesize` over ``(..., frames, bins, 2)``."""
    z = spectra.data[..., 0] + 1j * spectra.data[..., 1]
    out = dsp.synthesize(z, params)
    n_frames = spectra.shape[-3]
    window = dsp.sqrt_hann(params.frame_len)
    # irfft counts interior bins twice and ignores imaginary parts at DC/Nyquist
    weight = np.full(params.bins, 2.0 / params.dft_size)
    weight[0] = weight[-1] = 1.0 / params.dft_size

    def back(g):
        frames = dsp.frame_signal(g, params)[..., :n_frames, :] * window
        spec = np.fft.rfft(frames, n=params.dft_size, axis=-1) * weight
        return (np.stack([spec.real, spec.imag], axis=-1),)

    return make(out, (spectra,), back)
