"""End-to-end masking chain: features -> model -> gain -> masked spectra -> e(n).

The same gain ``G`` that produces ``E = G Y`` is applied to the known mixture
components, giving white-box signals ``S~ = G S``, ``N~ = G N``, ``D~ = G D``
whose sum equals ``e`` up to rounding.
"""
from __future__ import annotations

from typing import Mapping, Protocol

import numpy as np

from . import dsp
from .autodiff import Tensor, constant, ops
from .models import CrnModel


def analyze_padded(signals: np.ndarray, params: dsp.FrameParams = dsp.DEFAULT_PARAMS) -> tuple[np.ndarray, int]:
    """Pad for processing and analyze; returns spectra ``(..., T, bins)`` and the head offset."""
    padded, head = dsp.pad_for_processing(signals, params)
    return dsp.analyze(padded, params), head


def model_features(model: CrnModel, X: np.ndarray, Y: np.ndarray, params=dsp.DEFAULT_PARAMS) -> np.ndarray:
    return dsp.assemble_features(X, Y, params, compressed=model.config.input_compression)


def _as_pairs(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1)


def masked_signals(
    model: CrnModel,
    x: np.ndarray,
    y: np.ndarray,
    components: Mapping[str, np.ndarray] = {},
    params: dsp.FrameParams = dsp.DEFAULT_PARAMS,
    state: dict | None = None,
) -> tuple[dict[str, Tensor], dict]:
    """Differentiable chain on time signals ``(B, n)``.

    Returns time-domain tensors ``(B, n)`` for ``"e"`` and for every name in
    ``components`` (masked with the same gain), plus the final model state.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    length = y.shape[-1]
    X, head = analyze_padded(x, params)
    Y, _ = analyze_padded(y, params)
    out, state = model.forward(model_features(model, X, Y, params), state)
    gain = ops.mask_gain(ops.getitem(out, (Ellipsis, slice(0, params.bins), slice(None))))
    names = ["e"] + list(components)
    stack = [Y] + [analyze_padded(np.atleast_2d(components[k]), params)[0] for k in components]
    masked = ops.complex_mul(gain, constant(_as_pairs(np.stack(stack))))
    time = ops.synthesize(masked, params)
    return {k: ops.getitem(time, (i, Ellipsis, slice(head, head + length))) for i, k in enumerate(names)}, state


# ---------------------------------------------------------------- systems


class System(Protocol):
    """Anything that maps reference and microphone spectra to a complex gain."""

    def gains(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray: ...


class ModelSystem:
    """A trained model used as a system; state is reset per call and carried across chunks."""

    def __init__(self, model: CrnModel, chunk_frames: int = 400, params: dsp.FrameParams = dsp.DEFAULT_PARAMS):
        self.model = model
        self.chunk_frames = chunk_frames
        self.params = params

    def gains(self, X, Y):
        feats = model_features(self.model, X, Y, self.params)
        lead = feats.ndim == 3
        if lead:
            feats = feats[None]
        state = None
        pieces = []
        for a in range(0, feats.shape[1], self.chunk_frames):
            out, state = self.model.forward(feats[:, a : a + self.chunk_frames], state)
            pieces.append(out.data)
        out = np.concatenate(pieces, axis=1)
        G = dsp.mask_gain(dsp.crop_mask(out, self.params))
        return G[0] if lead else G


class ConstantGain:
    """Frequency-flat real gain; ``1`` is the unprocessed system, ``0`` mutes."""

    def __init__(self, g: float):
        self.g = float(g)

    def gains(self, X, Y):
        return np.full(np.shape(Y), self.g, dtype=complex)


def identity_system() -> ConstantGain:
    return ConstantGain(1.0)


def mute_system() -> ConstantGain:
    return ConstantGain(0.0)


def forward_masking(model: CrnModel, X: np.ndarray, Y: np.ndarray, params=dsp.DEFAULT_PARAMS) -> np.ndarray:
    """Spectra in, enhanced OLA signal out (no trimming); fresh model state."""
    return dsp.synthesize(ModelSystem(model, params=params).gains(X, Y) * Y, params)


def process(system: System, x, y, components: Mapping[str, np.ndarray] = {}, params=dsp.DEFAULT_PARAMS) -> dict:
    """Run a system on one file and resynthesize ``e`` and white-box components.

    Returns numpy arrays trimmed to the input length, keyed ``"e"`` and by
    component name (``"s" -> S~`` and so on).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    length = y.shape[-1]
    X, head = analyze_padded(x, params)
    Y, _ = analyze_padded(y, params)
    G = system.gains(X, Y)
    if G.shape != Y.shape:
        raise ValueError(f"system returned gains {G.shape} for spectra {Y.shape}")
    out = {"e": dsp.synthesize(G * Y, params)[..., head : head + length]}
    for name, sig in components.items():
        C, _ = analyze_padded(sig, params)
        out[name] = dsp.synthesize(G * C, params)[..., head : head + length]
    return out
