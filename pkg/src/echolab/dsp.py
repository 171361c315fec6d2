"""Frame / transform / mask / overlap-add processing chain.

All models share this front-end: 424-sample frames at 50% shift, square-root
Hann analysis and synthesis windows, a 512-point DFT and a complex mask whose
magnitude is compressed with ``tanh``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
EPS_MASK = 1e-12


class SignalTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class FrameParams:
    frame_len: int = 424
    frame_shift: int = 212
    dft_size: int = 512
    feature_len: int = 264
    compression: float = 0.3

    def __post_init__(self):
        if self.frame_shift * 2 != self.frame_len:
            raise ValueError("frame_shift must be half the frame length")
        if self.dft_size < self.frame_len:
            raise ValueError("dft_size must be >= frame_len")
        if self.feature_len < self.bins:
            raise ValueError("feature_len must be >= dft_size/2 + 1")

    @property
    def bins(self) -> int:
        return self.dft_size // 2 + 1

    @property
    def frame_rate(self) -> float:
        return SAMPLE_RATE / self.frame_shift

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.frame_len) // self.frame_shift + 1

    def n_samples(self, n_frames: int) -> int:
        return (n_frames - 1) * self.frame_shift + self.frame_len


DEFAULT_PARAMS = FrameParams()


def sqrt_hann(n: int) -> np.ndarray:
    # periodic Hann: squared window sums to one at 50% overlap
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))


def frame_signal(signal: np.ndarray, params: FrameParams = DEFAULT_PARAMS) -> np.ndarray:
    signal = np.asarray(signal, dtype=float)
    if signal.shape[-1] < params.frame_len:
        raise SignalTooShortError(
            f"signal of {signal.shape[-1]} samples is shorter than one frame ({params.frame_len})"
        )
    view = np.lib.stride_tricks.sliding_window_view(signal, params.frame_len, axis=-1)
    return view[..., :: params.frame_shift, :]


def analyze(signal: np.ndarray, params: FrameParams = DEFAULT_PARAMS) -> np.ndarray:
    """Short-time spectrum of ``signal`` with shape ``(..., frames, K/2+1)``.

    Leading axes are treated as a batch. Only full frames are produced; use
    :func:`pad_for_processing` first if every sample must be covered.
    """
    frames = frame_signal(signal, params) * sqrt_hann(params.frame_len)
    return np.fft.rfft(frames, n=params.dft_size, axis=-1)


def synthesize(spectra: np.ndarray, params: FrameParams = DEFAULT_PARAMS) -> np.ndarray:
    """Inverse of :func:`analyze`: IDFT, truncation, synthesis window, overlap-add."""
    spectra = np.asarray(spectra)
    if spectra.shape[-1] != params.bins:
        raise ValueError(f"expected {params.bins} bins, got {spectra.shape[-1]}")
    if not np.all(np.isfinite(spectra)):
        raise ValueError("non-finite spectral values")
    frames = np.fft.irfft(spectra, n=params.dft_size, axis=-1)[..., : params.frame_len]
    return overlap_add(frames * sqrt_hann(params.frame_len), params.frame_shift)


def overlap_add(frames: np.ndarray, shift: int) -> np.ndarray:
    n_frames, frame_len = frames.shape[-2:]
    out = np.zeros(frames.shape[:-2] + ((n_frames - 1) * shift + frame_len,))
    # two half-frame lanes at 50% overlap; each lane is a plain reshape
    for start in range(0, frame_len, shift):
        seg = frames[..., start : start + shift]
        lane = seg.reshape(frames.shape[:-2] + (n_frames * shift,))
        out[..., start : start + n_frames * shift] += lane
    return out


def pad_for_processing(signal: np.ndarray, params: FrameParams = DEFAULT_PARAMS) -> tuple[np.ndarray, int]:
    """Zero-pad so every original sample lies under two frames.

    Returns the padded signal and the offset of the original first sample.
    """
    signal = np.asarray(signal, dtype=float)
    n = signal.shape[-1]
    head = params.frame_len - params.frame_shift
    total = head + n + params.frame_shift
    rem = (total - params.frame_len) % params.frame_shift
    if rem:
        total += params.frame_shift - rem
    pad = [(0, 0)] * (signal.ndim - 1) + [(head, total - head - n)]
    return np.pad(signal, pad), head


def interior_slice(n_frames: int, params: FrameParams = DEFAULT_PARAMS) -> slice:
    """Samples of an OLA output covered by two frames."""
    return slice(params.frame_shift, (n_frames - 1) * params.frame_shift + params.frame_shift)


def mask_gain(mask: np.ndarray) -> np.ndarray:
    """Effective complex gain ``tanh(|M|) * M / |M|``, zero where ``|M| < 1e-12``."""
    mask = np.asarray(mask, dtype=complex)
    mag = np.abs(mask)
    safe = np.where(mag < EPS_MASK, 1.0, mag)
    return np.where(mag < EPS_MASK, 0.0, np.tanh(mag) / safe * mask)


def apply_mask(Y: np.ndarray, M: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y)
    M = np.asarray(M)
    if Y.shape[-1] != M.shape[-1]:
        raise ValueError(f"bin count mismatch: {Y.shape[-1]} vs {M.shape[-1]}")
    return Y * mask_gain(M)


def compress_input(spectrum: np.ndarray, c: float) -> np.ndarray:
    """``|Y|^c * exp(j arg Y)``; zero stays zero."""
    if not 0 < c <= 1:
        raise ValueError("compression exponent must lie in (0, 1]")
    spectrum = np.asarray(spectrum, dtype=complex)
    mag = np.abs(spectrum)
    safe = np.where(mag == 0, 1.0, mag)
    return np.where(mag == 0, 0.0, spectrum * (safe ** (c - 1.0)))


def assemble_features(
    X: np.ndarray, Y: np.ndarray, params: FrameParams = DEFAULT_PARAMS, compressed: bool = False
) -> np.ndarray:
    """Network input of shape ``(..., frames, L, 4)`` ordered [Re Y, Im Y, Re X, Im X]."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape:
        raise ValueError(f"mismatched spectra: X {X.shape} vs Y {Y.shape}")
    if X.shape[-1] != params.bins:
        raise ValueError(f"expected {params.bins} bins, got {X.shape[-1]}")
    if compressed:
        X = compress_input(X, params.compression)
        Y = compress_input(Y, params.compression)
    feats = np.stack([Y.real, Y.imag, X.real, X.imag], axis=-1)
    pad = [(0, 0)] * (feats.ndim - 2) + [(0, params.feature_len - params.bins), (0, 0)]
    return np.pad(feats, pad)


def crop_mask(network_output: np.ndarray, params: FrameParams = DEFAULT_PARAMS) -> np.ndarray:
    out = np.asarray(network_output)
    if out.shape[-2] != params.feature_len or out.shape[-1] != 2:
        raise ValueError(f"expected (..., {params.feature_len}, 2), got {out.shape}")
    out = out[..., : params.bins, :]
    return out[..., 0] + 1j * out[..., 1]


def read_wav(path: str | Path) -> np.ndarray:
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio")
    if data.dtype == np.int16:
        return data.astype(float) / 32768.0
    if data.dtype.kind == "f":
        return data.astype(float)
    raise ValueError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path: str | Path, signal: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(signal) * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, SAMPLE_RATE, pcm)
