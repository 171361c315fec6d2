"""Condition-sectioned evaluation: smoothed ERLE, white-box component ERLE, distortion.

Per condition:
    STFE  ERLE of the residual ``e - n`` against the echo
    DT    component ERLE of ``D~`` and speech-component distortion of ``S~``
    STNE  deviation of the output ``e`` from the microphone signal ``y``
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from . import dsp
from .enhance import System, process
from .errors import DataError
from .synth import SignalBundle

DISTORTION_FLOOR_DB = -120.0
# samples whose smoothed echo power lies this far below its mean count as
# echo-inactive and are excluded from ERLE means
ACTIVITY_FLOOR_DB = -100.0


@dataclass(frozen=True)
class ErleParams:
    smoothing: float = 0.99
    cap_db: float = 80.0
    settle_seconds: float = 0.5

    def __post_init__(self):
        if not 0 < self.smoothing < 1:
            raise ValueError("smoothing coefficient must lie in (0, 1)")

    @property
    def settle_samples(self) -> int:
        return int(round(self.settle_seconds * dsp.SAMPLE_RATE))


def smoothed_power(x: np.ndarray, alpha: float) -> np.ndarray:
    """``P(n) = alpha P(n-1) + (1 - alpha) x(n)^2`` from zero state."""
    return sps.lfilter([1.0 - alpha], [1.0, -alpha], np.square(np.asarray(x, dtype=float)))


def erle_trace(d: np.ndarray, residual: np.ndarray, params: ErleParams = ErleParams()) -> np.ndarray:
    """``10 log10(P_d / P_residual)`` per sample, clipped to ``+-cap_db``.

    NaN where the echo is inactive (``P_d`` below ``ACTIVITY_FLOOR_DB``
    relative to the mean echo power).
    """
    d, residual = np.asarray(d, dtype=float), np.asarray(residual, dtype=float)
    if d.shape != residual.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {residual.shape}")
    pd = smoothed_power(d, params.smoothing)
    pr = smoothed_power(residual, params.smoothing)
    active = pd > np.mean(np.square(d)) * 10 ** (ACTIVITY_FLOOR_DB / 10)
    with np.errstate(divide="ignore", invalid="ignore"):
        trace = np.clip(10 * np.log10(pd / pr), -params.cap_db, params.cap_db)
    return np.where(active, trace, np.nan)


def _section_mean(trace: np.ndarray, params: ErleParams) -> float:
    if len(trace) <= params.settle_samples:
        raise DataError(
            f"section of {len(trace)} samples is not longer than the {params.settle_samples}-sample settling time"
        )
    tail = trace[params.settle_samples :]
    if np.all(np.isnan(tail)):
        raise DataError("no echo activity after the settling time")
    return float(np.nanmean(tail))


def erle(d, e, n, params: ErleParams = ErleParams(), section: slice | None = None) -> tuple[float, np.ndarray]:
    """Mean ERLE of a section with echo estimate ``e - n``; returns (dB, trace)."""
    section = section or slice(None)
    d, e, n = (np.asarray(a, dtype=float)[section] for a in (d, e, n))
    trace = erle_trace(d, e - n, params)
    return _section_mean(trace, params), trace


def component_erle(d_tilde, d, params: ErleParams = ErleParams(), section: slice | None = None) -> float:
    section = section or slice(None)
    d_tilde, d = (np.asarray(a, dtype=float)[section] for a in (d_tilde, d))
    return _section_mean(erle_trace(d, d_tilde, params), params)


def speech_preservation(s_tilde, s, section: slice | None = None) -> float:
    """``10 log10(sum (S~ - s)^2 / sum s^2)``, floored at -120 dB."""
    section = section or slice(None)
    s_tilde, s = (np.asarray(a, dtype=float)[section] for a in (s_tilde, s))
    ref = float(np.sum(np.square(s)))
    if ref == 0:
        raise DataError("speech reference is silent")
    err = float(np.sum(np.square(s_tilde - s)))
    if err == 0:
        return DISTORTION_FLOOR_DB
    return float(max(10 * np.log10(err / ref), DISTORTION_FLOOR_DB))


# ---------------------------------------------------------------- reports

REPORT_COLUMNS = (
    "file",
    "condition",
    "erle_db",
    "component_erle_db",
    "speech_distortion_db",
    "stne_deviation_db",
    "pesq",
    "aecmos",
)
# pesq / aecmos stay empty: reserved for merging external tool outputs


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    params: ErleParams = ErleParams()

    def means(self) -> list[dict]:
        out = []
        for cond in ("STFE", "DT", "STNE"):
            sel = [r for r in self.rows if r["condition"] == cond]
            if not sel:
                continue
            row = {"file": "mean", "condition": cond}
            for col in REPORT_COLUMNS[2:]:
                vals = [r[col] for r in sel if r.get(col) is not None]
                row[col] = float(np.mean(vals)) if vals else None
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in self.rows + self.means():
                w.writerow({k: ("" if r.get(k) is None else r[k]) for k in REPORT_COLUMNS})

    def to_dict(self) -> dict:
        return {
            "erle": asdict(self.params),
            "columns": {"component_erle_db": "component ERLE (white-box)"},
            "rows": self.rows,
            "means": self.means(),
            "errors": self.errors,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def evaluate_file(
    system: System, bundle: SignalBundle, name: str, params: ErleParams = ErleParams()
) -> tuple[list[dict], dict]:
    """Rows for every section of one file (state runs across sections), plus the processed signals."""
    if not bundle.sections:
        raise DataError(f"{name}: no condition sections")
    out = process(system, bundle.x, bundle.y, {"s": bundle.s, "d": bundle.d})
    rows = []
    for sec in bundle.sections:
        cut = slice(sec.start, sec.end)
        row = {k: None for k in REPORT_COLUMNS}
        row.update(file=name, condition=sec.condition)
        if sec.condition == "STFE":
            row["erle_db"] = erle(bundle.d, out["e"], bundle.n, params, cut)[0]
        elif sec.condition == "DT":
            row["component_erle_db"] = component_erle(out["d"], bundle.d, params, cut)
            row["speech_distortion_db"] = speech_preservation(out["s"], bundle.s, cut)
        elif sec.condition == "STNE":
            row["stne_deviation_db"] = speech_preservation(out["e"], bundle.y, cut)
        rows.append(row)
    return rows, out


def evaluate(
    system: System,
    bundles: Sequence[SignalBundle],
    names: Sequence[str] | None = None,
    params: ErleParams = ErleParams(),
    keep_outputs: bool = False,
) -> tuple[EvalReport, list[dict]]:
    """Evaluate condition files in order; failing files are recorded, not fatal."""
    names = list(names) if names is not None else [f"file{i:04d}" for i in range(len(bundles))]
    report = EvalReport(params=params)
    outputs = []
    for name, bundle in zip(names, bundles):
        try:
            rows, out = evaluate_file(system, bundle, name, params)
        except DataError as exc:
            report.errors.append({"file": name, "error": str(exc)})
            outputs.append({})
            continue
        report.rows.extend(rows)
        outputs.append(out if keep_outputs else {})
    return report, outputs
