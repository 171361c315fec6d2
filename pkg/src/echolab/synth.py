"""Echo scene synthesis: loudspeaker nonlinearity, image-method rooms, mixing.

A scene is ``y = s + n + d`` with ``d = f_NL(x) * h``. Every random choice of a
file derives from ``SeedSequence([master_seed, index])`` so files can be made
in any order or in parallel with identical results.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps
from scipy import special

from . import dsp
from .errors import ConfigError, DataError

SPEED_OF_SOUND = 343.0
CONDITIONS = ("DT", "STFE", "STNE")
SECTION_ORDER = ("STFE", "STNE", "DT")
REMIX_STREAM = 2**31  # seed-sequence key reserved for epoch remixing


# ---------------------------------------------------------------- nonlinearity


@dataclass(frozen=True)
class Nonlinearity:
    kind: str = "identity"  # sef | arctan | identity
    mu: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind == "sef":
            if self.mu is None or not self.mu > 0:
                raise ConfigError(f"SEF shape mu must be > 0, got {self.mu}")
        elif self.kind == "arctan":
            if self.alpha is None or not self.alpha > 0:
                raise ConfigError(f"arctan shape alpha must be > 0, got {self.alpha}")
        elif self.kind != "identity":
            raise ConfigError(f"unknown nonlinearity {self.kind!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "sef":
            return sef_nonlinearity(x, self.mu)
        if self.kind == "arctan":
            return arctan_nonlinearity(x, self.alpha)
        return np.asarray(x, dtype=float).copy()

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def sef_nonlinearity(x: np.ndarray, mu: float) -> np.ndarray:
    """Scaled error function ``f(v) = int_0^v exp(-t^2 / (2 mu^2)) dt``."""
    if not mu > 0:
        raise ConfigError(f"SEF shape mu must be > 0, got {mu}")
    x = np.asarray(x, dtype=float)
    return mu * np.sqrt(np.pi / 2) * special.erf(x / (mu * np.sqrt(2)))


def arctan_nonlinearity(x: np.ndarray, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ConfigError(f"arctan shape alpha must be > 0, got {alpha}")
    return np.arctan(alpha * np.asarray(x, dtype=float)) / alpha


# ---------------------------------------------------------------- rooms


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple[float, float, float]
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]
    reflection_coeffs: tuple[float, ...]  # x0, x1, y0, y1, z0, z1
    rir_length: int = 4096
    seed: int = 0

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ConfigError(f"room dimensions must be three positive lengths, got {self.dimensions}")
        for name in ("source_pos", "mic_pos"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
                raise ConfigError(f"{name} {tuple(p)} is not strictly inside the room {tuple(dims)}")
        beta = np.asarray(self.reflection_coeffs, dtype=float)
        if beta.shape != (6,) or np.any(beta < 0) or np.any(beta >= 1):
            raise ConfigError("six reflection coefficients in [0, 1) are required")
        if self.rir_length <= 0:
            raise ConfigError("rir_length must be positive")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def simulate_rir(room: RoomSpec, sample_rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    """Image-source impulse response with delays rounded to the nearest sample.

    Each image contributes ``prod(beta^reflections) / (4 pi dist)`` at
    ``round(dist * fs / c)``; images beyond ``rir_length`` are dropped.
    """
    dims = np.asarray(room.dimensions, dtype=float)
    src = np.asarray(room.source_pos, dtype=float)
    mic = np.asarray(room.mic_pos, dtype=float)
    beta = np.asarray(room.reflection_coeffs, dtype=float).reshape(3, 2)
    reach = room.rir_length * SPEED_OF_SOUND / sample_rate
    h = np.zeros(room.rir_length)

    axes = []
    for a in range(3):
        order = int(np.ceil(reach / (2 * dims[a]))) + 1
        l = np.arange(-order, order + 1)
        coord, gain = [], []
        for u in (0, 1):
            coord.append((1 - 2 * u) * src[a] - mic[a] + 2 * l * dims[a])
            # |l - u| hits on the near wall, |l| on the far wall
            with np.errstate(divide="ignore"):
                gain.append(np.power(beta[a, 0], np.abs(l - u)) * np.power(beta[a, 1], np.abs(l)))
        axes.append((np.concatenate(coord), np.concatenate(gain)))

    (cx, gx), (cy, gy), (cz, gz) = axes
    dist = np.sqrt(cx[:, None, None] ** 2 + cy[None, :, None] ** 2 + cz[None, None, :] ** 2)
    amp = gx[:, None, None] * gy[None, :, None] * gz[None, None, :]
    delay = np.rint(dist * sample_rate / SPEED_OF_SOUND).astype(int)
    keep = (delay < room.rir_length) & (amp > 0)
    np.add.at(h, delay[keep], amp[keep] / (4 * np.pi * dist[keep]))
    return h


@dataclass(frozen=True)
class RoomRanges:
    """Sampling ranges for random rooms."""

    width: tuple[float, float] = (3.0, 8.0)
    depth: tuple[float, float] = (3.0, 8.0)
    height: tuple[float, float] = (2.4, 3.6)
    reflection: tuple[float, float] = (0.2, 0.8)
    distance: tuple[float, float] = (0.3, 2.0)
    wall_margin: float = 0.3
    rir_length: int = 4096


TEST_ROOMS = RoomRanges(
    width=(6.0, 12.0), depth=(6.0, 12.0), height=(3.0, 5.0), reflection=(0.4, 0.9), distance=(0.2, 4.0)
)


def draw_room(rng: np.random.Generator, ranges: RoomRanges = RoomRanges(), seed: int = 0) -> RoomSpec:
    dims = np.array([rng.uniform(*ranges.width), rng.uniform(*ranges.depth), rng.uniform(*ranges.height)])
    lo, hi = ranges.wall_margin, dims - ranges.wall_margin
    mic = rng.uniform(lo, hi)
    for _ in range(100):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        src = mic + rng.uniform(*ranges.distance) * direction
        if np.all(src > lo) and np.all(src < hi):
            break
    else:
        src = rng.uniform(lo, hi)
    beta = rng.uniform(*ranges.reflection, size=6)
    return RoomSpec(
        tuple(dims.tolist()), tuple(src.tolist()), tuple(mic.tolist()), tuple(beta.tolist()), ranges.rir_length, seed
    )


# ---------------------------------------------------------------- mixing


@dataclass(frozen=True)
class ConditionSection:
    condition: str
    start: int
    end: int


@dataclass
class SignalBundle:
    x: np.ndarray
    s: np.ndarray
    n: np.ndarray
    d: np.ndarray
    y: np.ndarray
    ser_db: float
    snr_db: float  # inf for noiseless files
    sections: list[ConditionSection] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(a) for a in (self.x, self.s, self.n, self.d, self.y)}
        if len(lengths) != 1:
            raise DataError(f"bundle signals differ in length: {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.y)


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def ratio_db(a: np.ndarray, b: np.ndarray) -> float:
    return 10 * np.log10(power(a) / power(b))


def convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Linear convolution truncated to ``len(x)``."""
    return sps.fftconvolve(x, h)[: len(x)]


def _scale_to(ref_power: float, sig: np.ndarray, ratio: float) -> np.ndarray:
    p = power(sig)
    if p == 0:
        return np.zeros_like(sig)
    return sig * np.sqrt(ref_power / (p * 10 ** (ratio / 10)))


def mix_scene(
    s: np.ndarray,
    n: np.ndarray,
    x: np.ndarray,
    nl: Nonlinearity,
    h: np.ndarray,
    ser_db: float,
    snr_db: float | None,
    echo: np.ndarray | None = None,
) -> SignalBundle:
    """Mix a scene at the requested full-file SER and SNR.

    ``snr_db=None`` (or inf) gives a noiseless file. ``echo`` may carry a
    precomputed unscaled ``f_NL(x) * h`` to skip the convolution.
    """
    length = min(len(s), len(n), len(x))
    s, n, x = (np.asarray(a, dtype=float)[:length] for a in (s, n, x))
    ps = power(s)
    if ps == 0:
        raise DataError("nearend speech is silent; SER/SNR scaling is undefined")
    d = convolve(nl(x), h) if echo is None else np.asarray(echo, dtype=float)[:length]
    d = _scale_to(ps, d, ser_db)
    if snr_db is None or np.isinf(snr_db):
        n, snr_db = np.zeros(length), float("inf")
    else:
        n = _scale_to(ps, n, snr_db)
    return SignalBundle(x=x, s=s, n=n, d=d, y=s + n + d, ser_db=float(ser_db), snr_db=float(snr_db))


def normalize_headroom(bundle: SignalBundle, peak: float = 0.99) -> SignalBundle:
    """Scale s, n, d (and so y) jointly so that ``max|y| <= peak``; ratios are unchanged."""
    top = float(np.max(np.abs(bundle.y))) if len(bundle) else 0.0
    if top <= peak:
        return bundle
    g = peak / top
    s, n, d = bundle.s * g, bundle.n * g, bundle.d * g
    return replace(bundle, s=s, n=n, d=d, y=s + n + d)


# ---------------------------------------------------------------- catalogs


class SyntheticCatalog:
    """Procedural speech-like bursts and colored noise, so everything runs hermetically."""

    name = "synthetic"

    def speech(self, rng: np.random.Generator, length: int) -> np.ndarray:
        fs = dsp.SAMPLE_RATE
        out = np.zeros(length)
        pos = int(rng.integers(0, fs // 4))
        while pos < length:
            dur = int(rng.uniform(0.15, 0.45) * fs)
            seg = min(dur, length - pos)
            t = np.arange(seg) / fs
            f0 = rng.uniform(90, 250) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(1, 4) * t))
            phase = 2 * np.pi * np.cumsum(f0) / fs
            harm = np.arange(1, 25)
            formant = rng.uniform(300, 3000)
            amps = np.exp(-((harm * f0.mean() - formant) ** 2) / (2 * 600.0**2)) + 0.05 / harm
            voiced = (amps[:, None] * np.sin(harm[:, None] * phase[None, :])).sum(axis=0)
            envelope = np.sin(np.pi * np.arange(seg) / dur) ** 2
            out[pos : pos + seg] += rng.uniform(0.05, 0.3) * envelope * voiced / np.max(np.abs(voiced))
            pos += seg + int(rng.uniform(0.02, 0.4) * fs)
        return out

    def noise(self, rng: np.random.Generator, length: int) -> np.ndarray:
        white = rng.standard_normal(length)
        pole = rng.uniform(0.0, 0.97)
        colored = sps.lfilter([1.0], [1.0, -pole], white)
        return 0.05 * colored / np.std(colored)


class WavCatalog:
    """Random cuts from directories of 16 kHz mono WAV files."""

    name = "wav"

    def __init__(self, speech_dir: str | Path, noise_dir: str | Path):
        self.speech_files = sorted(Path(speech_dir).glob("*.wav"))
        self.noise_files = sorted(Path(noise_dir).glob("*.wav"))
        if not self.speech_files:
            raise DataError(f"no speech WAV files in {speech_dir}")
        if not self.noise_files:
            raise DataError(f"no noise WAV files in {noise_dir}")

    @staticmethod
    def _cut(rng, files, length):
        audio = dsp.read_wav(files[int(rng.integers(len(files)))])
        if len(audio) == 0:
            raise DataError("empty WAV file in catalog")
        reps = -(-length // len(audio)) + 1
        audio = np.tile(audio, reps)
        start = int(rng.integers(0, len(audio) - length + 1))
        return audio[start : start + length]

    def speech(self, rng, length):
        return self._cut(rng, self.speech_files, length)

    def noise(self, rng, length):
        return self._cut(rng, self.noise_files, length)


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class SplitSpec:
    """Parameter distributions for one dataset split."""

    ser_range: tuple[float, float] | None = (-12.4, 22.4)
    snr_range: tuple[float, float] | None = (-2.4, 32.4)
    ser_values: tuple[float, ...] | None = None
    snr_values: tuple[float, ...] | None = None
    noiseless_prob: float = 0.1
    nonlinearity: str = "sef"
    mu_values: tuple[float, ...] = (0.5, 1.0, 10.0, 999.0)
    alpha: float = 1e-4
    rooms: RoomRanges = RoomRanges()

    def draw_ser(self, rng) -> float:
        if self.ser_values:
            return float(rng.choice(self.ser_values))
        return float(rng.uniform(*self.ser_range))

    def draw_snr(self, rng) -> float:
        if rng.random() < self.noiseless_prob:
            return float("inf")
        if self.snr_values:
            return float(rng.choice(self.snr_values))
        return float(rng.uniform(*self.snr_range))

    def draw_nonlinearity(self, rng) -> Nonlinearity:
        if self.nonlinearity == "sef":
            return Nonlinearity("sef", mu=float(rng.choice(self.mu_values)))
        if self.nonlinearity == "arctan":
            return Nonlinearity("arctan", alpha=self.alpha)
        return Nonlinearity()


TRAIN_SPLIT = SplitSpec()
DEV_SPLIT = SplitSpec(
    ser_values=tuple(range(-10, 21, 5)),
    snr_values=tuple(range(0, 31, 5)),
    noiseless_prob=0.0,
    mu_values=(0.2, 0.4, 1.5, 12.0, 999.0),
)
TEST_SPLIT = SplitSpec(
    ser_values=tuple(range(-9, 10, 3)),
    snr_values=tuple(range(5, 21, 3)),
    noiseless_prob=0.0,
    nonlinearity="arctan",
    rooms=TEST_ROOMS,
)
SPLITS = {"train": TRAIN_SPLIT, "dev": DEV_SPLIT, "test": TEST_SPLIT}


def file_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass(frozen=True)
class TrainingParams:
    ser_db: float
    snr_db: float
    nonlinearity: Nonlinearity
    room: RoomSpec


def draw_training_params(rng: np.random.Generator, split: SplitSpec = TRAIN_SPLIT, seed: int = 0) -> TrainingParams:
    """Scalar draws of one training file; cheap, no audio."""
    return TrainingParams(
        ser_db=split.draw_ser(rng),
        snr_db=split.draw_snr(rng),
        nonlinearity=split.draw_nonlinearity(rng),
        room=draw_room(rng, split.rooms, seed),
    )


def make_training_file(
    seed: int, catalog, seconds: float = 10.0, split: SplitSpec = TRAIN_SPLIT, index: int = 0
) -> SignalBundle:
    """One fully active scene (nearend and farend talking) with drawn SER, SNR, f_NL and room."""
    if catalog is None:
        raise DataError("a source catalog is required")
    rng = file_rng(seed, index)
    params = draw_training_params(rng, split, seed)
    length = int(round(seconds * dsp.SAMPLE_RATE))
    s = catalog.speech(rng, length)
    x = catalog.speech(rng, length)
    n = catalog.noise(rng, length)
    echo = convolve(params.nonlinearity(x), simulate_rir(params.room))
    bundle = mix_scene(s, n, x, params.nonlinearity, None, params.ser_db, params.snr_db, echo=echo)
    bundle = normalize_headroom(bundle)
    bundle.sections = [ConditionSection("DT", 0, length)]
    bundle.meta = {
        "seed": int(seed),
        "index": int(index),
        "nonlinearity": params.nonlinearity.to_dict(),
        "room": params.room.to_dict(),
    }
    return bundle


def make_condition_file(
    seed: int, catalog, split: SplitSpec = DEV_SPLIT, index: int = 0, section_seconds=(8.0, 12.0)
) -> SignalBundle:
    """A file with STFE, STNE and DT sections in that order.

    Echo is computed per section so no tail leaks from a farend section into
    the following nearend-only section.
    """
    if catalog is None:
        raise DataError("a source catalog is required")
    rng = file_rng(seed, index)
    fs = dsp.SAMPLE_RATE
    lengths = [int(round(rng.uniform(*section_seconds) * fs)) for _ in SECTION_ORDER]
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    total = int(bounds[-1])
    nl = split.draw_nonlinearity(rng)
    room = draw_room(rng, split.rooms, seed)
    ser, snr = split.draw_ser(rng), split.draw_snr(rng)
    h = simulate_rir(room)

    s, x = np.zeros(total), np.zeros(total)
    echo = np.zeros(total)
    sections = []
    for cond, a, b in zip(SECTION_ORDER, bounds[:-1], bounds[1:]):
        a, b = int(a), int(b)
        sections.append(ConditionSection(cond, a, b))
        if cond in ("DT", "STNE"):
            s[a:b] = catalog.speech(rng, b - a)
        if cond in ("DT", "STFE"):
            x[a:b] = catalog.speech(rng, b - a)
            echo[a:b] = convolve(nl(x[a:b]), h)
    n = catalog.noise(rng, total)
    bundle = normalize_headroom(mix_scene(s, n, x, nl, h, ser, snr, echo=echo))
    bundle.sections = sections
    bundle.meta = {"seed": int(seed), "index": int(index), "nonlinearity": nl.to_dict(), "room": room.to_dict()}
    return bundle


def section_mask(bundle: SignalBundle, condition: str) -> np.ndarray:
    mask = np.zeros(len(bundle), dtype=bool)
    for sec in bundle.sections:
        if sec.condition == condition:
            mask[sec.start : sec.end] = True
    return mask


# ---------------------------------------------------------------- training pool and remixing


@dataclass(frozen=True)
class Pairing:
    """Which pool entries form one training file and at which ratios."""

    speech: int
    echo: int
    noise: int
    ser_db: float
    snr_db: float


@dataclass
class TrainingPool:
    """Component pools plus the current pairing of every file.

    ``echo[i]`` holds ``(x, f_NL(x) * h)`` unscaled; ``noise[i]`` is unscaled.
    Files listed in ``validation`` are never remixed.
    """

    speech: list[np.ndarray]
    echo: list[tuple[np.ndarray, np.ndarray]]
    noise: list[np.ndarray]
    pairings: list[Pairing]
    validation: frozenset[int] = frozenset()
    meta: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairings)

    def bundle(self, i: int) -> SignalBundle:
        p = self.pairings[i]
        x, echo = self.echo[p.echo]
        b = mix_scene(self.speech[p.speech], self.noise[p.noise], x, Nonlinearity(), None, p.ser_db, p.snr_db, echo)
        b = normalize_headroom(b)
        b.sections = [ConditionSection("DT", 0, len(b))]
        b.meta = dict(self.meta[i]) if self.meta else {}
        b.meta["pairing"] = asdict(p)
        return b

    @property
    def train_indices(self) -> list[int]:
        return [i for i in range(len(self)) if i not in self.validation]


def build_training_pool(
    seed: int, catalog, n_files: int, n_validation: int = 0, seconds: float = 10.0, split: SplitSpec = TRAIN_SPLIT
) -> TrainingPool:
    if catalog is None:
        raise DataError("a source catalog is required")
    if not 0 <= n_validation <= n_files:
        raise ConfigError("validation count must lie in [0, n_files]")
    length = int(round(seconds * dsp.SAMPLE_RATE))
    speech, echo, noise, pairings, meta = [], [], [], [], []
    for i in range(n_files):
        rng = file_rng(seed, i)
        params = draw_training_params(rng, split, seed)
        s = catalog.speech(rng, length)
        x = catalog.speech(rng, length)
        n = catalog.noise(rng, length)
        speech.append(s)
        echo.append((x, convolve(params.nonlinearity(x), simulate_rir(params.room))))
        noise.append(n)
        pairings.append(Pairing(i, i, i, params.ser_db, params.snr_db))
        meta.append({"seed": int(seed), "index": i, "nonlinearity": params.nonlinearity.to_dict(),
                     "room": params.room.to_dict()})
    validation = frozenset(range(n_files - n_validation, n_files))
    return TrainingPool(speech, echo, noise, pairings, validation, meta)


def remix_epoch(pool: TrainingPool, epoch_seed: int, split: SplitSpec = TRAIN_SPLIT) -> TrainingPool:
    """Reshuffle speech/echo/noise pairings of the training files with fresh SER/SNR.

    Only components of training files take part; the validation files keep
    their pairing and ratios, so they stay bit-identical.
    """
    rng = file_rng(epoch_seed, REMIX_STREAM)
    train = pool.train_indices
    pairings = list(pool.pairings)
    perms = [rng.permutation(train) for _ in range(3)]
    for j, i in enumerate(train):
        sp, ec, no = (int(p[j]) for p in perms)
        pairings[i] = Pairing(
            pool.pairings[sp].speech, pool.pairings[ec].echo, pool.pairings[no].noise,
            split.draw_ser(rng), split.draw_snr(rng),
        )
    return replace(pool, pairings=pairings)


# ---------------------------------------------------------------- manifests


SIGNALS = ("x", "s", "n", "d", "y")


def write_bundle(bundle: SignalBundle, directory: str | Path, stem: str) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    record = {}
    for name in SIGNALS:
        path = f"{stem}_{name}.wav"
        dsp.write_wav(directory / path, getattr(bundle, name))
        record[name] = path
    record.update(
        ser_db=bundle.ser_db,
        snr_db=None if np.isinf(bundle.snr_db) else bundle.snr_db,
        sections=[asdict(s) for s in bundle.sections],
        **bundle.meta,
    )
    return record


def write_manifest(records: Sequence[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} not found")
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{line_no}: {exc}") from exc
    return records


def load_bundle(record: dict, directory: str | Path) -> SignalBundle:
    """Load a manifest record; ``y`` is rebuilt as ``s + n + d`` from the quantized components."""
    directory = Path(directory)
    try:
        sig = {name: dsp.read_wav(directory / record[name]) for name in ("x", "s", "n", "d")}
    except (KeyError, FileNotFoundError) as exc:
        raise DataError(f"incomplete manifest record: {exc}") from exc
    snr = record.get("snr_db")
    meta = {k: v for k, v in record.items() if k not in SIGNALS + ("ser_db", "snr_db", "sections")}
    return SignalBundle(
        y=sig["s"] + sig["n"] + sig["d"],
        ser_db=float(record["ser_db"]),
        snr_db=float("inf") if snr is None else float(snr),
        sections=[ConditionSection(**s) for s in record.get("sections", [])],
        meta=meta,
        **sig,
    )


def write_training_pool(pool: TrainingPool, directory: str | Path) -> list[dict]:
    """Write realized training files plus each file's unscaled noise source."""
    directory = Path(directory)
    records = []
    for i in range(len(pool)):
        stem = f"train{i:05d}"
        record = write_bundle(pool.bundle(i), directory, stem)
        dsp.write_wav(directory / f"{stem}_nsrc.wav", pool.noise[pool.pairings[i].noise])
        record["n_source"] = f"{stem}_nsrc.wav"
        record["split"] = "validation" if i in pool.validation else "train"
        records.append(record)
    return records


def read_training_pool(records: Sequence[dict], directory: str | Path) -> TrainingPool:
    """Rebuild a pool from a train-style manifest; every record becomes its own pairing."""
    speech, echo, noise, pairings, meta, validation = [], [], [], [], [], set()
    for i, record in enumerate(records):
        if "n_source" not in record:
            raise DataError(f"record {i} is not a training-pool record (no noise source)")
        b = load_bundle(record, directory)
        speech.append(b.s)
        echo.append((b.x, b.d))
        noise.append(dsp.read_wav(Path(directory) / record["n_source"]))
        pairings.append(Pairing(i, i, i, b.ser_db, b.snr_db))
        meta.append({k: v for k, v in b.meta.items() if k not in ("n_source", "split", "pairing")})
        if record.get("split") == "validation":
            validation.add(i)
    return TrainingPool(speech, echo, noise, pairings, frozenset(validation), meta)
