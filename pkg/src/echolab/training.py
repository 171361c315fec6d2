"""Condition-aware minibatches, log-MSE losses, and the training schedule.

Every training file can serve any condition: an STFE entry mutes the nearend
speech, an STNE entry mutes the farend reference and hence the echo. SER and
SNR stay those of the full scene.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dsp
from .autodiff import AdamState, Tensor, adam_step, backward, load_arrays, ops, save_arrays, zero_grad
from .autodiff.tensor import NonFiniteError
from .enhance import masked_signals
from .errors import ConfigError, DataError
from .models import CrnModel
from .synth import CONDITIONS, TrainingPool, file_rng, remix_epoch

EPS_LOSS = 1e-12


# ---------------------------------------------------------------- condition splits


@dataclass(frozen=True)
class MinibatchConditionSplit:
    dt: int = 16
    stfe: int = 0
    stne: int = 0
    mode: str = "fixed"  # fixed | random
    batch_size: int = 16

    def __post_init__(self):
        if self.mode not in ("fixed", "random"):
            raise ConfigError(f"unknown MCS mode {self.mode!r}")
        if min(self.dt, self.stfe, self.stne) < 0:
            raise ConfigError("condition counts must be non-negative")
        if self.mode == "fixed" and self.dt + self.stfe + self.stne != self.batch_size:
            raise ConfigError(
                f"MCS {self.dt}/{self.stfe}/{self.stne} does not sum to the batch size {self.batch_size}"
            )

    @classmethod
    def parse(cls, text: str, batch_size: int | None = None) -> "MinibatchConditionSplit":
        """``"13/2/1"`` (DT/STFE/STNE) or ``"random"``."""
        text = str(text).strip().lower()
        if text in ("random", "rand"):
            return cls(0, 0, 0, "random", batch_size or 16)
        try:
            dt, stfe, stne = (int(v) for v in text.split("/"))
        except ValueError:
            raise ConfigError(f"MCS must look like 'dt/stfe/stne' or 'random', got {text!r}") from None
        return cls(dt, stfe, stne, "fixed", batch_size or dt + stfe + stne)

    def counts(self) -> dict[str, int]:
        return {"DT": self.dt, "STFE": self.stfe, "STNE": self.stne}

    def __str__(self) -> str:
        return "random" if self.mode == "random" else f"{self.dt}/{self.stfe}/{self.stne}"


@dataclass
class Entry:
    """One minibatch sequence with its components and condition."""

    x: np.ndarray
    s: np.ndarray
    n: np.ndarray
    d: np.ndarray
    condition: str

    @property
    def y(self) -> np.ndarray:
        return self.s + self.n + self.d


@dataclass
class Batch:
    x: np.ndarray
    s: np.ndarray
    n: np.ndarray
    d: np.ndarray
    conditions: list[str]

    @property
    def y(self) -> np.ndarray:
        return self.s + self.n + self.d

    @classmethod
    def stack(cls, entries: Sequence[Entry]) -> "Batch":
        return cls(
            *(np.stack([getattr(e, k) for e in entries]) for k in ("x", "s", "n", "d")),
            conditions=[e.condition for e in entries],
        )


def apply_condition(x, s, n, d, condition: str) -> Entry:
    """Realize a condition from a fully active scene by muting components."""
    if condition == "STFE":
        s = np.zeros_like(s)
    elif condition == "STNE":
        x, d = np.zeros_like(x), np.zeros_like(d)
    elif condition != "DT":
        raise ConfigError(f"unknown condition {condition!r}")
    return Entry(x, s, n, d, condition)


def excerpt_samples(frames: int, params: dsp.FrameParams = dsp.DEFAULT_PARAMS) -> int:
    """Excerpt length whose padded analysis yields exactly ``frames`` frames."""
    return (frames - 1) * params.frame_shift


class PoolSource:
    """Minibatch source over the training files of a pool; every file serves every condition."""

    def __init__(self, pool: TrainingPool, excerpt: int):
        self.pool = pool
        self.excerpt = excerpt
        self.files = pool.train_indices
        self._cache: dict[int, object] = {}

    def candidates(self, condition: str) -> list[int]:
        return self.files

    def entry(self, key: int, condition: str, rng: np.random.Generator) -> Entry:
        if key not in self._cache:
            self._cache[key] = self.pool.bundle(key)
        b = self._cache[key]
        if len(b) < self.excerpt:
            raise DataError(f"file {key} is shorter than the {self.excerpt}-sample excerpt")
        a = int(rng.integers(0, len(b) - self.excerpt + 1))
        cut = slice(a, a + self.excerpt)
        return apply_condition(b.x[cut], b.s[cut], b.n[cut], b.d[cut], condition)


class FixedSource:
    """A fixed list of pre-cut entries, each bound to its own condition."""

    def __init__(self, entries: Sequence[Entry]):
        self.entries = list(entries)

    def candidates(self, condition: str) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.condition == condition]

    def entry(self, key: int, condition: str, rng) -> Entry:
        return self.entries[key]


def sample_conditions(mcs: MinibatchConditionSplit, rng: np.random.Generator) -> list[str]:
    if mcs.mode == "random":
        return [CONDITIONS[i] for i in rng.integers(0, len(CONDITIONS), size=mcs.batch_size)]
    return [c for c, k in mcs.counts().items() for _ in range(k)]


def sample_minibatch(source, mcs: MinibatchConditionSplit, rng: np.random.Generator) -> Batch:
    """Exactly the requested condition counts; files drawn without replacement per condition."""
    conditions = sample_conditions(mcs, rng)
    entries = []
    for cond in CONDITIONS:
        need = conditions.count(cond)
        if need == 0:
            continue
        pool = source.candidates(cond)
        if len(pool) < need:
            raise DataError(f"condition {cond}: {need} sequences requested, only {len(pool)} available")
        for key in rng.choice(pool, size=need, replace=False):
            entries.append(source.entry(int(key), cond, rng))
    return Batch.stack(entries)


# ---------------------------------------------------------------- losses


def logmse(estimate, target) -> Tensor:
    """``10 log10(sum (z^ - z)^2 + 1e-12)`` over the last axis."""
    est = estimate if isinstance(estimate, Tensor) else ops.as_tensor(np.asarray(estimate, dtype=float))
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=float)
    if est.shape[-1] != tgt.shape[-1]:
        raise ValueError(f"length mismatch: {est.shape[-1]} vs {tgt.shape[-1]}")
    err = ops.sum(ops.square(est - tgt), axis=-1)
    return ops.mul(ops.log10(err + EPS_LOSS), 10.0)


@dataclass(frozen=True)
class LossWeights:
    """Per-condition weights of the speech-component (alpha) and echo-component (beta) terms."""

    alpha: dict = field(default_factory=lambda: {c: 0.0 for c in CONDITIONS})
    beta: dict = field(default_factory=lambda: {c: 0.0 for c in CONDITIONS})

    def __post_init__(self):
        for c in CONDITIONS:
            a, b = self.alpha.get(c, 0.0), self.beta.get(c, 0.0)
            if a < 0 or b < 0 or a + b >= 1:
                raise ConfigError(f"{c}: weights alpha={a}, beta={b} need alpha, beta >= 0 and alpha + beta < 1")

    def of(self, condition: str) -> tuple[float, float]:
        return float(self.alpha.get(condition, 0.0)), float(self.beta.get(condition, 0.0))

    @property
    def is_plain(self) -> bool:
        return all(self.of(c) == (0.0, 0.0) for c in CONDITIONS)

    @classmethod
    def make(cls, **pairs: tuple[float, float]) -> "LossWeights":
        alpha = {c: float(pairs.get(c, (0, 0))[0]) for c in CONDITIONS}
        beta = {c: float(pairs.get(c, (0, 0))[1]) for c in CONDITIONS}
        return cls(alpha, beta)


PRESETS: dict[str, tuple[str | None, LossWeights]] = {
    "plain": (None, LossWeights()),
    "ca-15-1-0": ("15/1/0", LossWeights.make(DT=(0.2, 0.2), STFE=(0.2, 0.0))),
    "ca-16-0-0": ("16/0/0", LossWeights.make(DT=(0.33, 0.0))),
}


def combine_losses(v_out, v_speech, v_echo, alpha: float, beta: float):
    """``(1 - a - b) v_out + a v_speech + b v_echo``; works on floats and tensors."""
    return (1.0 - alpha - beta) * v_out + alpha * v_speech + beta * v_echo


def condition_loss(e, s, n, s_tilde, d_tilde, condition: str, weights: LossWeights):
    """Per-entry condition-aware loss over one time sequence."""
    alpha, beta = weights.of(condition)
    base = logmse(e, np.asarray(s) + np.asarray(n))
    if alpha == 0.0 and beta == 0.0:
        return base
    speech = logmse(s_tilde, s)
    echo = logmse(d_tilde, np.zeros(np.shape(d_tilde.data if isinstance(d_tilde, Tensor) else d_tilde)))
    return combine_losses(base, speech, echo, alpha, beta)


def white_box_components(G, S, D, params: dsp.FrameParams = dsp.DEFAULT_PARAMS):
    """Time signals of ``G S`` and ``G D`` (OLA, untrimmed)."""
    G, S, D = (np.asarray(a) for a in (G, S, D))
    if not G.shape == S.shape == D.shape:
        raise ValueError(f"shape mismatch: G {G.shape}, S {S.shape}, D {D.shape}")
    return dsp.synthesize(G * S, params), dsp.synthesize(G * D, params)


def batch_loss(model: CrnModel, batch: Batch, weights: LossWeights, params=dsp.DEFAULT_PARAMS) -> Tensor:
    """Mean of per-entry condition losses through the full differentiable chain."""
    comps = {} if weights.is_plain else {"s": batch.s, "d": batch.d}
    sig, _ = masked_signals(model, batch.x, batch.y, comps, params)
    target = batch.s + batch.n
    e = sig["e"]
    per_entry = logmse(e, target)  # (B,)
    if not weights.is_plain:
        coef = np.array([[1 - sum(weights.of(c)), *weights.of(c)] for c in batch.conditions])
        speech = logmse(sig["s"], batch.s)
        echo = logmse(sig["d"], np.zeros_like(batch.d))
        per_entry = (
            ops.mul(per_entry, coef[:, 0]) + ops.mul(speech, coef[:, 1]) + ops.mul(echo, coef[:, 2])
        )
    return ops.mean(per_entry)


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class TrainSchedule:
    initial_lr: float = 1e-4
    min_lr: float = 1e-5
    halve_patience: int = 4
    stop_patience: int = 10
    max_epochs: int = 100
    batch_size: int = 16
    bptt_frames: int = 200
    steps_per_epoch: int | None = None  # None: one pass over the training files

    def __post_init__(self):
        if not 0 < self.min_lr < self.initial_lr:
            raise ConfigError("need 0 < min_lr < initial_lr")
        if self.bptt_frames < 2 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("bptt_frames >= 2, batch_size >= 1 and max_epochs >= 1 are required")


FINETUNE_SCHEDULE = TrainSchedule(initial_lr=2.5e-5, min_lr=2.5e-6, max_epochs=30)


@dataclass
class LrController:
    """Halve on plateaus, stop on long plateaus, on the LR floor, or at the epoch limit.

    Improvement means a strictly lower validation loss than the best so far.
    """

    schedule: TrainSchedule
    lr: float = 0.0
    best: float = float("inf")
    stagnant: int = 0  # epochs since the last improvement
    plateau: int = 0  # epochs since the last improvement or LR change
    epochs: int = 0
    stopped: str | None = None

    def __post_init__(self):
        if self.lr == 0.0:
            self.lr = self.schedule.initial_lr

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns True when this epoch set a new best."""
        self.epochs += 1
        improved = val_loss < self.best
        if improved:
            self.best, self.stagnant, self.plateau = val_loss, 0, 0
        else:
            self.stagnant += 1
            self.plateau += 1
        if self.stagnant >= self.schedule.stop_patience:
            self.stopped = "stagnation"
        elif self.plateau >= self.schedule.halve_patience:
            if self.lr / 2 < self.schedule.min_lr:
                self.stopped = "lr-floor"
            else:
                self.lr /= 2
                self.plateau = 0
        if self.stopped is None and self.epochs >= self.schedule.max_epochs:
            self.stopped = "max-epochs"
        return improved

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "ctl/lr": np.array([self.lr]),
            "ctl/best": np.array([self.best]),
            "ctl/counters": np.array([self.stagnant, self.plateau, self.epochs], dtype=float),
        }

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.lr = float(arrays["ctl/lr"][0])
        self.best = float(arrays["ctl/best"][0])
        self.stagnant, self.plateau, self.epochs = (int(v) for v in arrays["ctl/counters"])


# ---------------------------------------------------------------- loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_val: float
    stopped: str | None
    steps: int


def validation_batches(pool: TrainingPool, mcs: MinibatchConditionSplit, excerpt: int, seed: int) -> list[Batch]:
    """Fixed excerpts of the validation files, one per condition the MCS uses."""
    conds = [c for c, k in mcs.counts().items() if k > 0] if mcs.mode == "fixed" else list(CONDITIONS)
    rng = file_rng(seed, 2**30)
    entries = []
    for i in sorted(pool.validation):
        b = pool.bundle(i)
        a = int(rng.integers(0, len(b) - excerpt + 1))
        cut = slice(a, a + excerpt)
        for c in conds:
            entries.append(apply_condition(b.x[cut], b.s[cut], b.n[cut], b.d[cut], c))
    return [Batch.stack(entries[k : k + mcs.batch_size]) for k in range(0, len(entries), mcs.batch_size)]


def evaluate_loss(model: CrnModel, batches: Sequence[Batch], weights: LossWeights) -> float:
    total, count = 0.0, 0
    for b in batches:
        total += float(batch_loss(model, b, weights).data) * len(b.conditions)
        count += len(b.conditions)
    return total / count if count else float("nan")


def adam_arrays(state: AdamState) -> dict[str, np.ndarray]:
    out = {"adam/step": np.array([state.step], dtype=float)}
    out.update({f"adam/m/{k}": v for k, v in state.m.items()})
    out.update({f"adam/v/{k}": v for k, v in state.v.items()})
    return out


def restore_adam(arrays: dict[str, np.ndarray], lr: float) -> AdamState:
    state = AdamState(lr=lr, step=int(arrays.get("adam/step", [0])[0]))
    for key, value in arrays.items():
        if key.startswith("adam/m/"):
            state.m[key[7:]] = value.copy()
        elif key.startswith("adam/v/"):
            state.v[key[7:]] = value.copy()
    return state


def save_checkpoint(path, model: CrnModel, adam: AdamState, ctl: LrController, history: list[EpochRecord]):
    arrays = {f"param/{k}": v for k, v in model.state_arrays().items()}
    arrays.update(adam_arrays(adam))
    arrays.update(ctl.to_arrays())
    arrays["history"] = np.array(
        [[r.epoch, r.train_loss, r.val_loss, r.lr] for r in history], dtype=float
    ).reshape(-1, 4)
    save_arrays(path, arrays)


def load_model_arrays(path) -> dict[str, np.ndarray]:
    arrays = load_arrays(path)
    return {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}


def write_history(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])


def train(
    model: CrnModel,
    pool: TrainingPool,
    schedule: TrainSchedule = TrainSchedule(),
    mcs: MinibatchConditionSplit = MinibatchConditionSplit(),
    weights: LossWeights = LossWeights(),
    seed: int = 0,
    run_dir: str | Path | None = None,
    resume: bool = False,
    remix: bool = True,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Epoch loop with remixing, Adam, validation-driven LR control and checkpoints.

    The randomness of epoch ``k`` derives from ``(seed, k)`` only, so a resumed
    run continues exactly as an uninterrupted one.
    """
    if mcs.batch_size != schedule.batch_size:
        mcs = replace(mcs, batch_size=schedule.batch_size)
    if not pool.validation:
        raise ConfigError("the training pool needs a validation split for LR control")
    if not pool.train_indices:
        raise ConfigError("the training pool has no training files")
    excerpt = excerpt_samples(schedule.bptt_frames)
    run_dir = Path(run_dir) if run_dir is not None else None
    ctl = LrController(schedule)
    adam = AdamState(lr=ctl.lr)
    history: list[EpochRecord] = []
    steps_done = 0
    if resume:
        if run_dir is None or not (run_dir / "last.ckpt").exists():
            raise DataError("nothing to resume: last.ckpt not found")
        arrays = load_arrays(run_dir / "last.ckpt")
        for k, p in model.params.items():
            p.data[...] = arrays[f"param/{k}"]
        ctl.load_arrays(arrays)
        adam = restore_adam(arrays, ctl.lr)
        history = [EpochRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in arrays["history"]]
        steps_done = adam.step
        if ctl.epochs >= schedule.max_epochs:
            ctl.stopped = "max-epochs"

    val = validation_batches(pool, mcs, excerpt, seed)
    steps = schedule.steps_per_epoch or max(1, len(pool.train_indices) // mcs.batch_size)
    names = list(model.params)

    while ctl.stopped is None:
        epoch = ctl.epochs + 1
        epoch_pool = remix_epoch(pool, int(file_rng(seed, epoch).integers(2**31))) if remix and epoch > 1 else pool
        source = PoolSource(epoch_pool, excerpt)
        rng = file_rng(seed, epoch)
        adam.lr = ctl.lr
        losses = []
        for step in range(steps):
            batch = sample_minibatch(source, mcs, rng)
            try:
                loss = batch_loss(model, batch, weights)
                grads = backward(loss, model.params)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, step {step}: {exc}") from exc
            if not all(np.all(np.isfinite(grads[k])) for k in names):
                raise NonFiniteError(f"epoch {epoch}, step {step}: non-finite gradient")
            adam_step(model.params, grads, adam)
            zero_grad(model.params)
            losses.append(float(loss.data))
            steps_done += 1
        val_loss = evaluate_loss(model, val, weights)
        if not np.isfinite(val_loss):
            raise NonFiniteError(f"epoch {epoch}: validation loss is not finite")
        record = EpochRecord(epoch, float(np.mean(losses)), val_loss, adam.lr)
        history.append(record)
        improved = ctl.update(val_loss)
        if log:
            log(
                f"epoch {epoch:3d}  train {record.train_loss:8.3f}  val {val_loss:8.3f}  lr {record.lr:.3g}"
                + ("  *" if improved else "")
            )
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            if improved:
                save_checkpoint(run_dir / "best.ckpt", model, adam, ctl, history)
            save_checkpoint(run_dir / "last.ckpt", model, adam, ctl, history)
            write_history(run_dir / "history.csv", history)
    if log:
        log(f"stopped: {ctl.stopped}")
    return TrainResult(history, ctl.best, ctl.stopped, steps_done)


def finetune(
    model: CrnModel,
    pool: TrainingPool,
    preset: str = "plain",
    mcs: MinibatchConditionSplit | None = None,
    schedule: TrainSchedule = FINETUNE_SCHEDULE,
    **kwargs,
) -> TrainResult:
    """Continue training with a fine-tuning preset (its MCS overrides ``mcs`` unless plain)."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    preset_mcs, weights = PRESETS[preset]
    if preset_mcs is not None:
        mcs = MinibatchConditionSplit.parse(preset_mcs, schedule.batch_size)
    return train(model, pool, schedule, mcs or MinibatchConditionSplit(), weights, **kwargs)


# ---------------------------------------------------------------- micro-overfit


def fit_fixed(
    model: CrnModel,
    batch: Batch,
    steps: int,
    lr: float,
    weights: LossWeights = LossWeights(),
    log_every: int = 0,
    log: Callable[[str], None] | None = None,
) -> list[float]:
    """Repeated Adam steps on one fixed batch; returns the loss before every step."""
    adam = AdamState(lr=lr)
    trace = []
    for step in range(steps):
        loss = batch_loss(model, batch, weights)
        grads = backward(loss, model.params)
        adam_step(model.params, grads, adam)
        zero_grad(model.params)
        trace.append(float(loss.data))
        if log and log_every and step % log_every == 0:
            log(f"step {step:4d}  loss {trace[-1]:8.3f}")
    return trace


def history_json(result: TrainResult) -> str:
    return json.dumps([asdict(r) for r in result.history])
