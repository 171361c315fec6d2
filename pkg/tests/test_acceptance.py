"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL verdict with the measured values; the verdicts
are printed as one line per criterion in the pytest terminal summary.
"""
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml
from conftest import ACCEPTANCE

from echolab import cli, dsp, synth
from echolab.autodiff import conv_freq, convlstm_sequence, deconv_freq, depthwise_conv, gru_sequence, ops
from echolab.autodiff.gradcheck import check_gradients
from echolab.enhance import ConstantGain, identity_system, mute_system
from echolab.metrics import evaluate
from echolab.models import CrnModel, apply_ablation, build_model, count_flops, ggcrn16
from echolab.training import (
    PRESETS,
    Entry,
    FixedSource,
    LossWeights,
    MinibatchConditionSplit,
    PoolSource,
    batch_loss,
    condition_loss,
    excerpt_samples,
    logmse,
    sample_minibatch,
)

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))
import micro_overfit  # noqa: E402


def verdict(number: int, checks: list[tuple[str, bool, str]]) -> None:
    """Record the criterion verdict and fail the test with every failing check listed."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{name} {'ok' if good else 'FAILED'} ({info})" for name, good, info in checks)
    ACCEPTANCE[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def within(value: float, target: float, tol: float = 0.25) -> bool:
    return abs(value - target) <= tol * target


# ---------------------------------------------------------------- 1


def test_criterion_1_complexity():
    t0 = time.perf_counter()
    reports = {s: count_flops(build_model(apply_ablation(s))) for s in ("fcrn15", "m2", "m3", "m4", "m5")}
    elapsed = time.perf_counter() - t0
    g, f = reports["m5"], reports["fcrn15"]
    ratio = g.flops_per_second / f.flops_per_second
    m2 = {l.name: l.flops for l in reports["m2"].layers if l.kind in ("conv", "deconv")}
    m3 = {l.name: l.flops for l in reports["m3"].layers if l.kind in ("conv", "deconv")}
    affected = [k for k in m2 if m3[k] != m2[k]]
    quarter = bool(affected) and all(m3[k] * 4 == m2[k] for k in affected)
    unaffected = sorted(set(m2) - set(affected))
    checks = [
        ("gGCRN16 params 1.3M+-25%", within(g.parameter_count, 1.3e6), f"{g.parameter_count / 1e6:.3f} M"),
        ("gGCRN16 FLOPS 583M+-25%", within(g.flops_per_second, 583e6), f"{g.flops_per_second / 1e6:.1f} M"),
        ("FCRN15 params 1.0M+-25%", within(f.parameter_count, 1.0e6), f"{f.parameter_count / 1e6:.3f} M"),
        ("FCRN15 FLOPS 2011M+-25%", within(f.flops_per_second, 2011e6), f"{f.flops_per_second / 1e6:.1f} M"),
        ("FLOPS ratio <= 0.30", ratio <= 0.30, f"{ratio:.3f}"),
        ("params +5 < +4", reports["m5"].parameter_count < reports["m4"].parameter_count,
         f"{reports['m5'].parameter_count} < {reports['m4'].parameter_count}"),
        ("kernel-size FLOPS ratio 0.25 per layer", quarter,
         f"{len(affected)} layers; kernel-size-1 layers unchanged: {', '.join(unaffected) or 'none'}"),
        ("runtime < 1 s", elapsed < 1.0, f"{elapsed:.3f} s"),
    ]
    verdict(1, checks)


# ---------------------------------------------------------------- 2


def test_criterion_2_stft():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(int(rng.integers(1000, 20000)))
        padded, head = dsp.pad_for_processing(x)
        y = dsp.synthesize(dsp.analyze(padded))[head : head + len(x)]
        worst = max(worst, float(np.max(np.abs(y - x))))
    M = (rng.standard_normal((50, 257)) + 1j * rng.standard_normal((50, 257))) * rng.choice([1e-3, 1, 100], (50, 257))
    G = dsp.mask_gain(M)
    excess = float(np.max(np.abs(G) - np.tanh(np.abs(M))))
    eps = dsp.mask_gain(np.array([0j, 1e-13 + 0j, 5e-13j]))
    verdict(2, [
        ("round trip < 1e-10 on 100 signals", worst < 1e-10, f"max error {worst:.2e}"),
        ("|G| <= tanh|M| on all bins", excess <= 1e-15, f"max excess {excess:.1e}"),
        ("zero gain for |M| < 1e-12", bool(np.all(eps == 0)), f"{eps.tolist()}"),
    ])


# ---------------------------------------------------------------- 3


def _primitive_cases(rng):
    W = lambda shape: rng.standard_normal(shape)  # noqa: E731
    sq = lambda t: ops.sum(ops.square(t))  # noqa: E731
    ab = dict(a=W((2, 3, 4)), b=W((2, 3, 4)))
    return {
        "conv": (lambda p: sq(conv_freq(p["x"], p["w"], p["b"], 2)), dict(x=W((2, 3, 8, 3)), w=W((3, 3, 4)), b=W(4))),
        "grouped conv": (lambda p: sq(conv_freq(p["x"], p["w"], p["b"], 1, groups=2)),
                         dict(x=W((2, 3, 8, 4)), w=W((3, 2, 6)), b=W(6))),
        "deconv": (lambda p: sq(deconv_freq(p["x"], p["w"], p["b"], 2)), dict(x=W((2, 3, 5, 3)), w=W((3, 3, 4)), b=W(4))),
        "depthwise": (lambda p: sq(depthwise_conv(p["x"], p["k"], p["b"])), dict(x=W((2, 3, 6, 3)), k=W((3, 3)), b=W(3))),
        "grouped gru": (lambda p: sq(gru_sequence(p["x"], p["w"], p["u"], p["b"], p["h"])[0]),
                        dict(x=W((2, 5, 3, 4)), w=W((3, 4, 6)), u=W((3, 2, 6)), b=W((3, 6)), h=W((2, 3, 2)))),
        "convlstm": (lambda p: sq(convlstm_sequence(p["x"], p["wx"], p["wh"], p["b"])[0]),
                     dict(x=W((2, 4, 5, 3)), wx=W((3, 3, 8)), wh=W((3, 2, 8)), b=W(8))),
        "mask+OLA": (lambda p: sq(ops.synthesize(ops.complex_mul(ops.mask_gain(p["m"]), p["y"])))
                     , dict(m=W((2, 3, 257, 2)), y=W((2, 3, 257, 2)))),
        "tanh": (lambda p: ops.sum(ops.tanh(p["a"]) * p["b"]), ab),
        "sigmoid": (lambda p: ops.sum(ops.sigmoid(p["a"]) * p["b"]), ab),
        "elu": (lambda p: ops.sum(ops.elu(p["a"]) * p["b"]), ab),
        "log10": (lambda p: ops.sum(ops.log10(ops.square(p["a"]) + 1.0) * p["b"]), ab),
        "reshape/mean": (lambda p: ops.mean(ops.reshape(p["a"], (4, 6)) * ops.reshape(p["b"], (4, 6))), ab),
        "transpose": (lambda p: ops.sum(ops.transpose(p["a"], (2, 0, 1)) * ops.transpose(p["b"], (2, 0, 1))), ab),
        "getitem": (lambda p: sq(ops.getitem(p["a"], (slice(None), 1)) - ops.getitem(p["b"], (slice(None), 2))), ab),
        "concat": (lambda p: sq(ops.concat([p["a"], p["b"]], axis=1)), ab),
        "sum/broadcast": (lambda p: sq(p["a"] - ops.sum(p["b"], axis=0, keepdims=True)), ab),
    }


def test_criterion_3_gradients(catalog):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    checks = []
    for name, (build, arrays) in _primitive_cases(rng).items():
        err = max(check_gradients(build, arrays, max_probes=40).values())
        checks.append((name, err < 1e-4, f"{err:.1e}"))
    pool = synth.build_training_pool(33, catalog, 4, 1, seconds=0.5)
    batch = sample_minibatch(PoolSource(pool, excerpt_samples(8)), MinibatchConditionSplit.parse("1/1/1"),
                             np.random.default_rng(0))
    model = CrnModel(ggcrn16(kernel_count=4, groups_layer1=4, groups_layer2=4))
    weights = LossWeights.make(DT=(0.2, 0.2), STFE=(0.2, 0.1), STNE=(0.1, 0.0))

    def chain(params):
        model.params = params
        return batch_loss(model, batch, weights)

    errs = check_gradients(chain, dict(model.state_arrays()), step=1e-5, max_probes=6)
    worst = max(errs.values())
    checks.append((f"full chain ({len(errs)} tensors)", worst < 1e-4, f"{worst:.1e}"))
    elapsed = time.perf_counter() - t0
    checks.append(("runtime < 2 min", elapsed < 120, f"{elapsed:.1f} s"))
    verdict(3, checks)


# ---------------------------------------------------------------- 4


def test_criterion_4_loss_algebra():
    rng = np.random.default_rng(4)
    e, s, n, st_, dt = rng.standard_normal((5, 400))
    plain = max(abs(float(condition_loss(e, s, n, st_, dt, c, LossWeights()).data) - float(logmse(e, s + n).data))
                for c in ("DT", "STFE", "STNE"))
    worst = 0.0
    for _ in range(100):
        a, b = rng.dirichlet([1, 1, 1])[:2] * 0.999
        cond = str(rng.choice(["DT", "STFE", "STNE"]))
        e, s, n, st_, dt = rng.standard_normal((5, 64)) * rng.uniform(0.01, 10, (5, 1))
        w = LossWeights.make(**{cond: (a, b)})
        got = float(condition_loss(e, s, n, st_, dt, cond, w).data)
        v = [float(logmse(e, s + n).data), float(logmse(st_, s).data), float(logmse(dt, np.zeros(64)).data)]
        worst = max(worst, abs(got - ((1 - a - b) * v[0] + a * v[1] + b * v[2])))
    p1, p2 = PRESETS["ca-15-1-0"][1], PRESETS["ca-16-0-0"][1]
    presets = p1.of("DT") == (0.2, 0.2) and p1.of("STFE")[0] == 0.2 and p2.of("DT")[0] == 0.33
    verdict(4, [
        ("zero weights == logmse(e, s+n)", plain <= 1e-12, f"max diff {plain:.1e}"),
        ("affine identity, 100 triples", worst <= 1e-9, f"max diff {worst:.1e}"),
        ("preset values", presets, f"DT {p1.of('DT')}, STFE {p1.of('STFE')}, DT' {p2.of('DT')}"),
    ])


# ---------------------------------------------------------------- 5


def test_criterion_5_sampler():
    conds = ("DT", "STFE", "STNE")
    entries = [Entry(*np.zeros((4, 2)), condition=c) for c in conds for _ in range(16)]
    source = FixedSource(entries)
    rng = np.random.default_rng(5)
    checks = []
    for text in ("16/0/0", "15/1/0", "13/2/1", "12/4/0", "8/8/0"):
        mcs = MinibatchConditionSplit.parse(text)
        want = [int(v) for v in text.split("/")]
        exact = all(
            [b.conditions.count(c) for c in conds] == want
            for b in (sample_minibatch(source, mcs, rng) for _ in range(1000))
        )
        checks.append((text, exact, "1000 batches"))
    mcs = MinibatchConditionSplit.parse("random", 16)
    counts = dict.fromkeys(conds, 0)
    for _ in range(1000):
        for c in sample_minibatch(source, mcs, rng).conditions:
            counts[c] += 1
    freq = {c: v / 16000 for c, v in counts.items()}
    dev = max(abs(f - 1 / 3) for f in freq.values())
    checks.append(("random within +-5%", dev <= 0.05, ", ".join(f"{c} {f:.3f}" for c, f in freq.items())))
    verdict(5, checks)


# ---------------------------------------------------------------- 6


SEF_HALF_ONE = 0.598144006661304101  # quadrature oracle for mu=0.5, v=1


def test_criterion_6_synthesis(catalog):
    rng = np.random.default_rng(6)
    ratio_err = 0.0
    for ser, snr in [(-6, 10), (20, -2), (0, 30), (-12, 0), (7.5, 17.3)]:
        s, n, x = rng.standard_normal((3, 16000))
        b = synth.mix_scene(s, n, x, synth.Nonlinearity("sef", mu=0.5), rng.standard_normal(64) * 0.1, ser, snr)
        ratio_err = max(ratio_err, abs(synth.ratio_db(b.s, b.d) - ser), abs(synth.ratio_db(b.s, b.n) - snr))
    v = np.linspace(-1, 1, 2001)
    v = v[v != 0]
    ident = float(np.max(np.abs(synth.sef_nonlinearity(v, 999.0) - v) / np.abs(v)))
    sef = float(synth.sef_nonlinearity(np.array([1.0]), 0.5)[0])
    room = synth.RoomSpec((5.0, 4.0, 3.0), (1.0, 1.0, 1.0), (3.0, 2.0, 1.5), (0.0,) * 6)
    h = synth.simulate_rir(room)
    dist = np.sqrt(4 + 1 + 0.25)
    delay = int(round(dist * dsp.SAMPLE_RATE / synth.SPEED_OF_SOUND))
    single = np.count_nonzero(h) == 1 and abs(h[delay] - 1 / (4 * np.pi * dist)) < 1e-12
    exact = all(np.array_equal(f.y, f.s + f.n + f.d)
                for f in (synth.make_training_file(600 + i, catalog) for i in range(100)))
    verdict(6, [
        ("SER/SNR within 1e-6 dB", ratio_err < 1e-6, f"max error {ratio_err:.1e} dB"),
        ("SEF mu=999 near identity", ident < 1e-3, f"rel err {ident:.1e}"),
        ("SEF(0.5, 1.0) vs quadrature", abs(sef - SEF_HALF_ONE) < 1e-6, f"{sef:.12f}"),
        ("zero-reflection RIR single impulse", bool(single), f"delay {delay}, peak {h.max():.6f}"),
        ("y = s+n+d on 100 files", exact, "bitwise"),
    ])


# ---------------------------------------------------------------- 7


def test_criterion_7_metric_oracles(catalog):
    files = [synth.make_condition_file(70 + i, catalog) for i in range(3)]
    noiseless = replace(synth.DEV_SPLIT, noiseless_prob=1.0)
    quiet = [synth.make_condition_file(80 + i, catalog, noiseless) for i in range(3)]

    def means(system, bundles):
        rep, _ = evaluate(system, bundles)
        assert not rep.errors, rep.errors
        return {m["condition"]: m for m in rep.means()}, rep.rows

    none = means(identity_system(), files)[0]["STFE"]["erle_db"]
    _, half_rows = means(ConstantGain(0.5), files)
    half = [r["component_erle_db"] for r in half_rows if r["condition"] == "DT"]
    _, mute_rows = means(mute_system(), quiet)
    muted = [r["erle_db"] for r in mute_rows if r["condition"] == "STFE"]
    verdict(7, [
        ("no processing STFE ERLE 0+-0.1", abs(none) <= 0.1, f"{none:.4f} dB"),
        ("g=0.5 component ERLE 6.02+-0.1", all(abs(v - 6.02) <= 0.1 for v in half),
         ", ".join(f"{v:.3f}" for v in half)),
        ("mute hits 80 dB cap (noiseless)", all(v == pytest.approx(80.0) for v in muted),
         ", ".join(f"{v:.2f}" for v in muted)),
    ])


# ---------------------------------------------------------------- 8


def test_criterion_8_micro_overfit():
    res = micro_overfit.run(kernels=8, groups=8, n_seq=8, frames=64, steps=300, lr=2e-3, ser_db=-5.0, log=None)
    verdict(8, [
        ("loss drop >= 6 dB in <= 300 steps", res["loss_drop_db"] >= 6.0,
         f"{res['initial_loss']:.2f} -> {res['best_loss']:.2f} dB"),
        ("component ERLE > 10 dB", res["erle_after_db"] > 10.0,
         f"{res['erle_before_db']:.2f} -> {res['erle_after_db']:.2f} dB"),
        ("runtime < 10 min", res["seconds"] < 600, f"{res['seconds']:.0f} s"),
    ])


# ---------------------------------------------------------------- 9


CONFIG = {
    "seed": 9,
    "synth": {"n_files": 5, "n_validation": 1, "seconds": 1.0},
    "model": {"stage": "m5", "overrides": {"kernel_count": 4, "groups_layer1": 4, "groups_layer2": 4}},
    "train": {"schedule": {"batch_size": 2, "bptt_frames": 16, "max_epochs": 2, "steps_per_epoch": 2},
              "mcs": "1/1/0"},
}


def _pipeline(root: Path, cfg: str) -> None:
    steps = [
        ["synth", "--out-dir", f"{root}/train"],
        ["synth", "--style", "dev", "--n-files", "2", "--out-dir", f"{root}/dev"],
        ["train", "--manifest", f"{root}/train/manifest.jsonl", "--run-dir", f"{root}/run"],
        ["evaluate", "--manifest", f"{root}/dev/manifest.jsonl", "--checkpoint", f"{root}/run/best.ckpt",
         "--run-dir", f"{root}/eval"],
    ]
    for argv in steps:
        assert cli.main([argv[0], "--config", cfg, *argv[1:]]) == 0, argv


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(CONFIG))
    for tag in ("a", "b"):
        _pipeline(tmp_path / tag, str(cfg))
    artifacts = {
        "checkpoints": ["run/best.ckpt", "run/last.ckpt"],
        "manifests": ["train/manifest.jsonl", "dev/manifest.jsonl"],
        "reports": ["eval/report.csv", "eval/report.json", "run/history.csv"],
    }
    checks = []
    for kind, files in artifacts.items():
        same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
        checks.append((kind, same, ", ".join(files)))
    wavs = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.wav"))
    same = all((tmp_path / "a" / w).read_bytes() == (tmp_path / "b" / w).read_bytes() for w in wavs)
    checks.append(("audio", same and bool(wavs), f"{len(wavs)} wav files"))
    verdict(9, checks)
