"""Command-line entry point: synth, train, finetune, evaluate, complexity.

Every command reads an optional YAML config, applies flag overrides, writes
the fully resolved config next to its outputs and exits with
0 (ok), 2 (config error), 3 (data error) or 4 (numeric failure).
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

import yaml

from . import dsp, enhance, metrics, models, synth, training
from .autodiff.tensor import NonFiniteError
from .errors import ConfigError, DataError

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "synth": {
        "style": "train",  # train | dev | test
        "out_dir": "data/train",
        "n_files": 32,
        "n_validation": 4,
        "seconds": 10.0,
        "catalog": {"kind": "synthetic", "speech_dir": None, "noise_dir": None},
    },
    "model": {"stage": "m5", "overrides": {}},
    "train": {
        "manifest": "data/train/manifest.jsonl",
        "run_dir": "runs/train",
        "mcs": "16/0/0",
        "preset": "plain",
        "remix": True,
        "schedule": {},
    },
    "finetune": {
        "manifest": "data/train/manifest.jsonl",
        "checkpoint": "runs/train/best.ckpt",
        "run_dir": "runs/finetune",
        "mcs": "16/0/0",
        "preset": "ca-16-0-0",
        "remix": True,
        "schedule": {},
    },
    "evaluate": {
        "manifest": "data/dev/manifest.jsonl",
        "checkpoint": "runs/train/best.ckpt",
        "run_dir": "runs/evaluate",
        "identity_mask": False,
        "emit_audio": False,
        "erle": {},
    },
    "complexity": {"stages": list(models.STAGES), "run_dir": "runs/complexity"},
}


# ---------------------------------------------------------------- config


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and not key == "overrides":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    raw.pop("command", None)  # present in snapshots
    return _merge(DEFAULTS, raw)


def apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    section = cfg.get(args.command, {})
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    if getattr(args, "stage", None) is not None:
        cfg["model"]["stage"] = args.stage
    for flag, key in (
        ("mcs", "mcs"), ("preset", "preset"), ("run_dir", "run_dir"), ("manifest", "manifest"),
        ("checkpoint", "checkpoint"), ("out_dir", "out_dir"), ("style", "style"), ("n_files", "n_files"),
    ):
        value = getattr(args, flag, None)
        if value is not None and key in section:
            section[key] = value
    for flag in ("identity_mask", "emit_audio"):
        if getattr(args, flag, False):
            section[flag] = True
    if getattr(args, "epochs", None) is not None:
        section.setdefault("schedule", {})["max_epochs"] = args.epochs
    return cfg


def write_snapshot(cfg: dict, directory: Path, command: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    keep = {k: cfg[k] for k in ("seed", "workers", "model")}
    keep[command] = cfg[command]
    (directory / "config.resolved.yaml").write_text(yaml.safe_dump({"command": command, **keep}, sort_keys=True))


def model_config(cfg: dict) -> models.CrnConfig:
    stage = cfg["model"]["stage"]
    overrides = dict(cfg["model"].get("overrides") or {})
    valid = {f.name for f in fields(models.CrnConfig)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown model overrides {sorted(unknown)}")
    return replace(models.apply_ablation(stage), **overrides)


def schedule_from(section: dict, base: training.TrainSchedule) -> training.TrainSchedule:
    valid = {f.name for f in fields(training.TrainSchedule)}
    unknown = set(section.get("schedule") or {}) - valid
    if unknown:
        raise ConfigError(f"unknown schedule keys {sorted(unknown)}")
    return replace(base, **(section.get("schedule") or {}))


def make_catalog(spec: dict):
    if spec.get("kind", "synthetic") == "synthetic":
        return synth.SyntheticCatalog()
    if spec["kind"] == "wav":
        return synth.WavCatalog(spec["speech_dir"], spec["noise_dir"])
    raise ConfigError(f"unknown catalog kind {spec['kind']!r}")


# ---------------------------------------------------------------- commands


def _condition_file(job):
    seed, index, style, catalog_spec, out_dir = job
    bundle = synth.make_condition_file(seed, make_catalog(catalog_spec), synth.SPLITS[style], index)
    return synth.write_bundle(bundle, out_dir, f"{style}{index:05d}")


def cmd_synth(cfg: dict, log) -> int:
    sec = cfg["synth"]
    out = Path(sec["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    catalog = make_catalog(sec["catalog"])
    style = sec["style"]
    if style == "train":
        pool = synth.build_training_pool(
            cfg["seed"], catalog, sec["n_files"], sec["n_validation"], sec["seconds"], synth.TRAIN_SPLIT
        )
        records = synth.write_training_pool(pool, out)
    elif style in ("dev", "test"):
        jobs = [(cfg["seed"], i, style, sec["catalog"], str(out)) for i in range(sec["n_files"])]
        if cfg["workers"] > 1:
            with ProcessPoolExecutor(cfg["workers"]) as ex:
                records = list(ex.map(_condition_file, jobs))
        else:
            records = [_condition_file(j) for j in jobs]
    else:
        raise ConfigError(f"unknown synth style {style!r}")
    synth.write_manifest(records, out / "manifest.jsonl")
    write_snapshot(cfg, out, "synth")
    log(f"wrote {len(records)} {style} files to {out}")
    return 0


def _load_pool(manifest: str) -> synth.TrainingPool:
    path = Path(manifest)
    return synth.read_training_pool(synth.read_manifest(path), path.parent)


def _save_model_config(config: models.CrnConfig, run_dir: Path) -> None:
    (run_dir / "model.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))


def load_model(checkpoint: str | Path) -> models.CrnModel:
    """Model from a checkpoint; its configuration is read from ``model.json`` beside it."""
    checkpoint = Path(checkpoint)
    conf_path = checkpoint.parent / "model.json"
    if not checkpoint.exists() or not conf_path.exists():
        raise DataError(f"checkpoint {checkpoint} or its model.json is missing")
    conf = json.loads(conf_path.read_text())
    conf["strides"] = tuple(conf["strides"])
    return models.CrnModel(models.CrnConfig(**conf), training.load_model_arrays(checkpoint))


def _run_training(cfg: dict, command: str, log, resume: bool) -> int:
    sec = cfg[command]
    run_dir = Path(sec["run_dir"])
    pool = _load_pool(sec["manifest"])
    base = training.FINETUNE_SCHEDULE if command == "finetune" else training.TrainSchedule()
    schedule = schedule_from(sec, base)
    if sec["preset"] not in training.PRESETS:
        raise ConfigError(f"unknown preset {sec['preset']!r}; expected one of {sorted(training.PRESETS)}")
    preset_mcs, weights = training.PRESETS[sec["preset"]]
    mcs = training.MinibatchConditionSplit.parse(preset_mcs or sec["mcs"], schedule.batch_size)
    if command == "finetune":
        model = load_model(sec["checkpoint"])
    else:
        model = models.build_model(replace(model_config(cfg), seed=cfg["seed"]))
    # make the snapshot explicit: every schedule and model field is written out
    sec["schedule"] = asdict(schedule)
    if command == "train":
        cfg["model"]["overrides"] = model.config.to_dict()
    write_snapshot(cfg, run_dir, command)
    _save_model_config(model.config, run_dir)
    log(f"{command}: {model.config.bottleneck} F={model.config.kernel_count} N={model.config.kernel_size}, "
        f"MCS {mcs}, preset {sec['preset']}, {len(pool.train_indices)} train / {len(pool.validation)} val files")
    result = training.train(
        model, pool, schedule, mcs, weights, seed=cfg["seed"], run_dir=run_dir, resume=resume,
        remix=sec["remix"], log=log,
    )
    log(f"best validation loss {result.best_val:.3f} dB after {len(result.history)} epochs ({result.stopped})")
    return 0


def cmd_evaluate(cfg: dict, log) -> int:
    sec = cfg["evaluate"]
    run_dir = Path(sec["run_dir"])
    manifest = Path(sec["manifest"])
    records = synth.read_manifest(manifest)
    bundles = [synth.load_bundle(r, manifest.parent) for r in records]
    names = [Path(r["y"]).stem.rsplit("_", 1)[0] for r in records]
    if sec["identity_mask"]:
        system = enhance.identity_system()
    else:
        system = enhance.ModelSystem(load_model(sec["checkpoint"]))
    erle_params = metrics.ErleParams(**(sec.get("erle") or {}))
    sec["erle"] = asdict(erle_params)
    report, outputs = metrics.evaluate(system, bundles, names, erle_params, keep_outputs=sec["emit_audio"])
    write_snapshot(cfg, run_dir, "evaluate")
    report.write_csv(run_dir / "report.csv")
    report.write_json(run_dir / "report.json")
    if sec["emit_audio"]:
        audio = run_dir / "audio"
        audio.mkdir(exist_ok=True)
        for name, out in zip(names, outputs):
            if out:
                dsp.write_wav(audio / f"{name}_e.wav", out["e"])
    for row in report.means():
        vals = ", ".join(f"{k} {v:.2f}" for k, v in row.items() if isinstance(v, float))
        log(f"{row['condition']:>4}: {vals}")
    if report.errors:
        for err in report.errors:
            log(f"error in {err['file']}: {err['error']}")
        return 3
    return 0


def cmd_complexity(cfg: dict, log) -> int:
    sec = cfg["complexity"]
    run_dir = Path(sec["run_dir"])
    for stage in sec["stages"]:
        if stage not in models.STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
    rows = models.complexity_table(sec["stages"])
    table = models.format_table(rows)
    write_snapshot(cfg, run_dir, "complexity")
    (run_dir / "complexity.txt").write_text(table + "\n")
    (run_dir / "complexity.json").write_text(json.dumps(rows, indent=2))
    log(table)
    return 0


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--run-dir", dest="run_dir")
        return p

    p = common(sub.add_parser("synth", help="generate a dataset and its manifest"))
    p.add_argument("--style", choices=["train", "dev", "test"])
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--n-files", dest="n_files", type=int)

    for name in ("train", "finetune"):
        p = common(sub.add_parser(name, help=f"{name} a model"))
        p.add_argument("--manifest")
        p.add_argument("--stage", choices=models.STAGES)
        p.add_argument("--mcs", help="DT/STFE/STNE counts such as 16/0/0, or 'random'")
        p.add_argument("--preset", choices=sorted(training.PRESETS))
        p.add_argument("--epochs", type=int)
        p.add_argument("--resume", action="store_true", help="continue from last.ckpt in the run directory")
        if name == "finetune":
            p.add_argument("--checkpoint")

    p = common(sub.add_parser("evaluate", help="evaluate on condition files"))
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--stage", choices=models.STAGES)
    p.add_argument("--identity-mask", dest="identity_mask", action="store_true",
                   help="bypass the model with a unit gain (metrics of y itself)")
    p.add_argument("--emit-audio", dest="emit_audio", action="store_true")

    p = common(sub.add_parser("complexity", help="parameter and FLOPS table"))
    p.add_argument("--stage", choices=models.STAGES)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = print
    try:
        cfg = apply_flags(load_config(args.config), args)
        if args.command == "synth":
            return cmd_synth(cfg, log)
        if args.command in ("train", "finetune"):
            return _run_training(cfg, args.command, log, args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, log)
        if args.command == "complexity":
            if args.stage:
                cfg["complexity"]["stages"] = [args.stage]
            return cmd_complexity(cfg, log)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 2


if __name__ == "__main__":
    sys.exit(main())
