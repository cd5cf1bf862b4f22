"""Command-line entry points.

Subcommands:
  pretrain   train a teacher (supervised SI-SNR) from a JSON experiment config
  distill    knowledge-distill a student against a frozen teacher checkpoint
  eval       metrics report for a checkpoint over a frozen test manifest
  gradcheck  run the finite-difference suite; nonzero exit on any failure
  synthdata  materialize a deterministic synthetic WAV corpus + manifest

Exit codes: 0 success, 1 runtime failure, 2 configuration error. Every
command writes its outputs under --out together with a run_manifest.json
describing inputs, seeds, and produced files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data, gradcheck, models, training
from .errors import AudioError, CheckpointError, ConfigError

SCENARIOS = {
    "t1s1": ("t1", "s1"),
    "t1s2": ("t1", "s2"),
    "t2s2": ("t2", "s2"),
}

_TRAIN_FIELDS = {
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "min_delta": float,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "adam_eps": float,
    "seed": int,
    "lambda_kd": float,
    "lambda_out": float,
}


def _load_json(path, what):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    try:
        with open(p) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {p} is not valid JSON: {exc}") from None


def _parse_train_config(raw, overrides):
    if not isinstance(raw, dict):
        raise ConfigError(f"'train' section must be an object, got {type(raw).__name__}")
    unknown = set(raw) - set(_TRAIN_FIELDS)
    if unknown:
        raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
    values = {}
    for key, cast in _TRAIN_FIELDS.items():
        if key in raw:
            try:
                values[key] = cast(raw[key])
            except (TypeError, ValueError):
                raise ConfigError(f"train.{key} must be {cast.__name__}, got {raw[key]!r}") from None
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    return training.TrainConfig(**values)


def _parse_arch(raw, what="arch"):
    if isinstance(raw, str):
        return models.preset_config(raw)
    if isinstance(raw, dict):
        return models.ModelConfig.from_dict(raw)
    raise ConfigError(f"{what} must be a preset name or a model-config object")


def _load_experiment(path, args):
    cfg = _load_json(path, "config file")
    for key in ("arch", "data_manifest"):
        if key not in cfg:
            raise ConfigError(f"config file {path} missing required field {key!r}")
    base = Path(path).parent
    manifest_path = Path(cfg["data_manifest"])
    if not manifest_path.is_absolute():
        manifest_path = base / manifest_path
    if not manifest_path.exists():
        raise ConfigError(f"data manifest not found: {manifest_path}")
    manifest = data.SplitManifest.load(manifest_path)
    overrides = {
        "seed": args.seed,
        "lambda_kd": getattr(args, "lambda_kd", None),
        "lambda_out": getattr(args, "lambda_out", None),
    }
    train_cfg = _parse_train_config(cfg.get("train", {}), overrides)
    out_dir = Path(args.out or cfg.get("out_dir") or "run_output")
    return cfg, manifest, train_cfg, out_dir


def _write_run_manifest(out_dir, command, inputs, outputs):
    payload = {"command": command, "inputs": inputs, "outputs": sorted(outputs)}
    with open(Path(out_dir) / "run_manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _history_logger(rows):
    def log(record):
        rows.append(record)
        print(
            f"epoch {record.epoch}: kd={record.kd_loss:.4f} out={record.out_loss:.4f} "
            f"tot={record.total_loss:.4f} val={record.val_loss:.4f}"
            + (" *" if record.is_best else "")
        )

    return log


def cmd_pretrain(args):
    cfg, manifest, train_cfg, out_dir = _load_experiment(args.config, args)
    arch = _parse_arch(cfg["arch"])
    dataset = data.MixtureDataset(manifest, seed=train_cfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, history = training.pretrain_teacher(arch, train_cfg, dataset,
                                               log=_history_logger([]))
    best = min(r.val_loss for r in history)
    ckpt = out_dir / "teacher.ckpt"
    models.save_checkpoint(ckpt, model, extra={
        "seed": train_cfg.seed, "best_val_loss": best, "epochs": len(history),
        "train_config": asdict(train_cfg),
    })
    log_path = out_dir / "history.log"
    log_path.write_text(training.format_history(history))
    _write_run_manifest(out_dir, "pretrain",
                        {"config": str(args.config), "seed": train_cfg.seed,
                         "arch": arch.name},
                        [ckpt.name, log_path.name])
    print(f"teacher checkpoint: {ckpt} (best val loss {best:.4f})")
    return 0


def _validate_scenario(scenario, teacher, student_arch):
    expected_teacher, expected_student = SCENARIOS[scenario]
    want = models.preset_config(expected_teacher).latent_shape()
    got = teacher.latent_shape
    if want.as_tuple() != got.as_tuple():
        raise ConfigError(
            f"scenario {scenario!r} expects teacher latent {want}, "
            f"checkpoint has {got}"
        )
    if student_arch is None:
        student_arch = models.preset_config(expected_student)
    else:
        want_s = models.preset_config(expected_student).latent_shape()
        got_s = student_arch.latent_shape()
        if want_s.as_tuple() != got_s.as_tuple():
            raise ConfigError(
                f"scenario {scenario!r} expects student latent {want_s}, "
                f"config arch has {got_s}"
            )
    return student_arch


def cmd_distill(args):
    cfg, manifest, train_cfg, out_dir = _load_experiment(args.config, args)
    if not Path(args.teacher).exists():
        raise ConfigError(f"teacher checkpoint not found: {args.teacher}")
    teacher, _ = models.load_checkpoint(args.teacher)
    student_arch = _parse_arch(cfg["arch"])
    if args.scenario:
        student_arch = _validate_scenario(args.scenario, teacher, student_arch)
    if train_cfg.lambda_kd != 0.0:
        t_lat = teacher.latent_shape.as_tuple()
        s_lat = student_arch.latent_shape().as_tuple()
        if t_lat == s_lat:
            raise ConfigError(
                f"teacher latent {t_lat} equals student latent {s_lat}; "
                "no dimensionality mismatch to adapt"
            )
    dataset = data.MixtureDataset(manifest, seed=train_cfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.repeats:
        return _distill_repeats(args, teacher, student_arch, train_cfg, dataset, out_dir)

    student, adapter, history = training.distill_student(
        teacher, student_arch, train_cfg, dataset, log=_history_logger([]))
    best = min(r.val_loss for r in history)
    outputs = []
    ckpt = out_dir / "student.ckpt"
    models.save_checkpoint(ckpt, student, extra={
        "seed": train_cfg.seed, "best_val_loss": best, "epochs": len(history),
        "teacher": str(args.teacher), "train_config": asdict(train_cfg),
    })
    outputs.append(ckpt.name)
    if adapter is not None:
        bpath = out_dir / "bottleneck.ckpt"
        models.save_checkpoint(bpath, adapter, kind="bottleneck",
                               extra={"seed": train_cfg.seed})
        outputs.append(bpath.name)
    log_path = out_dir / "history.log"
    log_path.write_text(training.format_history(history))
    outputs.append(log_path.name)
    _write_run_manifest(out_dir, "distill",
                        {"config": str(args.config), "teacher": str(args.teacher),
                         "seed": train_cfg.seed, "scenario": args.scenario,
                         "lambda_kd": train_cfg.lambda_kd,
                         "lambda_out": train_cfg.lambda_out},
                        outputs)
    print(f"student checkpoint: {ckpt} (best val loss {best:.4f})")
    return 0


def _distill_repeats(args, teacher, student_arch, train_cfg, dataset, out_dir):
    from dataclasses import replace

    outputs = []

    def run(seed):
        cfg_i = replace(train_cfg, seed=seed)
        ds = data.MixtureDataset(dataset.manifest, seed=seed)
        student, _, history = training.distill_student(teacher, student_arch, cfg_i, ds)
        log_path = out_dir / f"history_seed{seed}.log"
        log_path.write_text(training.format_history(history))
        outputs.append(log_path.name)
        return training.evaluate(student, ds)

    seeds = args.seeds or [train_cfg.seed + i for i in range(args.repeats)]
    summaries, aggregate = training.run_repeats(run, args.repeats, seeds=seeds)
    table = training.format_repeats_table(
        aggregate, label=f"{student_arch.name} (n={args.repeats})")
    table_path = out_dir / "repeats_table.txt"
    table_path.write_text(table)
    outputs.append(table_path.name)
    _write_run_manifest(out_dir, "distill-repeats",
                        {"config": str(args.config), "teacher": str(args.teacher),
                         "seeds": list(seeds), "scenario": args.scenario},
                        outputs)
    print(table, end="")
    return 0


def cmd_eval(args):
    if not Path(args.test).exists():
        raise ConfigError(f"test manifest not found: {args.test}")
    if not Path(args.model).exists():
        raise ConfigError(f"model checkpoint not found: {args.model}")
    model, _ = models.load_checkpoint(args.model)
    manifest = data.SplitManifest.load(args.test)
    dataset = data.MixtureDataset(manifest, seed=args.seed or 0)
    report = training.evaluate(model, dataset)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report.save(out_path)
    _write_run_manifest(out_path.parent, "eval",
                        {"model": str(args.model), "test": str(args.test),
                         "seed": args.seed or 0},
                        [out_path.name])
    for key, (mean, std) in report.summary().items():
        print(f"{key}: {mean:.4f}/{std:.4f}")
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run_suite(seed=args.seed or 0)
    table = gradcheck.format_table(results)
    print(table, end="")
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(table)
    return 0 if all(r.passed for r in results) else 1


def cmd_synthdata(args):
    out_dir = Path(args.out)
    manifest_path = data.materialize_corpus(out_dir, args.seed or 0, args.count)
    manifest = data.SplitManifest.load(manifest_path)
    files = sorted(
        uri for split in manifest.splits.values() for lst in split.values() for uri in lst
    )
    _write_run_manifest(out_dir, "synthdata",
                        {"seed": args.seed or 0, "count": args.count},
                        files + [Path(manifest_path).name])
    print(f"manifest: {manifest_path} ({len(files)} WAV files)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="denoisekd",
        description="UNet speech denoising with linear-bottleneck knowledge distillation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a teacher model")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("distill", help="distill a student from a teacher checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default=None)
    p.add_argument("--lambda-kd", dest="lambda_kd", type=float, default=None)
    p.add_argument("--lambda-out", dest="lambda_out", type=float, default=None)
    p.add_argument("--repeats", type=int, default=None, help="aggregate N seeded runs")
    p.add_argument("--seeds", type=int, nargs="*", default=None,
                   help="explicit seeds for --repeats")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a frozen test split")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="manifest with the test split")
    p.add_argument("--out", required=True, help="metrics report path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--out", default=None, help="also write the table here")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synthdata", help="deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, required=True, help="total speech files")
    p.set_defaults(fn=cmd_synthdata)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, AudioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
