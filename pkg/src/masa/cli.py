"""Command-line interface.

Subcommands: gen-data, mask-stats, pretrain, finetune, evaluate, ablate,
grad-check. Configuration precedence is CLI flag > config file > built-in
default; MASA_SEED provides a default seed. Exit codes: 0 success, 1 usage
error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .numcore import NumericsError, load_checkpoint, save_checkpoint
from .posedata import DataFormatError, Dataset, add_noise, gen_synthetic, load_sequences, save_sequences
from .seeding import NS_MASK, rng_for
from .training import (
    FINETUNE_LOG_FIELDS,
    LOG_FIELDS,
    FinetuneConfig,
    PretrainConfig,
    checkpoint_store,
    draw_mask,
    evaluate,
    finetune,
    prepare_sequence,
    pretrain,
)
from . import reporting
from .verification import OPS_TOLERANCE, PIPELINE_TOLERANCE, full_pipeline_check, primitive_op_checks

MASK_STATS_FIELDS = ("id", "frames", "candidates", "masked", "mean_p", "fallback")
SWEEP_FIELDS = ("sweep", "value", "top1_pi", "top5_pi", "top1_pc", "top5_pc")


class UsageError(Exception):
    """Bad flags or config contents; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- config plumbing ----------------------------------------------------------


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise UsageError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataFormatError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    _check_keys(cfg, {"seed", "pretrain", "finetune", "paths"}, str(p))
    return cfg


def _build_config(cls, section: dict, overrides: dict, where: str):
    section = dict(section)
    model_section = section.pop("model", {})
    _check_keys(section, _field_names(cls) - {"model"}, where)
    _check_keys(model_section, _field_names(ModelConfig), f"{where}.model")
    merged = dict(section)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    try:
        model = ModelConfig(**model_section)
        return cls(**merged, model=model)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {where} configuration: {exc}") from exc


def _resolve_seed(flag_seed: int | None, cfg: dict) -> int:
    if flag_seed is not None:
        return flag_seed
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get("MASA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"MASA_SEED must be an integer, got {env!r}") from exc
    return 0


def _resolve_path(flag_value, cfg: dict, key: str, required: bool = True):
    if flag_value is not None:
        return flag_value
    value = cfg.get("paths", {}).get(key)
    if value is None and required:
        raise UsageError(f"missing required path: --{key.replace('_', '-')}")
    return value


def _load_dataset(path, expect_labels: bool) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise DataFormatError(f"data file not found: {p}")
    return load_sequences(p, expect_labels=expect_labels)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    try:
        dataset = gen_synthetic(args.classes, args.per_class, args.frames, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sequences(dataset, out)
    print(f"wrote {len(dataset.sequences)} sequences ({dataset.num_classes} classes) to {out}")
    return 0


def cmd_mask_stats(args) -> int:
    data = _load_dataset(args.data, expect_labels=False)
    config = PretrainConfig(
        epochs=0,
        k_interval=args.k,
        eps_c=args.eps_c,
        eps_m=args.eps_m,
        delta=args.delta,
        alpha=args.alpha,
        pi_denominator=args.pi_denominator,
        seed=args.seed,
    )
    rows = []
    for i, seq in enumerate(data.sequences):
        try:
            prep = prepare_sequence(seq, config)
        except ValueError as exc:
            raise DataFormatError(f"sequence {seq.id!r}: {exc}") from exc
        masked, fellback = draw_mask(prep, config.alpha, rng_for(config.seed, NS_MASK, 0, 0, i))
        rows.append(
            {
                "id": seq.id,
                "frames": seq.num_frames,
                "candidates": len(prep.candidates),
                "masked": len(masked),
                "mean_p": prep.mean_ratio,
                "fallback": int(fellback),
            }
        )
    footer = {
        "id": "__corpus__",
        "frames": float(np.mean([r["frames"] for r in rows])),
        "candidates": float(np.mean([r["candidates"] for r in rows])),
        "masked": float(np.mean([r["masked"] for r in rows])),
        "mean_p": float(np.mean([r["mean_p"] for r in rows])),
        "fallback": int(sum(r["fallback"] for r in rows)),
    }
    out = Path(args.out)
    reporting.write_csv(rows + [footer], MASK_STATS_FIELDS, out)
    if not args.no_figures:
        reporting.save_mask_stats_figure(rows, out.with_suffix(".png"))
    print(f"wrote mask statistics for {len(rows)} sequences to {out}")
    return 0


def _pretrain_overrides(args) -> dict:
    return {
        "epochs": args.epochs,
        "warmup_epochs": args.warmup_epochs,
        "base_lr": args.base_lr,
        "batch_size": args.batch_size,
        "k_interval": args.k,
        "eps_c": args.eps_c,
        "eps_m": args.eps_m,
        "delta": args.delta,
        "alpha": args.alpha,
        "alpha_r": args.alpha_r,
        "tau": args.tau,
        "lambda_s": args.lambda_s,
        "ramp_epochs": args.ramp_epochs,
        "mu": args.mu,
        "bank_size": args.bank_size,
        "pi_denominator": args.pi_denominator,
    }


def _run_pretrain(config: PretrainConfig, data: Dataset, out_dir: Path, no_figures: bool):
    result = pretrain(config, data)
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(result.log, LOG_FIELDS, out_dir / "loss_log.csv")
    save_checkpoint(
        out_dir / "checkpoint",
        checkpoint_store(result),
        hyperparameters=dataclasses.asdict(config),
        seed=config.seed,
        epoch=config.epochs,
    )
    if result.log and not no_figures:
        reporting.save_pretrain_figure(result.log, out_dir / "loss_curves.png")
    return result


def cmd_pretrain(args) -> int:
    cfg_file = _load_config_file(args.config)
    seed = _resolve_seed(args.seed, cfg_file)
    overrides = _pretrain_overrides(args)
    overrides["seed"] = seed
    config = _build_config(PretrainConfig, cfg_file.get("pretrain", {}), overrides, "pretrain")
    data = _load_dataset(_resolve_path(args.data, cfg_file, "data"), expect_labels=False)
    out_dir = Path(_resolve_path(args.out_dir, cfg_file, "out_dir"))
    result = _run_pretrain(config, data, out_dir, args.no_figures)
    final = result.log[-1] if result.log else None
    summary = (
        f"final l_m={final['l_m']:.4f} l_s={final['l_s']:.4f}" if final else "no steps run"
    )
    print(
        f"pretrained {config.epochs} epochs on {len(data.sequences)} sequences; "
        f"{summary}; fallback masks: {result.fallback_count}; checkpoint: {out_dir / 'checkpoint'}"
    )
    return 0


def _finetune_overrides(args) -> dict:
    return {
        "epochs": args.epochs,
        "base_lr": args.base_lr,
        "lr_step": args.lr_step,
        "lr_factor": args.lr_factor,
        "momentum": args.momentum,
        "batch_size": args.batch_size,
        "num_frames": args.num_frames,
    }


def _run_finetune(config, data_train, data_test, init_store, out_dir: Path, no_figures: bool):
    result = finetune(config, data_train, data_test, init=init_store)
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(result.log, FINETUNE_LOG_FIELDS, out_dir / "finetune_log.csv")
    resolved_model = dataclasses.replace(
        config.model, num_classes=config.model.num_classes or data_train.num_classes
    )
    manifest_cfg = dataclasses.asdict(dataclasses.replace(config, model=resolved_model))
    save_checkpoint(
        out_dir / "checkpoint",
        result.params,
        hyperparameters=manifest_cfg,
        seed=config.seed,
        epoch=config.epochs,
    )
    if result.metrics is not None:
        reporting.write_json(result.metrics.to_dict(), out_dir / "metrics.json")
    reporting.write_json(result.train_metrics.to_dict(), out_dir / "train_metrics.json")
    if result.log and not no_figures:
        reporting.save_finetune_figure(result.log, result.metrics, out_dir / "finetune.png")
    return result


def cmd_finetune(args) -> int:
    cfg_file = _load_config_file(args.config)
    seed = _resolve_seed(args.seed, cfg_file)
    overrides = _finetune_overrides(args)
    overrides["seed"] = seed
    config = _build_config(FinetuneConfig, cfg_file.get("finetune", {}), overrides, "finetune")
    data_train = _load_dataset(
        _resolve_path(args.data_train, cfg_file, "data_train"), expect_labels=True
    )
    test_path = _resolve_path(args.data_test, cfg_file, "data_test", required=False)
    data_test = _load_dataset(test_path, expect_labels=True) if test_path else None

    init_path = args.init if args.init else _resolve_path(None, cfg_file, "init", required=False)
    if init_path and args.from_scratch:
        raise UsageError("--init and --from-scratch are mutually exclusive")
    if not init_path and not args.from_scratch:
        raise UsageError("pass either --init <checkpoint> or --from-scratch")
    init_store = None
    if init_path:
        ckpt = Path(init_path)
        if not ckpt.exists():
            raise DataFormatError(f"checkpoint not found: {ckpt}")
        init_store, _ = load_checkpoint(ckpt)

    out_dir = Path(_resolve_path(args.out_dir, cfg_file, "out_dir"))
    result = _run_finetune(config, data_train, data_test, init_store, out_dir, args.no_figures)
    if result.metrics is not None:
        print(
            f"test top-1 P-I {result.metrics.top1_pi:.2f}% / P-C {result.metrics.top1_pc:.2f}% "
            f"(train top-1 {result.train_metrics.top1_pi:.2f}%)"
        )
        if args.baseline_metrics:
            baseline = json.loads(Path(args.baseline_metrics).read_text(encoding="utf-8"))
            delta = result.metrics.top1_pi - baseline["top1_pi"]
            print(f"delta top-1 P-I vs baseline: {delta:+.2f}%")
    else:
        print(f"train top-1 P-I {result.train_metrics.top1_pi:.2f}% (no test split)")
    return 0


def _model_from_manifest(manifest: dict) -> ModelConfig:
    model_dict = manifest.get("hyperparameters", {}).get("model")
    if model_dict is None:
        raise DataFormatError("checkpoint manifest lacks a model configuration")
    return ModelConfig(**model_dict)


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataFormatError(f"checkpoint not found: {ckpt}")
    params, manifest = load_checkpoint(ckpt)
    cfg = _model_from_manifest(manifest)
    if "classifier.w" not in params:
        raise DataFormatError("checkpoint has no classifier; fine-tune before evaluating")
    data = _load_dataset(args.data, expect_labels=True)
    if args.noise_sigma is not None:
        data = Dataset(
            sequences=[
                add_noise(s, args.noise_sigma, args.noise_seed + i)
                for i, s in enumerate(data.sequences)
            ],
            num_classes=data.num_classes,
            split=data.split,
        )
    metrics = evaluate(params, cfg, data, num_frames=args.num_frames)
    out = Path(args.out)
    reporting.write_json(metrics.to_dict(), out)
    if not args.no_figures:
        reporting.save_evaluate_figure(metrics, out.with_suffix(".png"))
    print(
        f"P-I top-1 {metrics.top1_pi:.2f} top-5 {metrics.top5_pi:.2f} | "
        f"P-C top-1 {metrics.top1_pc:.2f} top-5 {metrics.top5_pc:.2f}"
    )
    return 0


def _parse_sweep(spec: str) -> tuple[str, list[float]]:
    if "=" not in spec:
        raise UsageError("sweep spec must look like key=v1,v2,... ")
    key, _, rest = spec.partition("=")
    key = key.strip()
    if key not in ("k", "alpha", "sigma"):
        raise UsageError(f"unknown sweep key {key!r} (expected k, alpha or sigma)")
    try:
        values = [float(v) for v in rest.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad sweep values in {spec!r}") from exc
    if not values:
        raise UsageError(f"no sweep values in {spec!r}")
    return key, values


def cmd_ablate(args) -> int:
    cfg_file = _load_config_file(args.config)
    seed = _resolve_seed(args.seed, cfg_file)
    pre_overrides = {"seed": seed, "epochs": args.pretrain_epochs}
    fin_overrides = {"seed": seed, "epochs": args.finetune_epochs}
    base_pre = _build_config(PretrainConfig, cfg_file.get("pretrain", {}), pre_overrides, "pretrain")
    base_fin = _build_config(FinetuneConfig, cfg_file.get("finetune", {}), fin_overrides, "finetune")
    data_train = _load_dataset(
        _resolve_path(args.data_train, cfg_file, "data_train"), expect_labels=True
    )
    data_test = _load_dataset(
        _resolve_path(args.data_test, cfg_file, "data_test"), expect_labels=True
    )
    out_dir = Path(_resolve_path(args.out_dir, cfg_file, "out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    key, values = _parse_sweep(args.sweep)

    def run_once(pre_cfg: PretrainConfig):
        pre_result = pretrain(pre_cfg, data_train)
        fin_result = finetune(base_fin, data_train, data_test, init=pre_result.params)
        return fin_result

    rows = []
    if key == "sigma":
        fin_result = run_once(base_pre)
        for sigma in values:
            noisy = Dataset(
                sequences=[
                    add_noise(s, sigma, args.noise_seed + i)
                    for i, s in enumerate(data_test.sequences)
                ],
                num_classes=data_test.num_classes,
                split=data_test.split,
            )
            resolved = dataclasses.replace(
                base_fin.model,
                num_classes=base_fin.model.num_classes or data_train.num_classes,
            )
            metrics = evaluate(fin_result.params, resolved, noisy, base_fin.num_frames)
            rows.append({"sweep": key, "value": sigma, **_metric_columns(metrics)})
    else:
        for value in values:
            if key == "k":
                pre_cfg = dataclasses.replace(base_pre, k_interval=int(value))
            else:
                pre_cfg = dataclasses.replace(base_pre, alpha=value)
            fin_result = run_once(pre_cfg)
            rows.append({"sweep": key, "value": value, **_metric_columns(fin_result.metrics)})

    out = out_dir / "sweep.csv"
    reporting.write_csv(rows, SWEEP_FIELDS, out)
    if not args.no_figures:
        reporting.save_sweep_figure(rows, key, out_dir / "sweep.png")
    print(f"wrote {len(rows)} sweep rows to {out}")
    return 0


def _metric_columns(metrics) -> dict:
    return {
        "top1_pi": metrics.top1_pi,
        "top5_pi": metrics.top5_pi,
        "top1_pc": metrics.top1_pc,
        "top5_pc": metrics.top5_pc,
    }


def cmd_grad_check(args) -> int:
    ops_tol = args.tolerance if args.tolerance is not None else OPS_TOLERANCE
    failed = False
    for name, err in primitive_op_checks(seed=args.seed):
        status = "ok" if err < ops_tol else "FAIL"
        if err >= ops_tol:
            failed = True
        print(f"op {name:<16} max_rel_err={err:.3e}  [{status}]")
    if not args.ops_only:
        tol = args.tolerance if args.tolerance is not None else PIPELINE_TOLERANCE
        err = full_pipeline_check(seed=args.seed)
        status = "ok" if err < tol else "FAIL"
        if err >= tol:
            failed = True
        print(f"full pipeline    max_rel_err={err:.3e}  [{status}]")
    if failed:
        print("gradient check FAILED")
        return 3
    print("gradient check passed")
    return 0


# -- parser -------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--no-figures", action="store_true", help="skip PNG report rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="masa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--frames", type=int, default=48)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_with_seed_default(cmd_gen_data))

    p = sub.add_parser("mask-stats", help="per-sequence masking statistics CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--eps-c", type=float, default=0.4)
    p.add_argument("--eps-m", type=float, default=5.0)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--pi-denominator", choices=("all", "valid"), default="all")
    _add_common(p)
    p.set_defaults(func=_with_seed_default(cmd_mask_stats))

    p = sub.add_parser("pretrain", help="self-supervised pre-training")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--base-lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--eps-c", type=float, default=None)
    p.add_argument("--eps-m", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--alpha-r", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda-s", type=float, default=None)
    p.add_argument("--ramp-epochs", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--bank-size", type=int, default=None)
    p.add_argument("--pi-denominator", choices=("all", "valid"), default=None)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning")
    p.add_argument("--config", default=None)
    p.add_argument("--data-train", default=None)
    p.add_argument("--data-test", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--init", default=None, help="pre-training checkpoint directory")
    p.add_argument("--from-scratch", action="store_true")
    p.add_argument("--baseline-metrics", default=None, help="metrics.json to diff against")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--base-lr", type=float, default=None)
    p.add_argument("--lr-step", type=int, default=None)
    p.add_argument("--lr-factor", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--num-frames", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a fine-tuned checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-frames", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--noise-seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep one knob and report metrics per value")
    p.add_argument("--config", default=None)
    p.add_argument("--data-train", default=None)
    p.add_argument("--data-test", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--sweep", required=True, help="k=1,3,5,7 | alpha=... | sigma=...")
    p.add_argument("--pretrain-epochs", type=int, default=None)
    p.add_argument("--finetune-epochs", type=int, default=None)
    p.add_argument("--noise-seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--ops-only", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_with_seed_default(cmd_grad_check))

    return parser


def _with_seed_default(fn):
    def wrapped(args):
        if getattr(args, "seed", None) is None:
            args.seed = _resolve_seed(None, {})
        return fn(args)

    return wrapped


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
