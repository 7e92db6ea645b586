"""Command-line entry point.

Subcommands: gen-data, train, eval, export-features, landscape. Every run
writes a resolved-config snapshot next to its outputs; exit code 0 means
success, 1 a validation problem (bad config, malformed inputs), 2 a runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from . import configio
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import ClipDataset, CorpusError, generate_corpus, load_manifest
from .metrics import evaluate, export_features, landscape_slice, save_landscape
from .pipeline import TrainingDiverged, train

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable, dotted paths allowed)",
        )
        p.add_argument("--seed", type=int, default=None, help="shortcut for the seed config key")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vocdetect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic vocoder corpus")
    _add_common(p)

    p = sub.add_parser("train", help="train the detector on a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
    _add_common(p)

    p = sub.add_parser("eval", help="score a split and write an EvalReport")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    _add_common(p, config=False)

    p = sub.add_parser("export-features", help="export per-clip embeddings as CSV")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    _add_common(p, config=False)

    p = sub.add_parser("landscape", help="export a 2-D loss-landscape grid")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="train", choices=("train", "dev", "test"))
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--grid-k", type=int, default=10)
    p.add_argument("--direction-seed", type=int, default=0)
    p.add_argument("--batch-clips", type=int, default=64, help="clips used for the landscape loss")
    _add_common(p, config=False)
    return parser


def _resolve(args, defaults: dict) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return configio.resolve(defaults, args.config, overrides)


def _write_snapshot(out_dir: Path, resolved: dict | None, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = configio.snapshot_text(resolved) if resolved else ""
    if extra:
        text += "".join(f"{k}={v}\n" for k, v in sorted(extra.items()))
    (out_dir / "resolved_config.txt").write_text(text)


def _cmd_gen_data(args) -> int:
    resolved = _resolve(args, configio.CORPUS_DEFAULTS)
    _write_snapshot(args.out, resolved)
    manifest = generate_corpus(configio.corpus_config_from(resolved), args.out)
    print(f"wrote {len(manifest.rows)} clips and manifest.csv under {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    resolved = _resolve(args, configio.TRAIN_DEFAULTS)
    _write_snapshot(args.out, resolved, {"manifest": args.manifest})
    config = configio.train_config_from(resolved)
    result = train(config, args.manifest, args.out, resume_from=args.resume)
    print(f"best dev EER {result.best_dev_eer:.4f} -> {result.best_checkpoint}")
    print(f"metrics log: {result.metrics_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    report = evaluate(model, manifest, args.split)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_snapshot(args.out, None, {"ckpt": args.ckpt, "manifest": args.manifest, "split": args.split})
    out_path = args.out / "eval_report.json"
    report.to_json(out_path)
    print(report.to_json())
    return EXIT_OK


def _cmd_export_features(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_snapshot(args.out, None, {"ckpt": args.ckpt, "manifest": args.manifest, "split": args.split})
    path = export_features(model, manifest, args.split, args.out / f"features_{args.split}.csv")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_landscape(args) -> int:
    from . import losses as L
    from .backbone import encode

    model, _, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    dataset = ClipDataset.from_manifest(manifest, args.split, model.config.input_len)
    n = min(args.batch_clips, len(dataset.labels))
    x = torch.as_tensor(dataset.waveforms[:n], dtype=model.dtype)
    labels = torch.as_tensor(dataset.labels[:n])
    domains = torch.as_tensor(dataset.domains[:n])

    def loss_fn() -> float:
        with torch.no_grad():
            c, a_s, a_g = encode(model, x)
            l = L.classification_loss(model.head_domain(a_s), domains, model.head_auth(a_g), labels, 0.1)
            return float(l)

    grid = landscape_slice(model, loss_fn, args.radius, args.grid_k, args.direction_seed)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_snapshot(
        args.out,
        None,
        {
            "ckpt": args.ckpt,
            "manifest": args.manifest,
            "split": args.split,
            "radius": args.radius,
            "grid_k": args.grid_k,
            "direction_seed": args.direction_seed,
        },
    )
    csv_path, meta_path = save_landscape(grid, args.out)
    print(f"wrote {csv_path} and {meta_path}; value range {grid.value_range():.6g}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-features": _cmd_export_features,
    "landscape": _cmd_landscape,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (configio.ConfigError, CorpusError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:  # console-script entry
    raise SystemExit(run())


if __name__ == "__main__":
    main()
