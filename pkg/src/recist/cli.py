"""Command line entry points: synthesize, train, evaluate, ablation, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as data_mod
from .errors import RecistError
from .networks import ModelConfig
from .training import TrainConfig, Variant, final_checkpoint_path, train_stage


def _load_dataset(path: Path):
    manifest = path if path.suffix == ".csv" else path / "manifest.csv"
    return data_mod.load_manifest(manifest)


def _split_validation(samples, fraction: float):
    n_val = max(1, int(round(len(samples) * fraction)))
    if len(samples) <= n_val:
        raise RecistError("dataset too small to split a validation set")
    return samples[:-n_val], samples[-n_val:]


def cmd_synthesize(args) -> int:
    config = data_mod.SynthConfig(image_size=args.image_size)
    samples = data_mod.make_synthetic_dataset(args.count, args.seed, config)
    manifest = data_mod.save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {manifest}")
    return 0


def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    model_cfg = ModelConfig.from_dict(raw.pop("model", {}))
    raw["stage"] = args.stage
    config = TrainConfig.from_dict(raw)

    samples = _load_dataset(Path(args.data))
    if args.val_data:
        train_samples, val_samples = samples, _load_dataset(Path(args.val_data))
    else:
        train_samples, val_samples = _split_validation(samples, args.val_fraction)

    init_from = None
    if args.stage == "joint" and not args.resume:
        if not args.stn_ckpt or not args.shn_ckpt:
            print("joint training needs --stn-ckpt and --shn-ckpt", file=sys.stderr)
            return 2
        init_from = {"stn": Path(args.stn_ckpt), "shn": Path(args.shn_ckpt)}

    result = train_stage(
        config,
        model_cfg,
        train_samples,
        val_samples,
        args.out,
        init_from=init_from,
        resume=Path(args.resume) if args.resume else None,
    )
    print(
        f"stage {args.stage} finished: epochs={result.state.epoch} "
        f"best_val={result.state.best_val_loss:.6f} "
        f"lr_sequence={result.lr_sequence} -> {result.best_path}"
    )
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_checkpoint, render_table, MetricsTable

    samples = _load_dataset(Path(args.data))
    metrics, _ = evaluate_checkpoint(args.ckpt, samples, seed=args.seed)
    table = MetricsTable()
    for axis, m in metrics.items():
        table.set("model", "GT", axis, m)
    out = {
        "num_samples": len(samples),
        "seed": args.seed,
        "metrics": {axis: m.to_dict() for axis, m in metrics.items()},
    }
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True))
    print(render_table(table))
    print(f"wrote {args.out}")
    return 0


def cmd_ablation(args) -> int:
    from .evaluation import AblationConfig, render_table, run_ablation

    samples = _load_dataset(Path(args.data))
    ckpt_root = Path(args.ckpts)
    configs = [
        AblationConfig(v, final_checkpoint_path(v, ckpt_root / v.value))
        for v in Variant
    ]
    table, meta = run_ablation(configs, samples, seed=args.seed)
    Path(args.out).write_text(
        json.dumps({"table": table.to_dict(), "metadata": meta}, indent=2, sort_keys=True)
    )
    print(render_table(table))
    if meta["errors"]:
        print(f"skipped variants: {meta['errors']}", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .service import ServeSettings, serve

    settings = ServeSettings.from_env(
        ckpt=args.ckpt,
        host=args.host,
        port=args.port,
        max_image_px=args.max_image_px,
    )
    serve(settings)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recist",
        description="Semi-automatic RECIST annotation: train, evaluate, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="generate a synthetic lesion dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=192)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", choices=("stn", "shn", "joint"), required=True)
    p.add_argument("--config", help="JSON file with TrainConfig keys (+ optional 'model')")
    p.add_argument("--data", required=True, help="dataset dir (manifest.csv inside)")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--val-data", help="separate validation dataset dir")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--stn-ckpt", help="localization checkpoint (joint stage)")
    p.add_argument("--shn-ckpt", help="hourglass checkpoint (joint stage)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint against a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="metrics JSON output path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation", help="evaluate all trained variants")
    p.add_argument("--ckpts", required=True, help="root dir with per-variant runs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="table JSON output path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("serve", help="run the inference HTTP service")
    p.add_argument("--ckpt")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--max-image-px", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RecistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
