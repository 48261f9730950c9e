"""Command-line entry point.

Subcommands: ``synth`` (generate a synthetic dataset), ``train`` (one
experiment from a config file), ``evaluate`` (metrics for a checkpoint on a
manifest split), ``predict`` (long-format predictions CSV), ``ablate`` (the
preset grid with Markdown/CSV tables), ``report`` (re-render stored run or
grid artifacts without retraining).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .data import Split, SynthSpec, by_split, generate_synthetic, make_batches, read_manifest, write_dataset
from .errors import ToolkitError
from .harness import (
    PRESET_ORDER,
    parse_config,
    render_grid_markdown,
    rows_from_json,
    run_experiment,
    run_grid,
)
from .objectives import MetricsReport
from .trainer import TrainHistory, evaluate as evaluate_model, load_checkpoint


def _add_common(parser: argparse.ArgumentParser, config_required: bool) -> None:
    parser.add_argument("--config", required=config_required, help="experiment config file")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override, applied after the file (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="overrides the config output directory")


def _resolved_overrides(args) -> list[str]:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    return overrides


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        n_samples=args.n,
        dim=args.dim,
        t_range=(args.t_min, args.t_max),
        seed=args.seed,
        noise_level=args.noise,
        train_fraction=args.train_fraction,
    )
    samples = generate_synthetic(spec)
    manifest = write_dataset(samples, args.out)
    n_train = len(by_split(samples, Split.TRAIN))
    n_val = len(by_split(samples, Split.VAL))
    print(f"wrote {len(samples)} samples ({n_train} train / {n_val} val) to {manifest}")
    return 0


def _cmd_train(args) -> int:
    config = parse_config(args.config, _resolved_overrides(args))
    result = run_experiment(config)
    print(result.report.to_text())
    print(f"artifacts written to {result.out_dir}")
    return 0


def _load_split_samples(manifest: str, split: str | None):
    samples = read_manifest(manifest)
    if split is not None:
        samples = by_split(samples, Split(split))
    if not samples:
        raise ToolkitError(f"no samples selected from {manifest} (split={split})")
    return samples


def _cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    samples = _load_split_samples(args.manifest, args.split)
    report = evaluate_model(model, make_batches(samples, args.batch_size))
    text = report.to_text()
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def _cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    samples = _load_split_samples(args.manifest, args.split)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "task", "dim_index", "value"])
        for batch in make_batches(samples, args.batch_size):
            outputs = model.forward_batch(batch)
            for spec in model.task_set.tasks:
                values = outputs[spec.name].detach().numpy()
                for row, sample_id in enumerate(batch.ids):
                    for dim_index in range(spec.dim):
                        writer.writerow(
                            [sample_id, spec.name, dim_index, repr(float(values[row, dim_index]))]
                        )
    print(f"wrote predictions for {len(samples)} samples to {out_path}")
    return 0


def _cmd_ablate(args) -> int:
    config = parse_config(args.config, _resolved_overrides(args))
    if args.presets.strip().lower() == "all":
        presets = list(PRESET_ORDER)
    else:
        presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    result = run_grid(presets, config, chain=args.chain, bold_best=args.bold_best)
    print(result.markdown, end="")
    print(f"table written to {result.out_dir}/ablation.md and ablation.csv")
    return 0


def _cmd_report(args) -> int:
    if args.grid:
        rows_path = Path(args.grid) / "rows.json"
        if not rows_path.exists():
            raise ToolkitError(f"no grid artifacts found at {rows_path}")
        rows = rows_from_json(rows_path.read_text(encoding="utf-8"))
        print(render_grid_markdown(rows, bold_best=args.bold_best), end="")
        return 0
    run_dir = Path(args.run)
    metrics_path = run_dir / "metrics.json"
    if not metrics_path.exists():
        raise ToolkitError(f"no run artifacts found at {metrics_path}")
    report = MetricsReport.from_dict(json.loads(metrics_path.read_text(encoding="utf-8")))
    print(report.to_text())
    for name in ("history_heads.jsonl", "history_finetune.jsonl"):
        path = run_dir / name
        if path.exists():
            hist = TrainHistory.from_jsonl(path)
            print(
                f"stage {hist.stage.value}: {len(hist.records)} epochs, "
                f"best epoch {hist.best_epoch} (val total {hist.best_val_total:.6f})"
            )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstmtl",
        description="Multitask vocal-burst affect toolkit: training, evaluation, and ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset (VBF1 features + manifest)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=200, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=16, help="feature dimension")
    p.add_argument("--t-min", type=int, default=4)
    p.add_argument("--t-max", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.0, help="frame noise level")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="run one experiment from a config file")
    _add_common(p, config_required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=[s.value for s in Split], default=Split.VAL.value)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", default=None, help="also write the metrics block to this file")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict", help="write per-sample per-task predictions CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=[s.value for s in Split], default=None)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True, help="output CSV (id,task,dim_index,value)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("ablate", help="run ablation presets and write the report table")
    _add_common(p, config_required=True)
    p.add_argument(
        "--presets",
        default="all",
        help=f"comma-separated preset names or 'all' ({', '.join(PRESET_ORDER)})",
    )
    p.add_argument("--chain", action="store_true", help="carry the best config between blocks")
    p.add_argument("--bold-best", action="store_true", help="bold the best value per column")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="re-render stored artifacts without retraining")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--run", help="single-run directory (metrics + histories)")
    group.add_argument("--grid", help="grid directory (rows.json)")
    p.add_argument("--bold-best", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
