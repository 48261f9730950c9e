"""Experiment harness: typed flat-file configs, the ablation preset grid,
and Markdown/CSV report tables.

Config files are flat ``key = value`` documents with dotted section prefixes
(``data.``, ``tasks.``, ``model.``, ``objective.``, ``trainer.stage1.``,
``trainer.stage2.``) and ``#`` comments. Every key has a typed default;
unknown keys and malformed values are rejected with the offending key path.

Presets name the rows of the standard ablation grid. Each maps to a fully
resolved set of config overrides (routing preset, variant flags, weighting
mode). The fixed recipes chain the winning choice of each experiment block
forward: the no-intermediate routing wins the first block, dropping the Two
task wins the loss block, and the clamped-linear output wins the weighting
block, so later rows build on those choices. ``--chain`` re-derives the
chain empirically on the data at hand instead of using the fixed recipes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import (
    LabeledSample,
    Split,
    SynthSpec,
    by_split,
    generate_synthetic,
    make_batches,
    read_manifest,
)
from .errors import ConfigError
from .model import MultitaskModel
from .objectives import MetricsReport, MultitaskObjective
from .tasks import TaskKind, TaskSet, build_task_set, compute_class_weights
from .trainer import Stage, StageConfig, TrainHistory, evaluate, fit_two_stage, save_checkpoint

logger = logging.getLogger(__name__)


class SampleWeighting(Enum):
    NONE = "none"
    INVERSE_COUNTRY = "inverse_country"


def compute_sample_weights(batch_countries, mode: SampleWeighting) -> np.ndarray:
    """Per-sample weights within one batch.

    ``INVERSE_COUNTRY``: ``u_b = B / (G * n_{c_b})`` where ``G`` is the number
    of distinct countries in the batch and ``n_{c_b}`` the batch count of
    sample b's country. The weights sum to B (G groups each contribute
    ``n_c * B/(G*n_c) = B/G``), so the batch mean is exactly 1.
    """
    countries = np.asarray(batch_countries, dtype=np.int64)
    if countries.ndim != 1 or countries.size == 0:
        raise ConfigError("batch countries must be a non-empty 1-D sequence")
    if mode is SampleWeighting.NONE:
        return np.ones(countries.size, dtype=np.float64)
    values, counts = np.unique(countries, return_counts=True)
    group_count = {int(v): int(n) for v, n in zip(values, counts)}
    b, g = countries.size, len(values)
    return np.array([b / (g * group_count[int(c)]) for c in countries], dtype=np.float64)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one training run.

    Field names mirror the flat config keys (``data.n_samples`` ->
    ``data_n_samples``); see ``CONFIG_KEYS`` for the full key set.
    """

    seed: int = 0
    out_dir: str = "runs/exp"
    data_source: str = "synth"
    data_manifest: str = ""
    data_n_samples: int = 200
    data_dim: int = 16
    data_t_min: int = 4
    data_t_max: int = 12
    data_noise_level: float = 0.0
    data_train_fraction: float = 0.8
    tasks_preset: str = "2/3"
    tasks_flags: tuple[str, ...] = ()
    model_backbone: str = "tiny"
    model_encoder_dim: int = 32
    model_encoder_blocks: int = 2
    model_head_hidden: int = 256
    model_detach_intermediate: bool = False
    model_uncertainty_variant: str = "simple"
    objective_class_weights: bool = True
    objective_sample_weights: str = "none"
    s1_max_epochs: int = 30
    s1_patience: int = 2
    s1_batch_size: int = 32
    s1_lr: float = 1e-3
    s1_weight_decay: float = 0.01
    s1_grad_clip: float = 0.0
    s2_max_epochs: int = 30
    s2_patience: int = 2
    s2_batch_size: int = 32
    s2_lr_max: float = 4e-5
    s2_warmup_epochs: int = 1
    s2_weight_decay: float = 0.01
    s2_grad_clip: float = 0.0

    def validate(self) -> None:
        if self.data_source not in ("synth", "manifest"):
            raise ConfigError(
                f"data.source must be 'synth' or 'manifest', got {self.data_source!r}"
            )
        if self.data_source == "manifest":
            if not self.data_manifest:
                raise ConfigError("data.manifest is required when data.source = manifest")
            if not Path(self.data_manifest).exists():
                raise ConfigError(f"data.manifest does not exist: {self.data_manifest}")
        else:
            self.synth_spec()  # surfaces range errors
        self.task_set()
        self.sample_weighting()
        if self.model_backbone not in ("identity", "tiny"):
            raise ConfigError(
                f"model.backbone must be 'identity' or 'tiny', got {self.model_backbone!r}"
            )
        if self.model_uncertainty_variant not in ("simple", "half"):
            raise ConfigError(
                "model.uncertainty_variant must be 'simple' or 'half', "
                f"got {self.model_uncertainty_variant!r}"
            )
        self.stage_configs()

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            n_samples=self.data_n_samples,
            dim=self.data_dim,
            t_range=(self.data_t_min, self.data_t_max),
            seed=self.seed,
            noise_level=self.data_noise_level,
            train_fraction=self.data_train_fraction,
        )

    def task_set(self) -> TaskSet:
        return build_task_set(self.tasks_preset, self.tasks_flags)

    def sample_weighting(self) -> SampleWeighting:
        try:
            return SampleWeighting(self.objective_sample_weights)
        except ValueError:
            raise ConfigError(
                "objective.sample_weights must be one of "
                f"{[m.value for m in SampleWeighting]}, got {self.objective_sample_weights!r}"
            ) from None

    def stage_configs(self) -> tuple[StageConfig, StageConfig]:
        heads = StageConfig(
            stage=Stage.HEADS_ONLY,
            max_epochs=self.s1_max_epochs,
            patience=self.s1_patience,
            batch_size=self.s1_batch_size,
            lr=self.s1_lr,
            weight_decay=self.s1_weight_decay,
            grad_clip=self.s1_grad_clip,
        )
        finetune = StageConfig(
            stage=Stage.FINE_TUNE,
            max_epochs=self.s2_max_epochs,
            patience=self.s2_patience,
            batch_size=self.s2_batch_size,
            lr_max=self.s2_lr_max,
            warmup_epochs=self.s2_warmup_epochs,
            weight_decay=self.s2_weight_decay,
            grad_clip=self.s2_grad_clip,
        )
        return heads, finetune

    def load_samples(self) -> tuple[list[LabeledSample], list[LabeledSample]]:
        if self.data_source == "synth":
            samples = generate_synthetic(self.synth_spec())
        else:
            samples = read_manifest(self.data_manifest)
        train = by_split(samples, Split.TRAIN)
        val = by_split(samples, Split.VAL)
        if not train or not val:
            raise ConfigError(
                f"need non-empty train and val splits, got {len(train)}/{len(val)}"
            )
        return train, val


# Dotted config key -> ExperimentConfig field. Order fixes the emitted layout.
CONFIG_KEYS: dict[str, str] = {
    "seed": "seed",
    "out_dir": "out_dir",
    "data.source": "data_source",
    "data.manifest": "data_manifest",
    "data.n_samples": "data_n_samples",
    "data.dim": "data_dim",
    "data.t_min": "data_t_min",
    "data.t_max": "data_t_max",
    "data.noise_level": "data_noise_level",
    "data.train_fraction": "data_train_fraction",
    "tasks.preset": "tasks_preset",
    "tasks.flags": "tasks_flags",
    "model.backbone": "model_backbone",
    "model.encoder_dim": "model_encoder_dim",
    "model.encoder_blocks": "model_encoder_blocks",
    "model.head_hidden": "model_head_hidden",
    "model.detach_intermediate": "model_detach_intermediate",
    "model.uncertainty_variant": "model_uncertainty_variant",
    "objective.class_weights": "objective_class_weights",
    "objective.sample_weights": "objective_sample_weights",
    "trainer.stage1.max_epochs": "s1_max_epochs",
    "trainer.stage1.patience": "s1_patience",
    "trainer.stage1.batch_size": "s1_batch_size",
    "trainer.stage1.lr": "s1_lr",
    "trainer.stage1.weight_decay": "s1_weight_decay",
    "trainer.stage1.grad_clip": "s1_grad_clip",
    "trainer.stage2.max_epochs": "s2_max_epochs",
    "trainer.stage2.patience": "s2_patience",
    "trainer.stage2.batch_size": "s2_batch_size",
    "trainer.stage2.lr_max": "s2_lr_max",
    "trainer.stage2.warmup_epochs": "s2_warmup_epochs",
    "trainer.stage2.weight_decay": "s2_weight_decay",
    "trainer.stage2.grad_clip": "s2_grad_clip",
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"invalid boolean for {key!r}: {raw!r}")


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[CONFIG_KEYS[key]]
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            return _parse_bool(key, raw)
        if ftype.startswith("tuple"):
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"invalid {ftype} for {key!r}: {raw!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(value)
    return str(value)


def _split_assignment(entry: str, where: str) -> tuple[str, str]:
    if "=" not in entry:
        raise ConfigError(f"{where}: expected 'key = value', got {entry!r}")
    key, raw = entry.split("=", 1)
    key, raw = key.strip(), raw.strip()
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    return key, raw


def parse_config_text(text: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    assignments: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, raw = _split_assignment(stripped, f"line {lineno}")
        assignments[key] = raw
    for i, entry in enumerate(overrides, start=1):
        key, raw = _split_assignment(entry, f"override {i}")
        assignments[key] = raw
    if "seed" not in assignments:
        raise ConfigError("missing mandatory config key 'seed'")
    kwargs = {CONFIG_KEYS[k]: _parse_value(k, raw) for k, raw in assignments.items()}
    config = ExperimentConfig(**kwargs)
    config.validate()
    return config


def parse_config(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), overrides)


def format_config(config: ExperimentConfig) -> str:
    """Emits the full key set; ``parse_config_text`` round-trips it exactly."""
    lines = [f"{key} = {_format_value(getattr(config, attr))}" for key, attr in CONFIG_KEYS.items()]
    return "\n".join(lines) + "\n"


def apply_overrides(config: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    kwargs = {}
    for i, entry in enumerate(overrides, start=1):
        key, raw = _split_assignment(entry, f"override {i}")
        kwargs[CONFIG_KEYS[key]] = _parse_value(key, raw)
    updated = replace(config, **kwargs)
    updated.validate()
    return updated


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    model: MultitaskModel
    heads_history: TrainHistory
    finetune_history: TrainHistory
    report: MetricsReport
    out_dir: Path | None


def run_experiment(config: ExperimentConfig, write_artifacts: bool = True) -> ExperimentResult:
    """Build data, model, and objective from a config; train both stages;
    evaluate on the validation split; optionally write run artifacts."""
    torch.set_num_threads(1)
    config.validate()
    task_set = config.task_set()
    train, val = config.load_samples()
    in_dim = train[0].features.D

    model = MultitaskModel(
        task_set,
        in_dim,
        backbone=config.model_backbone,
        encoder_dim=config.model_encoder_dim,
        encoder_blocks=config.model_encoder_blocks,
        head_hidden=config.model_head_hidden,
        detach_intermediate=config.model_detach_intermediate,
        uncertainty_variant=config.model_uncertainty_variant,
        seed=config.seed,
    )

    class_weights = None
    if config.objective_class_weights:
        class_weights = {}
        for spec in task_set.tasks:
            if spec.kind is TaskKind.CLASSIFICATION:
                counts = np.bincount(
                    [int(s.targets[spec.name]) for s in train], minlength=spec.dim
                )
                class_weights[spec.name] = compute_class_weights(counts, task=spec.name).weights

    mode = config.sample_weighting()
    weight_fn = None
    if mode is not SampleWeighting.NONE:
        weight_fn = lambda countries: compute_sample_weights(countries, mode)

    objective = MultitaskObjective(
        task_set, model.uncertainty, class_weights=class_weights, sample_weight_fn=weight_fn
    )
    heads_cfg, finetune_cfg = config.stage_configs()
    hist1, hist2 = fit_two_stage(
        model, objective, train, val, heads_cfg, finetune_cfg, seed=config.seed
    )
    report = evaluate(model, make_batches(val, finetune_cfg.batch_size), objective)

    out_dir = None
    if write_artifacts:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(format_config(config), encoding="utf-8")
        hist1.to_jsonl(out_dir / "history_heads.jsonl")
        hist2.to_jsonl(out_dir / "history_finetune.jsonl")
        save_checkpoint(model, out_dir / "checkpoint.pt")
        (out_dir / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
        (out_dir / "metrics.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return ExperimentResult(config, model, hist1, hist2, report, out_dir)


def _axes_overrides(routing: str, flags: Sequence[str], class_weights: bool, sample_weights: str) -> tuple[str, ...]:
    return (
        f"tasks.preset={routing}",
        "tasks.flags=" + ",".join(flags),
        f"objective.class_weights={'true' if class_weights else 'false'}",
        f"objective.sample_weights={sample_weights}",
    )


# Fixed preset configs in table row order. Later rows inherit the best
# choices of earlier blocks (no-intermediate routing, then dropped Two, then
# clamped-linear regression output); dropping Country also requires the
# no-intermediate routing, since the other routings use it as an
# intermediate task.
PRESET_CONFIGS: dict[str, tuple[str, ...]] = {
    "2/3": _axes_overrides("2/3", (), True, "none"),
    "1/4": _axes_overrides("1/4", (), True, "none"),
    "0/5": _axes_overrides("0/5", (), True, "none"),
    "MSE": _axes_overrides("0/5", ("MSE",), True, "none"),
    "MAE": _axes_overrides("0/5", ("MAE",), True, "none"),
    "-Two": _axes_overrides("0/5", ("-Two",), True, "none"),
    "-CW": _axes_overrides("0/5", ("-Two",), False, "none"),
    "+SW": _axes_overrides("0/5", ("-Two",), False, "inverse_country"),
    "-SM": _axes_overrides("0/5", ("-Two", "-SM"), True, "none"),
    "-Country": _axes_overrides("0/5", ("-Two", "-SM", "-Country"), True, "none"),
}

PRESET_ORDER: tuple[str, ...] = tuple(PRESET_CONFIGS)

# Experiment blocks for --chain, in the order the original study ran them:
# routing, then task loss (including dropping Two), then weighting, then
# task removal.
CHAIN_BLOCKS: tuple[tuple[str, ...], ...] = (
    ("2/3", "1/4", "0/5"),
    ("MSE", "MAE", "-Two"),
    ("-CW", "+SW", "-SM"),
    ("-Country",),
)

REPORT_COLUMNS: tuple[tuple[str, str], ...] = (
    ("High", "CCC"),
    ("Culture", "CCC"),
    ("Two", "CCC"),
    ("Type", "UAR"),
    ("Country", "UAR"),
)


def _sanitize(preset: str) -> str:
    return preset.replace("/", "-")


def _preset_config(preset: str, base: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    config = apply_overrides(base, overrides)
    return replace(config, out_dir=str(Path(base.out_dir) / _sanitize(preset)))


def run_preset(
    preset: str, base_config: ExperimentConfig, write_artifacts: bool = True
) -> ExperimentResult:
    """Run one named ablation row; artifacts go to ``out_dir/<preset>/``."""
    if preset not in PRESET_CONFIGS:
        raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESET_ORDER)}")
    config = _preset_config(preset, base_config, PRESET_CONFIGS[preset])
    return run_experiment(config, write_artifacts=write_artifacts)


@dataclass
class GridRow:
    preset: str
    report: MetricsReport | None
    error: str | None = None


@dataclass
class GridResult:
    rows: list[GridRow]
    markdown: str
    csv: str
    out_dir: Path | None


def _score(report: MetricsReport) -> float:
    return float(np.mean(list(report.metrics.values())))


def _fmt_cell(report: MetricsReport, task: str) -> str:
    value = report.metrics.get(task)
    return "--" if value is None else f"{value:.3f}"


def render_grid_markdown(rows: Sequence[GridRow], bold_best: bool = False) -> str:
    header = ["Preset"] + [f"{task} {kind}" for task, kind in REPORT_COLUMNS]
    cells: list[list[str]] = []
    for row in rows:
        if row.report is None:
            cells.append([row.preset] + ["ERR"] * len(REPORT_COLUMNS))
        else:
            cells.append([row.preset] + [_fmt_cell(row.report, task) for task, _ in REPORT_COLUMNS])
    if bold_best:
        for col in range(1, len(header)):
            numeric = [
                (i, float(c[col])) for i, c in enumerate(cells) if c[col] not in ("--", "ERR")
            ]
            if not numeric:
                continue
            best = max(v for _, v in numeric)
            for i, v in numeric:
                if v == best:
                    cells[i][col] = f"**{cells[i][col]}**"
    lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
    ]
    lines += ["| " + " | ".join(c) + " |" for c in cells]
    errors = [row for row in rows if row.error]
    if errors:
        lines.append("")
        lines.append("Errors:")
        lines += [f"- {row.preset}: {row.error}" for row in errors]
    return "\n".join(lines) + "\n"


def render_grid_csv(rows: Sequence[GridRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["preset"] + [f"{t.lower()}_{k.lower()}" for t, k in REPORT_COLUMNS] + ["error"])
    for row in rows:
        values = []
        for task, _ in REPORT_COLUMNS:
            value = None if row.report is None else row.report.metrics.get(task)
            values.append("" if value is None else repr(value))
        writer.writerow([row.preset] + values + [row.error or ""])
    return buffer.getvalue()


def _rows_to_json(rows: Sequence[GridRow]) -> str:
    payload = [
        {
            "preset": row.preset,
            "metrics": None if row.report is None else row.report.to_dict(),
            "error": row.error,
        }
        for row in rows
    ]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def rows_from_json(text: str) -> list[GridRow]:
    rows = []
    for entry in json.loads(text):
        report = None if entry["metrics"] is None else MetricsReport.from_dict(entry["metrics"])
        rows.append(GridRow(preset=entry["preset"], report=report, error=entry["error"]))
    return rows


def _run_row(preset: str, config: ExperimentConfig, write_artifacts: bool) -> GridRow:
    try:
        result = run_experiment(config, write_artifacts=write_artifacts)
        return GridRow(preset=preset, report=result.report)
    except Exception as exc:  # recorded in-row; the grid must not abort
        logger.warning("preset %s failed: %s", preset, exc)
        return GridRow(preset=preset, report=None, error=f"{type(exc).__name__}: {exc}")


def _chain_axes(preset: str, axes: dict) -> dict:
    updated = dict(axes)
    if preset in ("2/3", "1/4", "0/5"):
        return {"routing": preset, "flags": (), "cw": True, "sw": "none"}
    if preset in ("MSE", "MAE", "-Two"):
        updated["flags"] = tuple(dict.fromkeys(axes["flags"] + (preset,)))
    elif preset == "-CW":
        updated["cw"] = False
    elif preset == "+SW":
        updated["cw"] = False
        updated["sw"] = "inverse_country"
    elif preset == "-SM":
        updated["flags"] = tuple(dict.fromkeys(axes["flags"] + ("-SM",)))
    elif preset == "-Country":
        updated["flags"] = tuple(dict.fromkeys(axes["flags"] + ("-Country",)))
    else:
        raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESET_ORDER)}")
    return updated


def run_grid(
    presets: Sequence[str],
    base_config: ExperimentConfig,
    chain: bool = False,
    bold_best: bool = False,
    write_artifacts: bool = True,
) -> GridResult:
    """Run the requested presets with the shared seed and render the report.

    Without ``chain``, each preset uses its fixed reference configuration.
    With ``chain``, the experiment blocks run in order and the empirically
    best configuration (highest mean metric, keeping the previous best when
    no candidate beats it) is carried into the next block.
    """
    if not presets:
        raise ConfigError("run_grid needs at least one preset")
    unknown = [p for p in presets if p not in PRESET_CONFIGS]
    if unknown:
        raise ConfigError(f"unknown preset {unknown[0]!r}; known: {', '.join(PRESET_ORDER)}")

    rows: list[GridRow] = []
    if not chain:
        for preset in presets:
            config = _preset_config(preset, base_config, PRESET_CONFIGS[preset])
            rows.append(_run_row(preset, config, write_artifacts))
    else:
        requested = set(presets)
        carry = {
            "routing": base_config.tasks_preset,
            "flags": tuple(base_config.tasks_flags),
            "cw": base_config.objective_class_weights,
            "sw": base_config.objective_sample_weights,
        }
        best_score: float | None = None
        for block in CHAIN_BLOCKS:
            candidates = [p for p in block if p in requested]
            if not candidates:
                continue
            block_results: list[tuple[GridRow, dict]] = []
            for preset in candidates:
                try:
                    axes = _chain_axes(preset, carry)
                    overrides = _axes_overrides(
                        axes["routing"], axes["flags"], axes["cw"], axes["sw"]
                    )
                    config = _preset_config(preset, base_config, overrides)
                except Exception as exc:
                    rows.append(
                        GridRow(preset=preset, report=None, error=f"{type(exc).__name__}: {exc}")
                    )
                    continue
                row = _run_row(preset, config, write_artifacts)
                rows.append(row)
                if row.report is not None:
                    block_results.append((row, axes))
            if block_results:
                top_row, top_axes = max(block_results, key=lambda pair: _score(pair[0].report))
                top = _score(top_row.report)
                if best_score is None or top > best_score:
                    best_score = top
                    carry = top_axes

    markdown = render_grid_markdown(rows, bold_best=bold_best)
    csv_text = render_grid_csv(rows)
    out_dir = None
    if write_artifacts:
        out_dir = Path(base_config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.md").write_text(markdown, encoding="utf-8")
        (out_dir / "ablation.csv").write_text(csv_text, encoding="utf-8")
        (out_dir / "rows.json").write_text(_rows_to_json(rows), encoding="utf-8")
    return GridResult(rows=rows, markdown=markdown, csv=csv_text, out_dir=out_dir)
