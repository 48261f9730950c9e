"""Two-stage training loop: frozen-backbone head warmup, then full fine-tune.

Stage 1 (``HEADS_ONLY``) trains projection heads and uncertainty parameters
with a fixed learning rate while the backbone stays frozen. Stage 2
(``FINE_TUNE``) unfreezes everything and follows a cosine schedule with
linear warmup. Both stages early-stop on the validation multitask loss and
restore the best-epoch weights before returning.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import Batch, LabeledSample, make_batches
from .errors import CheckpointError, ConfigError, DegenerateDataError, DivergedError
from .model import MultitaskModel
from .objectives import MetricsReport, MultitaskObjective, ccc_multi, uar
from .tasks import TaskKind, TaskSet, culture_dim_mask

logger = logging.getLogger(__name__)


class Stage(Enum):
    HEADS_ONLY = "heads_only"
    FINE_TUNE = "fine_tune"


@dataclass(frozen=True)
class StageConfig:
    """Hyperparameters for one training stage.

    ``lr`` is the fixed rate used by ``HEADS_ONLY``; ``lr_max`` and
    ``warmup_epochs`` drive the warmup-cosine schedule used by ``FINE_TUNE``.
    """

    stage: Stage
    max_epochs: int = 30
    patience: int = 2
    batch_size: int = 32
    lr: float = 1e-3
    lr_max: float = 4e-5
    warmup_epochs: int = 1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 <= self.patience < self.max_epochs:
            raise ConfigError(
                f"patience must lie in [0, max_epochs), got {self.patience} vs {self.max_epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or self.lr_max <= 0:
            raise ConfigError("learning rates must be positive")
        if self.stage is Stage.FINE_TUNE and not 0 <= self.warmup_epochs < self.max_epochs:
            raise ConfigError(
                f"warmup_epochs must lie in [0, max_epochs), got {self.warmup_epochs}"
            )


def lr_schedule(step: int, warmup_steps: int, total_steps: int, lr_max: float) -> float:
    """Linear warmup to ``lr_max`` then cosine decay to zero.

    Exact endpoints: returns 0.0 at step 0 (for warmup_steps > 0), exactly
    ``lr_max`` at ``step == warmup_steps``, and exactly 0.0 at
    ``step == total_steps``.
    """
    if total_steps <= 0 or not 0 <= warmup_steps < total_steps:
        raise ConfigError(
            f"need 0 <= warmup_steps < total_steps, got {warmup_steps} / {total_steps}"
        )
    if step < 0 or step > total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr_max * step / warmup_steps
    if step == warmup_steps:
        return lr_max
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * frac))


class EarlyStopper:
    """Tracks the best validation value and counts non-improving epochs.

    ``update`` returns True when the value strictly improves on the best so
    far. ``should_stop`` turns True once ``patience`` consecutive epochs have
    failed to improve.
    """

    def __init__(self, patience: int):
        if patience < 0:
            raise ConfigError(f"patience must be >= 0, got {patience}")
        self.patience = patience
        self.best_value = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience > 0


@dataclass
class EpochRecord:
    """One epoch's training summary, serializable to a JSON object."""

    epoch: int
    train_losses: dict[str, float]
    train_total: float
    val_losses: dict[str, float]
    val_total: float
    val_metrics: dict[str, float]
    task_weights: dict[str, float]
    lr: float
    wall_time: float

    def to_dict(self) -> dict:
        return {"record": "epoch", **self.__dict__}

    @classmethod
    def from_dict(cls, d: dict) -> "EpochRecord":
        d = {k: v for k, v in d.items() if k != "record"}
        return cls(**d)


@dataclass
class TrainHistory:
    """Full record of one stage: per-epoch records plus stage metadata."""

    stage: Stage
    records: list[EpochRecord] = field(default_factory=list)
    initial_val_total: float = math.nan
    best_epoch: int = 0
    best_val_total: float = math.inf
    stopped_early: bool = False

    def to_jsonl(self, path) -> None:
        path = Path(path)
        meta = {
            "record": "meta",
            "stage": self.stage.value,
            "initial_val_total": self.initial_val_total,
            "best_epoch": self.best_epoch,
            "best_val_total": self.best_val_total,
            "stopped_early": self.stopped_early,
        }
        lines = [json.dumps(meta)] + [json.dumps(r.to_dict()) for r in self.records]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_jsonl(cls, path) -> "TrainHistory":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            raise CheckpointError(f"empty history file: {path}")
        meta = json.loads(lines[0])
        if meta.get("record") != "meta":
            raise CheckpointError(f"history file {path} does not start with a meta record")
        hist = cls(
            stage=Stage(meta["stage"]),
            initial_val_total=meta["initial_val_total"],
            best_epoch=meta["best_epoch"],
            best_val_total=meta["best_val_total"],
            stopped_early=meta["stopped_early"],
        )
        for ln in lines[1:]:
            hist.records.append(EpochRecord.from_dict(json.loads(ln)))
        return hist


def derived_seed(*parts) -> int:
    """Stable 63-bit seed from any sequence of parts (strings/ints)."""
    key = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def evaluate(
    model: MultitaskModel,
    batches: Sequence[Batch],
    objective: MultitaskObjective | None = None,
) -> MetricsReport:
    """Split-level metrics (CCC over concatenated predictions, UAR) and,
    when an objective is given, size-weighted mean per-task losses plus the
    combined multitask total under the current uncertainty parameters.
    Batches too small or too country-skewed for a per-batch loss contribute
    to the metrics but not to the loss averages."""
    task_set = model.task_set
    preds: dict[str, list[np.ndarray]] = {s.name: [] for s in task_set.tasks}
    targets: dict[str, list[np.ndarray]] = {s.name: [] for s in task_set.tasks}
    countries: list[np.ndarray] = []
    loss_sums: dict[str, float] = {s.name: 0.0 for s in task_set.tasks}
    loss_weight = 0.0

    was_training = model.training
    model.eval()
    with torch.no_grad():
        for batch in batches:
            outputs = model.forward_batch(batch)
            for spec in task_set.tasks:
                preds[spec.name].append(outputs[spec.name].numpy())
                targets[spec.name].append(np.asarray(batch.targets[spec.name]))
            countries.append(np.asarray(batch.countries))
            if objective is not None and batch.size >= 2:
                try:
                    losses = objective.task_losses(outputs, batch)
                except DegenerateDataError:
                    continue  # e.g. no country repeated: Culture loss undefined
                for name, value in losses.items():
                    loss_sums[name] += float(value) * batch.size
                loss_weight += batch.size
    if was_training:
        model.train()

    metrics: dict[str, float] = {}
    kinds: dict[str, str] = {}
    all_countries = np.concatenate(countries) if countries else np.zeros(0, dtype=np.int64)
    for spec in task_set.tasks:
        p = np.concatenate(preds[spec.name], axis=0)
        t = np.concatenate(targets[spec.name], axis=0)
        if spec.kind is TaskKind.CLASSIFICATION:
            metrics[spec.name] = uar(p.argmax(axis=1), t.astype(np.int64), spec.dim)
            kinds[spec.name] = "UAR"
        else:
            dim_mask = culture_dim_mask(all_countries) if spec.name == "Culture" else None
            metrics[spec.name] = ccc_multi(p, t, dim_mask)
            kinds[spec.name] = "CCC"

    task_losses: dict[str, float] = {}
    total = math.nan
    if objective is not None and loss_weight > 0:
        task_losses = {name: s / loss_weight for name, s in loss_sums.items()}
        with torch.no_grad():
            total = float(objective.total(task_losses))
    return MetricsReport(metrics=metrics, metric_kinds=kinds, task_losses=task_losses, total_loss=total)


def _snapshot(model: MultitaskModel) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train_stage(
    model: MultitaskModel,
    objective: MultitaskObjective,
    train_samples: Sequence[LabeledSample],
    val_samples: Sequence[LabeledSample],
    config: StageConfig,
    seed: int = 0,
) -> TrainHistory:
    """Runs one stage and leaves the model holding its best-epoch weights.

    Raises ``DivergedError`` (after restoring the best weights seen so far)
    if any task loss or the combined total goes non-finite.
    """
    if not train_samples:
        raise ConfigError("train_stage needs at least one training sample")
    if not val_samples:
        raise ConfigError("train_stage needs at least one validation sample")
    if objective.uncertainty is not model.uncertainty:
        raise ConfigError(
            "objective must share the model's uncertainty parameters, "
            "otherwise the task weights never train"
        )

    heads_only = config.stage is Stage.HEADS_ONLY
    for p in model.backbone.parameters():
        p.requires_grad_(not heads_only)
    trainable = list(model.head_parameters()) if heads_only else list(model.parameters())
    optimizer = torch.optim.AdamW(
        trainable,
        lr=config.lr if heads_only else 0.0,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )

    steps_per_epoch = math.ceil(len(train_samples) / config.batch_size)
    warmup_steps = config.warmup_epochs * steps_per_epoch
    total_steps = config.max_epochs * steps_per_epoch

    val_batches = make_batches(val_samples, config.batch_size)
    history = TrainHistory(stage=config.stage)
    history.initial_val_total = evaluate(model, val_batches, objective).total_loss

    stopper = EarlyStopper(config.patience)
    best_state = _snapshot(model)
    global_step = 0
    warned_singleton = False
    warned_degenerate = False

    def _restore(state):
        model.load_state_dict(state)

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(
            train_samples,
            config.batch_size,
            shuffle_seed=derived_seed(seed, config.stage.value, epoch),
        )
        model.train()
        epoch_sums = {s.name: 0.0 for s in model.task_set.tasks}
        epoch_total = 0.0
        epoch_weight = 0.0
        last_lr = config.lr
        for batch in batches:
            if batch.size < 2:
                if not warned_singleton:
                    logger.warning(
                        "skipping singleton batch(es): per-batch CCC needs >= 2 samples"
                    )
                    warned_singleton = True
                continue
            if not heads_only:
                last_lr = lr_schedule(global_step, warmup_steps, total_steps, config.lr_max)
                for group in optimizer.param_groups:
                    group["lr"] = last_lr
            outputs = model.forward_batch(batch)
            try:
                losses = objective.task_losses(outputs, batch)
                total = objective.total(losses)
            except DegenerateDataError as exc:
                # e.g. a tiny batch where no country repeats, so every Culture
                # dimension lacks the two rows a per-batch CCC needs
                if not warned_degenerate:
                    logger.warning("skipping batch with a degenerate task loss: %s", exc)
                    warned_degenerate = True
                continue
            except DivergedError:
                _restore(best_state)
                raise
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(trainable, config.grad_clip)
            optimizer.step()
            global_step += 1
            for name, value in losses.items():
                epoch_sums[name] += float(value.detach()) * batch.size
            epoch_total += float(total.detach()) * batch.size
            epoch_weight += batch.size

        if epoch_weight == 0:
            raise ConfigError(
                "every training batch was skipped; use batch_size >= 2 or more samples"
            )
        report = evaluate(model, val_batches, objective)
        if not math.isfinite(report.total_loss):
            _restore(best_state)
            raise DivergedError(f"validation loss became non-finite at epoch {epoch}")
        record = EpochRecord(
            epoch=epoch,
            train_losses={k: v / epoch_weight for k, v in epoch_sums.items()},
            train_total=epoch_total / epoch_weight,
            val_losses=dict(report.task_losses),
            val_total=report.total_loss,
            val_metrics=dict(report.metrics),
            task_weights=objective.uncertainty.effective_weights(),
            lr=last_lr,
            wall_time=time.perf_counter() - t0,
        )
        history.records.append(record)
        if stopper.update(epoch, report.total_loss):
            best_state = _snapshot(model)
        if stopper.should_stop:
            history.stopped_early = True
            break

    _restore(best_state)
    history.best_epoch = stopper.best_epoch
    history.best_val_total = stopper.best_value
    if heads_only:
        for p in model.backbone.parameters():
            p.requires_grad_(True)
    return history


def fit_two_stage(
    model: MultitaskModel,
    objective: MultitaskObjective,
    train_samples: Sequence[LabeledSample],
    val_samples: Sequence[LabeledSample],
    heads_config: StageConfig | None = None,
    finetune_config: StageConfig | None = None,
    seed: int = 0,
) -> tuple[TrainHistory, TrainHistory]:
    """Head warmup then full fine-tune; stage 2 starts from stage 1's best
    weights with a freshly initialized optimizer."""
    heads_config = heads_config or StageConfig(stage=Stage.HEADS_ONLY)
    finetune_config = finetune_config or StageConfig(stage=Stage.FINE_TUNE)
    if heads_config.stage is not Stage.HEADS_ONLY:
        raise ConfigError("heads_config must use Stage.HEADS_ONLY")
    if finetune_config.stage is not Stage.FINE_TUNE:
        raise ConfigError("finetune_config must use Stage.FINE_TUNE")
    hist1 = train_stage(model, objective, train_samples, val_samples, heads_config, seed=seed)
    hist2 = train_stage(
        model, objective, train_samples, val_samples, finetune_config, seed=derived_seed(seed, "stage2")
    )
    return hist1, hist2


_CHECKPOINT_VERSION = 1


def save_checkpoint(model: MultitaskModel, path) -> None:
    """Writes model config + weights; ``load_checkpoint`` restores them
    bit-identically on the same platform."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": _CHECKPOINT_VERSION,
        "fingerprint": model.fingerprint,
        "config": model.config_dict(),
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_fingerprint: str | None = None) -> MultitaskModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    for key in ("format_version", "fingerprint", "config", "state_dict"):
        if not isinstance(payload, dict) or key not in payload:
            raise CheckpointError(f"checkpoint {path} is missing field {key!r}")
    if payload["format_version"] != _CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload['format_version']!r}"
        )
    model = MultitaskModel.from_config_dict(payload["config"])
    if model.fingerprint != payload["fingerprint"]:
        raise CheckpointError(
            "checkpoint fingerprint does not match its stored configuration"
        )
    if expected_fingerprint is not None and payload["fingerprint"] != expected_fingerprint:
        raise CheckpointError(
            f"checkpoint fingerprint {payload['fingerprint'][:12]}... does not match "
            f"expected {expected_fingerprint[:12]}..."
        )
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except Exception as exc:
        raise CheckpointError(f"checkpoint weights do not fit the model: {exc}") from exc
    return model
