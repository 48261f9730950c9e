"""Metrics and losses: CCC, UAR, weighted cross-entropy, MSE/MAE, and the
learned-uncertainty multitask combination.

Metric functions (``ccc``, ``uar``) are plain numpy and operate on full-split
predictions. Loss functions are torch so gradients flow; they accept an
optional per-entry dimension mask (used by the Culture task, whose 40 dims
carry ground truth only for the sample's own country) and optional per-sample
weights (losses use weight-normalized population moments / means, which
reduce to the unweighted forms for unit weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch

from .errors import ConfigError, DegenerateDataError, DivergedError
from .tasks import TaskKind, TaskSet

_DENOM_FLOOR = 1e-12
_PROB_FLOOR = 1e-12


def ccc(pred, target) -> float:
    """Concordance correlation coefficient of two 1-D series.

    Uses population (divide-by-N) moments:
    ``2*cov / (var_x + var_y + (mean_x - mean_y)^2)``. Returns 0.0 when the
    denominator falls below 1e-12 (both series constant with equal means).
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateDataError(f"ccc expects matching 1-D series, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise DegenerateDataError(f"ccc needs at least 2 points, got {x.size}")
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom < _DENOM_FLOOR:
        return 0.0
    return float(2.0 * cov / denom)


def ccc_multi(preds: np.ndarray, targets: np.ndarray, dim_mask: np.ndarray | None = None) -> float:
    """Mean per-dimension CCC over a whole split.

    ``dim_mask`` selects which rows count for each dimension; dimensions with
    fewer than two selected rows are skipped.
    """
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if preds.shape != targets.shape:
        raise DegenerateDataError(f"shape mismatch {preds.shape} vs {targets.shape}")
    values = []
    for k in range(preds.shape[1]):
        if dim_mask is not None:
            rows = dim_mask[:, k] > 0
            if rows.sum() < 2:
                continue
            values.append(ccc(preds[rows, k], targets[rows, k]))
        else:
            values.append(ccc(preds[:, k], targets[:, k]))
    if not values:
        raise DegenerateDataError("all dimensions were skipped (fewer than 2 rows each)")
    return float(np.mean(values))


def uar(pred_classes, target_classes, num_classes: int) -> float:
    """Unweighted average recall: mean per-class recall over classes present
    in the targets; absent classes are excluded from the mean."""
    preds = np.asarray(pred_classes, dtype=np.int64)
    targets = np.asarray(target_classes, dtype=np.int64)
    if preds.shape != targets.shape or preds.ndim != 1:
        raise DegenerateDataError(f"uar expects matching 1-D index arrays, got {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise DegenerateDataError("uar needs at least one sample")
    for arr, name in ((preds, "predictions"), (targets, "targets")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DegenerateDataError(f"{name} contain indices outside [0, {num_classes})")
    recalls = []
    for c in range(num_classes):
        in_class = targets == c
        n_c = int(in_class.sum())
        if n_c == 0:
            continue
        recalls.append(float((preds[in_class] == c).sum()) / n_c)
    return float(np.mean(recalls))


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    if isinstance(x, torch.Tensor):
        return x.to(dtype=dtype)
    return torch.as_tensor(x, dtype=dtype)


def ccc_loss(
    pred: torch.Tensor,
    target,
    dim_mask=None,
    sample_weights=None,
) -> torch.Tensor:
    """``1 - mean_k CCC_k`` over the batch, per output dimension.

    CCC uses weight-normalized population moments restricted to the rows
    where ``dim_mask`` is 1. Dimensions with fewer than two unmasked rows
    are skipped; if every dimension is skipped the batch is degenerate.
    """
    pred = torch.as_tensor(pred)
    target = _as_tensor(target, pred)
    if pred.ndim == 1:
        pred = pred.unsqueeze(1)
        target = target.unsqueeze(1)
    if pred.shape != target.shape:
        raise DegenerateDataError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    b, _ = pred.shape
    if b < 2:
        raise DegenerateDataError(f"ccc_loss needs a batch of >= 2, got {b}")
    mask = torch.ones_like(target) if dim_mask is None else _as_tensor(dim_mask, pred)
    weights = torch.ones(b, dtype=pred.dtype) if sample_weights is None else _as_tensor(sample_weights, pred)
    wm = mask * weights.unsqueeze(1)

    counts = (mask > 0).sum(dim=0)
    total_w = wm.sum(dim=0).clamp_min(1e-30)
    mx = (wm * pred).sum(dim=0) / total_w
    my = (wm * target).sum(dim=0) / total_w
    dx = pred - mx
    dy = target - my
    vx = (wm * dx * dx).sum(dim=0) / total_w
    vy = (wm * dy * dy).sum(dim=0) / total_w
    cov = (wm * dx * dy).sum(dim=0) / total_w
    denom = vx + vy + (mx - my) ** 2
    ccc_k = torch.where(
        denom > _DENOM_FLOOR,
        2.0 * cov / denom.clamp_min(_DENOM_FLOOR),
        torch.zeros_like(denom),
    )
    active = counts >= 2
    if int(active.sum()) == 0:
        raise DegenerateDataError("ccc_loss: every dimension has fewer than 2 unmasked rows")
    return 1.0 - ccc_k[active].mean()


def weighted_cross_entropy(
    probs: torch.Tensor,
    targets,
    class_weights,
    sample_weights=None,
) -> torch.Tensor:
    """Class- and sample-weighted cross-entropy on probability rows.

    ``sum_b u_b * w_{y_b} * (-log p_b[y_b]) / sum_b u_b * w_{y_b}``, with
    probabilities floored at 1e-12 inside the log.
    """
    probs = torch.as_tensor(probs)
    targets = torch.as_tensor(targets, dtype=torch.long)
    b, k = probs.shape
    with torch.no_grad():
        row_sums = probs.sum(dim=1)
        if bool((row_sums - 1.0).abs().max() > 1e-6):
            raise DegenerateDataError("weighted_cross_entropy expects probability rows summing to 1")
    cw = _as_tensor(class_weights, probs)
    if cw.shape != (k,):
        raise DegenerateDataError(f"class weights must have shape ({k},), got {tuple(cw.shape)}")
    sw = torch.ones(b, dtype=probs.dtype) if sample_weights is None else _as_tensor(sample_weights, probs)
    w = cw[targets] * sw
    total = w.sum()
    if float(total) <= 0.0:
        raise DegenerateDataError("weighted_cross_entropy: total weight is zero")
    picked = probs.gather(1, targets.unsqueeze(1)).squeeze(1).clamp_min(_PROB_FLOOR)
    return (w * -torch.log(picked)).sum() / total


def _masked_mean_loss(pred, target, dim_mask, sample_weights, elementwise) -> torch.Tensor:
    pred = torch.as_tensor(pred)
    target = _as_tensor(target, pred)
    if pred.ndim == 1:
        pred = pred.unsqueeze(1)
        target = target.unsqueeze(1)
    if pred.shape != target.shape:
        raise DegenerateDataError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    mask = torch.ones_like(target) if dim_mask is None else _as_tensor(dim_mask, pred)
    if sample_weights is not None:
        mask = mask * _as_tensor(sample_weights, pred).unsqueeze(1)
    total = mask.sum()
    if float(total) <= 0.0:
        raise DegenerateDataError("loss mask/weights select nothing")
    return (mask * elementwise(pred - target)).sum() / total


def mse_loss(pred, target, dim_mask=None, sample_weights=None) -> torch.Tensor:
    """Masked, sample-weighted mean squared error."""
    return _masked_mean_loss(pred, target, dim_mask, sample_weights, lambda d: d * d)


def mae_loss(pred, target, dim_mask=None, sample_weights=None) -> torch.Tensor:
    """Masked, sample-weighted mean absolute error."""
    return _masked_mean_loss(pred, target, dim_mask, sample_weights, torch.abs)


class UncertaintyParams(torch.nn.Module):
    """One learnable log-variance scalar per task, initialized to 0.

    The effective weight of task ``i`` in the combined loss is ``exp(-s_i)``.
    ``variant`` selects the combination form: ``"simple"`` uses
    ``exp(-s)*L + s`` for every task; ``"half"`` uses the classic
    ``0.5*exp(-s)*L + 0.5*s`` for regression and ``exp(-s)*L + 0.5*s`` for
    classification (requires task kinds).
    """

    def __init__(
        self,
        task_names,
        kinds: Mapping[str, TaskKind] | None = None,
        variant: str = "simple",
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.task_names = tuple(task_names)
        if not self.task_names:
            raise ConfigError("uncertainty parameters need at least one task")
        if variant not in ("simple", "half"):
            raise ConfigError(f"unknown uncertainty variant {variant!r}")
        if variant == "half":
            if kinds is None or any(n not in kinds for n in self.task_names):
                raise ConfigError("the 'half' uncertainty variant needs a kind for every task")
        self.variant = variant
        self.kinds = dict(kinds) if kinds is not None else None
        self.s = torch.nn.Parameter(torch.zeros(len(self.task_names), dtype=dtype))

    @classmethod
    def for_task_set(cls, task_set: TaskSet, variant: str = "simple", dtype=torch.float64):
        return cls(
            task_set.names(),
            kinds={t.name: t.kind for t in task_set.tasks},
            variant=variant,
            dtype=dtype,
        )

    def index(self, name: str) -> int:
        return self.task_names.index(name)

    def effective_weights(self) -> dict[str, float]:
        w = torch.exp(-self.s.detach())
        return {name: float(w[i]) for i, name in enumerate(self.task_names)}


def combine_mtl(task_losses: Mapping[str, torch.Tensor | float], params: UncertaintyParams) -> torch.Tensor:
    """Combine per-task losses with learned uncertainty weights.

    Simple form: ``total = sum_i exp(-s_i) * L_i + s_i``; gradients flow into
    both the losses and the ``s_i``.
    """
    if set(task_losses) != set(params.task_names):
        raise ConfigError(
            f"task losses {sorted(task_losses)} do not match uncertainty tasks {sorted(params.task_names)}"
        )
    total = None
    for i, name in enumerate(params.task_names):
        loss = task_losses[name]
        loss_t = loss if isinstance(loss, torch.Tensor) else torch.as_tensor(float(loss), dtype=params.s.dtype)
        if not bool(torch.isfinite(loss_t.detach())):
            raise DivergedError(f"task {name!r} produced a non-finite loss")
        s_i = params.s[i]
        if params.variant == "half" and params.kinds[name] is TaskKind.REGRESSION:
            term = 0.5 * torch.exp(-s_i) * loss_t + 0.5 * s_i
        elif params.variant == "half":
            term = torch.exp(-s_i) * loss_t + 0.5 * s_i
        else:
            term = torch.exp(-s_i) * loss_t + s_i
        total = term if total is None else total + term
    return total


class MultitaskObjective:
    """Bundles everything needed to score model outputs against a batch.

    ``class_weights`` maps classification task names to per-class weight
    vectors (missing tasks fall back to unit weights). ``sample_weight_fn``
    maps a batch's country indices to per-sample weights; when absent the
    batch's own weights (default all ones) are used.
    """

    def __init__(
        self,
        task_set: TaskSet,
        uncertainty: UncertaintyParams,
        class_weights: Mapping[str, np.ndarray] | None = None,
        sample_weight_fn=None,
    ):
        if tuple(uncertainty.task_names) != task_set.names():
            raise ConfigError("uncertainty parameters do not cover the task set")
        self.task_set = task_set
        self.uncertainty = uncertainty
        self.class_weights = dict(class_weights or {})
        self.sample_weight_fn = sample_weight_fn

    def batch_sample_weights(self, batch) -> np.ndarray:
        if self.sample_weight_fn is not None:
            return np.asarray(self.sample_weight_fn(batch.countries), dtype=np.float64)
        return np.asarray(batch.sample_weights, dtype=np.float64)

    def task_losses(self, outputs: Mapping[str, torch.Tensor], batch) -> dict[str, torch.Tensor]:
        from .tasks import LossKind, culture_dim_mask

        weights = self.batch_sample_weights(batch)
        losses: dict[str, torch.Tensor] = {}
        for spec in self.task_set.tasks:
            if spec.name not in outputs:
                raise ConfigError(f"model outputs are missing task {spec.name!r}")
            if spec.name not in batch.targets:
                raise ConfigError(f"batch targets are missing task {spec.name!r}")
            pred = outputs[spec.name]
            target = batch.targets[spec.name]
            if spec.kind is TaskKind.CLASSIFICATION:
                cw = self.class_weights.get(spec.name)
                if cw is None:
                    cw = np.ones(spec.dim, dtype=np.float64)
                losses[spec.name] = weighted_cross_entropy(pred, target, cw, weights)
                continue
            dim_mask = culture_dim_mask(batch.countries) if spec.name == "Culture" else None
            if spec.loss is LossKind.CCC:
                losses[spec.name] = ccc_loss(pred, target, dim_mask, weights)
            elif spec.loss is LossKind.MSE:
                losses[spec.name] = mse_loss(pred, target, dim_mask, weights)
            else:
                losses[spec.name] = mae_loss(pred, target, dim_mask, weights)
        return losses

    def total(self, task_losses: Mapping[str, torch.Tensor]) -> torch.Tensor:
        return combine_mtl(task_losses, self.uncertainty)


@dataclass
class MetricsReport:
    """Per-task evaluation metrics plus losses.

    ``metrics`` maps task name to its headline score (CCC for regression,
    UAR for classification, recorded in ``metric_kinds``).
    """

    metrics: dict[str, float]
    metric_kinds: dict[str, str]
    task_losses: dict[str, float] = field(default_factory=dict)
    total_loss: float = float("nan")

    def to_text(self) -> str:
        lines = []
        for name, value in self.metrics.items():
            lines.append(f"{name}.{self.metric_kinds[name]} = {value:.6f}")
        for name, value in self.task_losses.items():
            lines.append(f"{name}.loss = {value:.6f}")
        lines.append(f"total.loss = {self.total_loss:.6f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "metrics": dict(self.metrics),
            "metric_kinds": dict(self.metric_kinds),
            "task_losses": dict(self.task_losses),
            "total_loss": self.total_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            metrics=dict(d["metrics"]),
            metric_kinds=dict(d["metric_kinds"]),
            task_losses=dict(d.get("task_losses", {})),
            total_loss=float(d.get("total_loss", float("nan"))),
        )
