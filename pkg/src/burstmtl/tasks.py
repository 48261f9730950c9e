"""Task schema: the five prediction tasks, routing presets, and label weighting.

The default schema covers five tasks on vocal-burst clips:

* ``High``    -- 10 emotion intensities, regression in [0, 1]
* ``Culture`` -- 40 country-conditioned intensities (10 emotions x 4 rater
  countries); per sample only the 10 dims of the sample's own country carry
  ground truth, the rest are masked out of the loss
* ``Two``     -- valence/arousal, regression in [0, 1]
* ``Type``    -- 8-way burst type classification
* ``Country`` -- 4-way country-of-origin classification

Routing presets decide which tasks are predicted first ("intermediate") and
fed, together with the pooled features, into the remaining ("final") heads:
``"2/3"`` routes Country and Type first, ``"1/4"`` only Country, ``"0/5"``
predicts everything simultaneously.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DegenerateDataError

logger = logging.getLogger(__name__)


class TaskKind(Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class LossKind(Enum):
    CCC = "ccc"
    MSE = "mse"
    MAE = "mae"
    WEIGHTED_CE = "weighted_ce"


class Activation(Enum):
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    LINEAR_CLAMP01 = "linear_clamp01"


class RoutingStage(Enum):
    INTERMEDIATE = "intermediate"
    FINAL = "final"


_REGRESSION_LOSSES = {LossKind.CCC, LossKind.MSE, LossKind.MAE}
_REGRESSION_ACTIVATIONS = {Activation.SIGMOID, Activation.LINEAR_CLAMP01}


@dataclass(frozen=True)
class TaskSpec:
    """Declarative description of one prediction task."""

    name: str
    kind: TaskKind
    dim: int
    loss: LossKind
    output_activation: Activation
    routing_stage: RoutingStage = RoutingStage.FINAL

    def __post_init__(self):
        if not self.name:
            raise ConfigError("task name must be non-empty")
        if self.dim < 1:
            raise ConfigError(f"task {self.name!r}: dim must be positive, got {self.dim}")
        if self.kind is TaskKind.CLASSIFICATION:
            if self.loss is not LossKind.WEIGHTED_CE:
                raise ConfigError(
                    f"task {self.name!r}: classification tasks use weighted cross-entropy, got {self.loss.value}"
                )
            if self.output_activation is not Activation.SOFTMAX:
                raise ConfigError(
                    f"task {self.name!r}: classification tasks use softmax, got {self.output_activation.value}"
                )
        else:
            if self.loss not in _REGRESSION_LOSSES:
                raise ConfigError(
                    f"task {self.name!r}: regression tasks use CCC/MSE/MAE, got {self.loss.value}"
                )
            if self.output_activation not in _REGRESSION_ACTIVATIONS:
                raise ConfigError(
                    f"task {self.name!r}: regression tasks use sigmoid or clamped-linear output, "
                    f"got {self.output_activation.value}"
                )


# Canonical column/report order for the five default tasks.
TASK_ORDER = ("High", "Culture", "Two", "Type", "Country")

# Routing preset -> task names predicted first. "0/5" means no intermediates.
ROUTING_PRESETS = {
    "2/3": ("Country", "Type"),
    "1/4": ("Country",),
    "0/5": (),
}

# When several tasks are intermediate, their predictions are concatenated to
# the pooled features in this order (coarsest conditioning signal first).
INTERMEDIATE_ORDER = ("Country", "Type")

VARIANT_FLAGS = ("-Two", "-Country", "MSE", "MAE", "-SM")

CULTURE_BLOCK = 10       # Culture dims per country
NUM_COUNTRIES = 4


def _default_specs() -> dict[str, TaskSpec]:
    return {
        "High": TaskSpec("High", TaskKind.REGRESSION, 10, LossKind.CCC, Activation.SIGMOID),
        "Culture": TaskSpec("Culture", TaskKind.REGRESSION, 40, LossKind.CCC, Activation.SIGMOID),
        "Two": TaskSpec("Two", TaskKind.REGRESSION, 2, LossKind.CCC, Activation.SIGMOID),
        "Type": TaskSpec("Type", TaskKind.CLASSIFICATION, 8, LossKind.WEIGHTED_CE, Activation.SOFTMAX),
        "Country": TaskSpec("Country", TaskKind.CLASSIFICATION, 4, LossKind.WEIGHTED_CE, Activation.SOFTMAX),
    }


@dataclass(frozen=True)
class TaskSet:
    """Ordered collection of active tasks plus the routing preset."""

    tasks: tuple[TaskSpec, ...]
    routing_preset: str

    def __post_init__(self):
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate task names: {names}")
        if self.routing_preset not in ROUTING_PRESETS:
            raise ConfigError(f"unknown routing preset {self.routing_preset!r}")
        expected = set(ROUTING_PRESETS[self.routing_preset]) & set(names)
        actual = {t.name for t in self.tasks if t.routing_stage is RoutingStage.INTERMEDIATE}
        if actual != expected:
            raise ConfigError(
                f"routing preset {self.routing_preset!r} expects intermediates {sorted(expected)}, "
                f"got {sorted(actual)}"
            )

    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tasks)

    def get(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(t.name == name for t in self.tasks)

    def intermediate_tasks(self) -> tuple[TaskSpec, ...]:
        """Intermediate tasks in the order their outputs are concatenated."""
        by_name = {t.name: t for t in self.tasks if t.routing_stage is RoutingStage.INTERMEDIATE}
        ordered = [by_name.pop(n) for n in INTERMEDIATE_ORDER if n in by_name]
        ordered.extend(by_name.values())
        return tuple(ordered)

    def final_tasks(self) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.routing_stage is RoutingStage.FINAL)

    def classification_tasks(self) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.kind is TaskKind.CLASSIFICATION)

    def regression_tasks(self) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.kind is TaskKind.REGRESSION)

    def describe(self) -> str:
        """Canonical one-line-per-task description (used for fingerprints)."""
        lines = [f"preset={self.routing_preset}"]
        for t in self.tasks:
            lines.append(
                f"{t.name}:{t.kind.value}:{t.dim}:{t.loss.value}:"
                f"{t.output_activation.value}:{t.routing_stage.value}"
            )
        return "\n".join(lines)


def build_task_set(preset_name: str, variant_flags: Iterable[str] = ()) -> TaskSet:
    """Build the default five-task set, adjusted by routing preset and flags.

    ``preset_name`` is one of ``"2/3"``, ``"1/4"``, ``"0/5"``. Flags:
    ``-Two``/``-Country`` drop a task, ``MSE``/``MAE`` replace the CCC loss on
    all regression tasks, ``-SM`` switches High and Culture to a clamped
    linear output instead of sigmoid.
    """
    if preset_name not in ROUTING_PRESETS:
        raise ConfigError(f"unknown routing preset {preset_name!r} (expected one of {sorted(ROUTING_PRESETS)})")
    flags = set(variant_flags)
    for flag in sorted(flags):
        if flag not in VARIANT_FLAGS:
            raise ConfigError(f"unknown variant flag {flag!r} (expected subset of {list(VARIANT_FLAGS)})")
    if "MSE" in flags and "MAE" in flags:
        raise ConfigError("flags MSE and MAE are mutually exclusive")

    specs = _default_specs()
    intermediates = ROUTING_PRESETS[preset_name]

    for flag, victim in (("-Two", "Two"), ("-Country", "Country")):
        if flag in flags:
            if victim in intermediates:
                raise ConfigError(
                    f"flag {flag!r} removes {victim!r}, an intermediate task of preset {preset_name!r}"
                )
            del specs[victim]

    if "MSE" in flags or "MAE" in flags:
        new_loss = LossKind.MSE if "MSE" in flags else LossKind.MAE
        for name, spec in list(specs.items()):
            if spec.kind is TaskKind.REGRESSION:
                specs[name] = replace(spec, loss=new_loss)

    if "-SM" in flags:
        for name in ("High", "Culture"):
            if name in specs:
                specs[name] = replace(specs[name], output_activation=Activation.LINEAR_CLAMP01)

    for name in intermediates:
        specs[name] = replace(specs[name], routing_stage=RoutingStage.INTERMEDIATE)

    ordered = tuple(specs[name] for name in TASK_ORDER if name in specs)
    return TaskSet(tasks=ordered, routing_preset=preset_name)


@dataclass(frozen=True, eq=False)
class ClassWeights:
    """Per-class cross-entropy weights for one classification task."""

    task: str
    weights: np.ndarray


def compute_class_weights(class_counts: Sequence[int], task: str = "") -> ClassWeights:
    """Inverse-proportional class weights ``N / (K * n_c)``.

    ``N`` is the total count and ``K`` the number of classes that actually
    occur; empty classes get weight 0 (with a warning) and do not count
    toward ``K``. Balanced counts therefore yield unit weights exactly.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.ndim != 1:
        raise ConfigError("class counts must be a 1-D sequence")
    if np.any(counts < 0):
        raise ConfigError("class counts must be non-negative")
    total = int(counts.sum())
    if total == 0:
        raise DegenerateDataError(f"cannot compute class weights for task {task!r}: all class counts are zero")
    present = counts > 0
    k = int(present.sum())
    weights = np.zeros(len(counts), dtype=np.float64)
    weights[present] = total / (k * counts[present].astype(np.float64))
    if not present.all():
        missing = np.flatnonzero(~present).tolist()
        logger.warning("task %r: classes %s have no samples; their weight is 0", task, missing)
    return ClassWeights(task=task, weights=weights)


def validate_labels(sample_labels: Mapping[str, object], task_set: TaskSet) -> list[str]:
    """Check one sample's targets against a task set.

    Returns a list of human-readable violations; an empty list means the
    labels are valid. Targets for tasks outside ``task_set`` are ignored.
    """
    violations: list[str] = []
    for spec in task_set.tasks:
        if spec.name not in sample_labels:
            violations.append(f"{spec.name}: missing target")
            continue
        value = sample_labels[spec.name]
        if spec.kind is TaskKind.CLASSIFICATION:
            try:
                idx = int(value)  # type: ignore[arg-type]
            except (TypeError, ValueError):
                violations.append(f"{spec.name}: expected a class index, found {value!r}")
                continue
            if not 0 <= idx < spec.dim:
                violations.append(f"{spec.name}: class index {idx} out of range [0, {spec.dim})")
        else:
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != (spec.dim,):
                violations.append(f"{spec.name}: expected shape ({spec.dim},), found {arr.shape}")
                continue
            if not np.all(np.isfinite(arr)):
                violations.append(f"{spec.name}: target contains non-finite values")
            elif arr.min() < 0.0 or arr.max() > 1.0:
                violations.append(
                    f"{spec.name}: regression target outside [0, 1] "
                    f"(min {arr.min():.4g}, max {arr.max():.4g})"
                )
    return violations


def task_set_to_dict(task_set: TaskSet) -> dict:
    return {
        "routing_preset": task_set.routing_preset,
        "tasks": [
            {
                "name": t.name,
                "kind": t.kind.value,
                "dim": t.dim,
                "loss": t.loss.value,
                "output_activation": t.output_activation.value,
                "routing_stage": t.routing_stage.value,
            }
            for t in task_set.tasks
        ],
    }


def task_set_from_dict(d: dict) -> TaskSet:
    tasks = tuple(
        TaskSpec(
            name=t["name"],
            kind=TaskKind(t["kind"]),
            dim=int(t["dim"]),
            loss=LossKind(t["loss"]),
            output_activation=Activation(t["output_activation"]),
            routing_stage=RoutingStage(t["routing_stage"]),
        )
        for t in d["tasks"]
    )
    return TaskSet(tasks=tasks, routing_preset=d["routing_preset"])


def culture_dim_mask(countries: np.ndarray, dim: int = CULTURE_BLOCK * NUM_COUNTRIES) -> np.ndarray:
    """Per-sample mask selecting the Culture dims of each sample's country.

    Row ``b`` has ones exactly on dims ``[10*c_b, 10*c_b + 10)``.
    """
    countries = np.asarray(countries, dtype=np.int64)
    mask = np.zeros((len(countries), dim), dtype=np.float64)
    blocks = np.arange(dim) // CULTURE_BLOCK
    for b, c in enumerate(countries):
        mask[b, blocks == c] = 1.0
    return mask
