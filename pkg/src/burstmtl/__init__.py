"""Multitask vocal-burst affect toolkit.

Masked mean pooling over frame embeddings, per-task projection heads with
configurable intermediate-task routing, CCC-regression and class-weighted
classification losses combined through learned uncertainty weights, a
two-stage freeze/fine-tune trainer, and an ablation harness with report
tables.
"""

from .data import (
    Batch,
    FeatureSequence,
    LabeledSample,
    Split,
    SynthSpec,
    by_split,
    generate_synthetic,
    make_batches,
    read_features,
    read_manifest,
    write_dataset,
    write_features,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateDataError,
    DivergedError,
    FormatError,
    SchemaError,
    ToolkitError,
)
from .harness import (
    CHAIN_BLOCKS,
    PRESET_CONFIGS,
    PRESET_ORDER,
    ExperimentConfig,
    ExperimentResult,
    GridResult,
    GridRow,
    SampleWeighting,
    apply_overrides,
    compute_sample_weights,
    format_config,
    parse_config,
    parse_config_text,
    render_grid_csv,
    render_grid_markdown,
    run_experiment,
    run_grid,
    run_preset,
)
from .model import (
    IdentityBackbone,
    MultitaskModel,
    ProjectionHead,
    RoutingPlan,
    TinyEncoder,
    masked_mean_pool,
)
from .objectives import (
    MetricsReport,
    MultitaskObjective,
    UncertaintyParams,
    ccc,
    ccc_loss,
    ccc_multi,
    combine_mtl,
    mae_loss,
    mse_loss,
    uar,
    weighted_cross_entropy,
)
from .tasks import (
    ROUTING_PRESETS,
    TASK_ORDER,
    VARIANT_FLAGS,
    ClassWeights,
    LossKind,
    TaskKind,
    TaskSet,
    TaskSpec,
    build_task_set,
    compute_class_weights,
    culture_dim_mask,
    validate_labels,
)
from .trainer import (
    EarlyStopper,
    EpochRecord,
    Stage,
    StageConfig,
    TrainHistory,
    evaluate,
    fit_two_stage,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
    train_stage,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "CHAIN_BLOCKS",
    "CheckpointError",
    "ClassWeights",
    "ConfigError",
    "DegenerateDataError",
    "DivergedError",
    "EarlyStopper",
    "EpochRecord",
    "ExperimentConfig",
    "ExperimentResult",
    "FeatureSequence",
    "FormatError",
    "GridResult",
    "GridRow",
    "IdentityBackbone",
    "LabeledSample",
    "LossKind",
    "MetricsReport",
    "MultitaskModel",
    "MultitaskObjective",
    "PRESET_CONFIGS",
    "PRESET_ORDER",
    "ProjectionHead",
    "ROUTING_PRESETS",
    "RoutingPlan",
    "SampleWeighting",
    "SchemaError",
    "Split",
    "Stage",
    "StageConfig",
    "SynthSpec",
    "TASK_ORDER",
    "TaskKind",
    "TaskSet",
    "TaskSpec",
    "TinyEncoder",
    "ToolkitError",
    "TrainHistory",
    "UncertaintyParams",
    "VARIANT_FLAGS",
    "apply_overrides",
    "build_task_set",
    "by_split",
    "ccc",
    "ccc_loss",
    "ccc_multi",
    "combine_mtl",
    "compute_class_weights",
    "compute_sample_weights",
    "culture_dim_mask",
    "evaluate",
    "fit_two_stage",
    "format_config",
    "generate_synthetic",
    "load_checkpoint",
    "lr_schedule",
    "mae_loss",
    "make_batches",
    "masked_mean_pool",
    "mse_loss",
    "parse_config",
    "parse_config_text",
    "read_features",
    "read_manifest",
    "render_grid_csv",
    "render_grid_markdown",
    "run_experiment",
    "run_grid",
    "run_preset",
    "save_checkpoint",
    "train_stage",
    "uar",
    "validate_labels",
    "weighted_cross_entropy",
    "write_dataset",
    "write_features",
]
