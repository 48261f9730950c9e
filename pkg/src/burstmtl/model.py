"""The differentiable forward graph: backbone, masked pooling, task heads.

A batch flows backbone -> masked mean pool -> intermediate heads (on the
pooled vector) -> final heads (on the pooled vector concatenated with the
intermediate predictions). Intermediate predictions feed forward as
probability/activation vectors with gradients flowing through them unless
``detach_intermediate`` is set.

Everything runs in float64: desk-scale models are tiny and double precision
keeps finite-difference gradient checks and checkpoint round trips exact.
Initialization is seeded per component name, so declaring tasks in a
different order changes no task's parameters.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import Batch
from .errors import ConfigError, DegenerateDataError, SchemaError
from .objectives import UncertaintyParams
from .tasks import Activation, TaskSet, TaskSpec

DTYPE = torch.float64


def component_generator(seed: int, name: str) -> torch.Generator:
    """Torch RNG seeded by (seed, component name): order-independent init."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    gen = torch.Generator()
    gen.manual_seed(int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF)
    return gen


def init_affine(module: nn.Module, generator: torch.Generator) -> None:
    """Centered-uniform weights scaled by 1/sqrt(fan_in); zero biases."""
    weight = module.weight
    if weight.ndim == 2:                       # Linear: (out, in)
        fan_in = weight.shape[1]
    else:                                      # Conv1d: (out, in, kernel)
        fan_in = weight.shape[1] * weight.shape[2]
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
        if module.bias is not None:
            module.bias.zero_()


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    if isinstance(x, torch.Tensor):
        return x * 0.5 * (1.0 + torch.erf(x / math.sqrt(2.0)))
    return float(x) * 0.5 * (1.0 + math.erf(float(x) / math.sqrt(2.0)))


def clamp01(x: torch.Tensor) -> torch.Tensor:
    """Element-wise clamp to [0, 1]; gradient 1 inside, 0 outside."""
    return torch.clamp(x, 0.0, 1.0)


def masked_mean_pool(frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over valid positions: ``sum_t m[b,t] x[b,t,:] / sum_t m[b,t]``."""
    if frames.ndim != 3 or mask.ndim != 2 or frames.shape[:2] != mask.shape:
        raise SchemaError(f"pooling expects (B,T,D) frames and (B,T) mask, got {tuple(frames.shape)} / {tuple(mask.shape)}")
    counts = mask.sum(dim=1)
    if bool((counts < 1).any()):
        raise DegenerateDataError("pooling mask has an all-zero row")
    return (frames * mask.unsqueeze(-1)).sum(dim=1) / counts.unsqueeze(-1)


class IdentityBackbone(nn.Module):
    """Pass-through backbone: contextual frames are the input frames."""

    def __init__(self, in_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = in_dim

    def forward(self, frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return frames


class TinyEncoder(nn.Module):
    """Small trainable stand-in for a pretrained frame encoder.

    An input projection followed by residual temporal-convolution blocks
    (kernel 3, GELU, LayerNorm). Activations are re-zeroed at masked
    positions after every block, so outputs at valid positions do not depend
    on how much padding a batch carries.
    """

    def __init__(self, in_dim: int, model_dim: int = 64, blocks: int = 2, seed: int = 0):
        super().__init__()
        if model_dim < 1 or blocks < 1:
            raise ConfigError("TinyEncoder needs model_dim >= 1 and blocks >= 1")
        self.in_dim = in_dim
        self.out_dim = model_dim
        self.proj = nn.Linear(in_dim, model_dim, dtype=DTYPE)
        init_affine(self.proj, component_generator(seed, "backbone/proj"))
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        for i in range(blocks):
            conv = nn.Conv1d(model_dim, model_dim, kernel_size=3, padding=1, dtype=DTYPE)
            init_affine(conv, component_generator(seed, f"backbone/conv{i}"))
            self.convs.append(conv)
            self.norms.append(nn.LayerNorm(model_dim, dtype=DTYPE))

    def forward(self, frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        keep = mask.unsqueeze(-1)
        h = self.proj(frames) * keep
        for conv, norm in zip(self.convs, self.norms):
            c = conv(h.transpose(1, 2)).transpose(1, 2)
            h = norm(h + gelu(c)) * keep
        return h


class ProjectionHead(nn.Module):
    """Affine -> GELU -> affine -> task output activation."""

    def __init__(self, spec: TaskSpec, in_dim: int, hidden_dim: int = 256, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.in_dim = in_dim
        self.fc1 = nn.Linear(in_dim, hidden_dim, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden_dim, spec.dim, dtype=DTYPE)
        init_affine(self.fc1, component_generator(seed, f"head/{spec.name}/fc1"))
        init_affine(self.fc2, component_generator(seed, f"head/{spec.name}/fc2"))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise SchemaError(f"head {self.spec.name!r} expects width {self.in_dim}, got {x.shape[-1]}")
        a = self.fc2(gelu(self.fc1(x)))
        if self.spec.output_activation is Activation.SOFTMAX:
            return torch.softmax(a, dim=-1)
        if self.spec.output_activation is Activation.SIGMOID:
            return torch.sigmoid(a)
        return clamp01(a)


@dataclass(frozen=True)
class RoutingPlan:
    """Which tasks run on the pooled vector and which on the widened input."""

    intermediate: tuple[str, ...]
    final: tuple[str, ...]
    pooled_dim: int
    final_in_dim: int

    @classmethod
    def from_task_set(cls, task_set: TaskSet, pooled_dim: int) -> "RoutingPlan":
        inter = task_set.intermediate_tasks()
        final = task_set.final_tasks()
        return cls(
            intermediate=tuple(t.name for t in inter),
            final=tuple(t.name for t in final),
            pooled_dim=pooled_dim,
            final_in_dim=pooled_dim + sum(t.dim for t in inter),
        )


class MultitaskModel(nn.Module):
    """Backbone, pooling, routed projection heads, and uncertainty scalars.

    The configuration fingerprint hashes the task schema and all dimensions;
    checkpoints refuse to load into a differently configured model.
    """

    def __init__(
        self,
        task_set: TaskSet,
        in_dim: int,
        backbone: str = "tiny",
        encoder_dim: int = 64,
        encoder_blocks: int = 2,
        head_hidden: int = 256,
        detach_intermediate: bool = False,
        uncertainty_variant: str = "simple",
        seed: int = 0,
    ):
        super().__init__()
        self.task_set = task_set
        self.in_dim = in_dim
        self.backbone_kind = backbone
        self.encoder_dim = encoder_dim
        self.encoder_blocks = encoder_blocks
        self.head_hidden = head_hidden
        self.detach_intermediate = detach_intermediate
        self.seed = seed

        if backbone == "identity":
            self.backbone = IdentityBackbone(in_dim)
        elif backbone == "tiny":
            self.backbone = TinyEncoder(in_dim, model_dim=encoder_dim, blocks=encoder_blocks, seed=seed)
        else:
            raise ConfigError(f"unknown backbone kind {backbone!r} (expected 'identity' or 'tiny')")

        self.plan = RoutingPlan.from_task_set(task_set, self.backbone.out_dim)
        self.heads = nn.ModuleDict()
        for name in self.plan.intermediate:
            self.heads[name] = ProjectionHead(task_set.get(name), self.plan.pooled_dim, head_hidden, seed)
        for name in self.plan.final:
            self.heads[name] = ProjectionHead(task_set.get(name), self.plan.final_in_dim, head_hidden, seed)
        self.uncertainty = UncertaintyParams.for_task_set(task_set, variant=uncertainty_variant)

    @property
    def fingerprint(self) -> str:
        text = "\n".join(
            [
                self.task_set.describe(),
                f"in_dim={self.in_dim}",
                f"backbone={self.backbone_kind}",
                f"encoder_dim={self.encoder_dim}",
                f"encoder_blocks={self.encoder_blocks}",
                f"head_hidden={self.head_hidden}",
            ]
        )
        return hashlib.sha256(text.encode()).hexdigest()

    def config_dict(self) -> dict:
        from .tasks import task_set_to_dict

        return {
            "task_set": task_set_to_dict(self.task_set),
            "in_dim": self.in_dim,
            "backbone": self.backbone_kind,
            "encoder_dim": self.encoder_dim,
            "encoder_blocks": self.encoder_blocks,
            "head_hidden": self.head_hidden,
            "detach_intermediate": self.detach_intermediate,
            "uncertainty_variant": self.uncertainty.variant,
            "seed": self.seed,
        }

    @classmethod
    def from_config_dict(cls, cfg: dict) -> "MultitaskModel":
        from .tasks import task_set_from_dict

        return cls(
            task_set=task_set_from_dict(cfg["task_set"]),
            in_dim=cfg["in_dim"],
            backbone=cfg["backbone"],
            encoder_dim=cfg["encoder_dim"],
            encoder_blocks=cfg["encoder_blocks"],
            head_hidden=cfg["head_hidden"],
            detach_intermediate=cfg["detach_intermediate"],
            uncertainty_variant=cfg["uncertainty_variant"],
            seed=cfg["seed"],
        )

    def forward(self, frames: torch.Tensor, mask: torch.Tensor) -> dict[str, torch.Tensor]:
        if frames.shape[-1] != self.in_dim:
            raise SchemaError(f"model expects input dim {self.in_dim}, got {frames.shape[-1]}")
        h = self.backbone(frames, mask)
        pooled = masked_mean_pool(h, mask)
        outputs: dict[str, torch.Tensor] = {}
        fed_forward: list[torch.Tensor] = []
        for name in self.plan.intermediate:
            out = self.heads[name](pooled)
            outputs[name] = out
            fed_forward.append(out.detach() if self.detach_intermediate else out)
        final_in = torch.cat([pooled] + fed_forward, dim=1) if fed_forward else pooled
        for name in self.plan.final:
            outputs[name] = self.heads[name](final_in)
        return {name: outputs[name] for name in self.task_set.names()}

    def forward_batch(self, batch: Batch) -> dict[str, torch.Tensor]:
        frames = torch.as_tensor(np.asarray(batch.features), dtype=DTYPE)
        mask = torch.as_tensor(np.asarray(batch.mask), dtype=DTYPE)
        return self(frames, mask)

    def backbone_parameters(self):
        return list(self.backbone.parameters())

    def head_parameters(self):
        """Everything trained in the heads-only stage: heads plus uncertainty."""
        params = [p for h in self.heads.values() for p in h.parameters()]
        params.extend(self.uncertainty.parameters())
        return params
