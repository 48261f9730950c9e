"""Dataset IO: binary frame features, manifests, batching, synthetic data.

Frame features live in VBF1 files: 4 bytes ASCII magic ``VBF1``, two
little-endian uint32 (frame count T, embedding dim D), then ``T*D``
little-endian float32 values in row-major order. Labels live in a UTF-8 CSV
manifest with columns ``id,split,feature_file,country,type,valence,arousal,
high_0..high_9,culture_0..culture_39`` (the culture block is optional).

The synthetic generator exists so that training runs and the ablation grid
can execute at desk scale: every sample is driven by a 16-dim latent vector
that the mean-pooled features expose (up to noise), so all five targets are
recoverable and overfit runs are meaningful.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateDataError, FormatError, SchemaError

logger = logging.getLogger(__name__)

VBF1_MAGIC = b"VBF1"
_VBF1_HEADER = struct.Struct("<4sII")

LATENT_DIM = 16
_TYPE_COORDS = slice(0, 8)        # Type = argmax of these latent coords
_COUNTRY_COORDS = slice(8, 12)    # Country = argmax of these
_LOGIT_STD = 0.45                 # std of regression logits; keeps sigmoid near-linear
_CLASS_MARGIN = 1.2               # enforced top1-top2 latent gap for class targets


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """A T x D matrix of float32 frame embeddings, T >= 1."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise SchemaError(f"features must be 2-D (T, D), got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise SchemaError(f"features need T >= 1 and D >= 1, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise SchemaError("features contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(eq=False)
class LabeledSample:
    """Features plus per-task targets for one clip.

    ``country`` is kept as metadata independent of the active task set: the
    Culture loss mask and intra-batch sample weighting need it even when the
    Country prediction task is disabled.
    """

    id: str
    split: Split
    features: FeatureSequence
    targets: dict[str, np.ndarray | int]
    country: int
    feature_path: Path | None = None


@dataclass(eq=False)
class Batch:
    """Zero-padded batch with a validity mask.

    ``mask[b, t]`` is 1 exactly for ``t < T_b``; padded feature rows are all
    zero. Regression targets are stacked to (B, dim) float64, classification
    targets to (B,) int64.
    """

    features: np.ndarray                     # (B, T_max, D) float32
    mask: np.ndarray                         # (B, T_max) float64, 0/1
    targets: dict[str, np.ndarray]
    countries: np.ndarray                    # (B,) int64
    ids: tuple[str, ...]
    sample_weights: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.sample_weights.size == 0:
            self.sample_weights = np.ones(self.size, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the deterministic synthetic dataset."""

    n_samples: int
    dim: int = 16
    t_range: tuple[int, int] = (4, 12)
    seed: int = 0
    noise_level: float = 0.0
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.n_samples < 1:
            raise SchemaError("n_samples must be >= 1")
        if self.dim < 1:
            raise SchemaError("dim must be >= 1")
        lo, hi = self.t_range
        if lo < 1 or lo > hi:
            raise SchemaError(f"invalid t_range {self.t_range}")
        if self.noise_level < 0:
            raise SchemaError("noise_level must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise SchemaError("train_fraction must be in (0, 1)")


def write_features(seq: FeatureSequence | np.ndarray, path: str | Path) -> None:
    """Write a feature matrix as a VBF1 file (bit-exact round trip)."""
    if not isinstance(seq, FeatureSequence):
        seq = FeatureSequence(np.asarray(seq))
    payload = seq.frames.astype("<f4", copy=False).tobytes()
    header = _VBF1_HEADER.pack(VBF1_MAGIC, seq.T, seq.D)
    Path(path).write_bytes(header + payload)


def read_features(path: str | Path) -> FeatureSequence:
    """Read a VBF1 file back into a FeatureSequence."""
    raw = Path(path).read_bytes()
    if len(raw) < _VBF1_HEADER.size:
        raise FormatError(f"{path}: file too short for a VBF1 header ({len(raw)} bytes)")
    magic, t, d = _VBF1_HEADER.unpack_from(raw)
    if magic != VBF1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {VBF1_MAGIC!r}")
    if t == 0 or d == 0:
        raise FormatError(f"{path}: header declares empty matrix T={t}, D={d}")
    expected = _VBF1_HEADER.size + 4 * t * d
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for T={t}, D={d}, found {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4", offset=_VBF1_HEADER.size).reshape(t, d)
    return FeatureSequence(frames.copy())


_BASE_COLUMNS = (
    ["id", "split", "feature_file", "country", "type", "valence", "arousal"]
    + [f"high_{i}" for i in range(10)]
)
_CULTURE_COLUMNS = [f"culture_{i}" for i in range(40)]
_SPLIT_TOKENS = {s.value: s for s in Split}


def _parse_float(row: dict, col: str, row_no: int) -> float:
    try:
        return float(row[col])
    except (TypeError, ValueError):
        raise SchemaError(f"row {row_no}: malformed number in column {col!r}: {row[col]!r}") from None


def _parse_class(row: dict, col: str, row_no: int, upper: int) -> int:
    try:
        value = int(row[col])
    except (TypeError, ValueError):
        raise SchemaError(f"row {row_no}: malformed integer in column {col!r}: {row[col]!r}") from None
    if not 0 <= value < upper:
        raise SchemaError(f"row {row_no}: column {col!r} value {value} outside [0, {upper})")
    return value


def read_manifest(path: str | Path) -> list[LabeledSample]:
    """Read a manifest CSV and load the feature file of every row.

    Feature paths are resolved relative to the manifest's directory. The
    culture block is read when present (all 40 columns or none).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in _BASE_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: manifest is missing required columns: {missing}")
        culture_present = [c for c in _CULTURE_COLUMNS if c in header]
        if culture_present and len(culture_present) != len(_CULTURE_COLUMNS):
            absent = sorted(set(_CULTURE_COLUMNS) - set(culture_present))
            raise SchemaError(f"{path}: incomplete culture block, missing {absent[:3]}...")
        has_culture = bool(culture_present)

        samples: list[LabeledSample] = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=2):
            sample_id = (row.get("id") or "").strip()
            if not sample_id:
                raise SchemaError(f"row {row_no}: empty id")
            if sample_id in seen:
                raise SchemaError(f"row {row_no}: duplicate id {sample_id!r}")
            seen.add(sample_id)

            split_token = (row.get("split") or "").strip()
            if split_token not in _SPLIT_TOKENS:
                raise SchemaError(
                    f"row {row_no}: unknown split token {split_token!r} (expected train/val/test)"
                )

            country = _parse_class(row, "country", row_no, 4)
            type_idx = _parse_class(row, "type", row_no, 8)
            two = np.array(
                [_parse_float(row, "valence", row_no), _parse_float(row, "arousal", row_no)]
            )
            high = np.array([_parse_float(row, f"high_{i}", row_no) for i in range(10)])

            targets: dict[str, np.ndarray | int] = {
                "High": high,
                "Two": two,
                "Type": type_idx,
                "Country": country,
            }
            if has_culture:
                targets["Culture"] = np.array(
                    [_parse_float(row, f"culture_{i}", row_no) for i in range(40)]
                )

            feature_path = path.parent / row["feature_file"]
            try:
                features = read_features(feature_path)
            except (OSError, FormatError) as exc:
                raise SchemaError(f"row {row_no}: cannot read feature file {feature_path}: {exc}") from exc

            samples.append(
                LabeledSample(
                    id=sample_id,
                    split=_SPLIT_TOKENS[split_token],
                    features=features,
                    targets=targets,
                    country=country,
                    feature_path=feature_path,
                )
            )
    return samples


def write_dataset(samples: Sequence[LabeledSample], out_dir: str | Path) -> Path:
    """Write samples as VBF1 files plus a manifest CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    feats_dir = out_dir / "feats"
    feats_dir.mkdir(parents=True, exist_ok=True)
    has_culture = all("Culture" in s.targets for s in samples)
    columns = _BASE_COLUMNS + (_CULTURE_COLUMNS if has_culture else [])
    manifest_path = out_dir / "manifest.csv"
    with manifest_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for s in samples:
            rel = Path("feats") / f"{s.id}.vbf1"
            write_features(s.features, out_dir / rel)
            two = np.asarray(s.targets["Two"], dtype=np.float64)
            high = np.asarray(s.targets["High"], dtype=np.float64)
            row = [
                s.id,
                s.split.value,
                rel.as_posix(),
                int(s.targets.get("Country", s.country)),
                int(s.targets["Type"]),
                f"{two[0]:.8f}",
                f"{two[1]:.8f}",
            ] + [f"{v:.8f}" for v in high]
            if has_culture:
                culture = np.asarray(s.targets["Culture"], dtype=np.float64)
                row += [f"{v:.8f}" for v in culture]
            writer.writerow(row)
    return manifest_path


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _boost_margin(coords: np.ndarray, margin: float) -> None:
    """Raise the winning coordinate until top1 - top2 >= margin (in place)."""
    order = np.argsort(coords)
    gap = coords[order[-1]] - coords[order[-2]]
    if gap < margin:
        coords[order[-1]] += margin - gap


def _stratified_split(countries: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean train mask, stratified by country, with exactly floor(frac*N) train rows."""
    n = len(countries)
    target_train = int(np.floor(fraction * n))
    train_mask = np.zeros(n, dtype=bool)
    groups = []
    for c in np.unique(countries):
        idx = np.flatnonzero(countries == c)
        idx = rng.permutation(idx)
        quota = fraction * len(idx)
        base = int(np.floor(quota))
        groups.append((quota - base, idx, base))
    taken = 0
    for _, idx, base in groups:
        train_mask[idx[:base]] = True
        taken += base
    # Largest remainders fill up to the exact total.
    for _, idx, base in sorted(groups, key=lambda g: -g[0]):
        if taken >= target_train:
            break
        if base < len(idx):
            train_mask[idx[base]] = True
            taken += 1
    return train_mask


def generate_synthetic(spec: SynthSpec) -> list[LabeledSample]:
    """Deterministic synthetic dataset driven by a 16-dim latent per sample.

    Frames broadcast ``W_f @ z`` plus per-frame noise, regression targets are
    sigmoid-squashed linear maps of ``z`` and classification targets are the
    argmax of (margin-boosted) latent coordinate blocks, so mean-pooled
    features predict every target up to noise.
    """
    rng = np.random.default_rng(spec.seed)

    # Fixed maps, drawn once per dataset.
    w_f = rng.standard_normal((spec.dim, LATENT_DIM))
    if spec.dim >= LATENT_DIM:
        w_f, _ = np.linalg.qr(w_f)          # orthonormal columns, rank 16
    else:
        q, _ = np.linalg.qr(w_f.T)
        w_f = q.T
    scale = _LOGIT_STD / np.sqrt(LATENT_DIM)
    a_high = rng.standard_normal((10, LATENT_DIM)) * scale
    b_high = rng.standard_normal(10) * 0.2
    a_two = rng.standard_normal((2, LATENT_DIM)) * scale
    b_two = rng.standard_normal(2) * 0.2
    a_cul = rng.standard_normal((40, LATENT_DIM)) * scale
    b_cul = rng.standard_normal(40) * 0.2

    n = spec.n_samples
    latents = np.empty((n, LATENT_DIM))
    countries = np.empty(n, dtype=np.int64)
    types = np.empty(n, dtype=np.int64)
    lengths = rng.integers(spec.t_range[0], spec.t_range[1] + 1, size=n)
    for i in range(n):
        z = rng.standard_normal(LATENT_DIM)
        _boost_margin(z[_TYPE_COORDS], _CLASS_MARGIN)
        _boost_margin(z[_COUNTRY_COORDS], _CLASS_MARGIN)
        latents[i] = z
        types[i] = int(np.argmax(z[_TYPE_COORDS]))
        countries[i] = int(np.argmax(z[_COUNTRY_COORDS]))

    train_mask = _stratified_split(countries, spec.train_fraction, rng)

    samples: list[LabeledSample] = []
    for i in range(n):
        z = latents[i]
        base = w_f @ z
        frames = np.tile(base, (lengths[i], 1))
        if spec.noise_level > 0:
            frames = frames + spec.noise_level * rng.standard_normal(frames.shape)
        targets: dict[str, np.ndarray | int] = {
            "High": _sigmoid(a_high @ z + b_high),
            "Culture": _sigmoid(a_cul @ z + b_cul),
            "Two": _sigmoid(a_two @ z + b_two),
            "Type": int(types[i]),
            "Country": int(countries[i]),
        }
        samples.append(
            LabeledSample(
                id=f"synth-{i:05d}",
                split=Split.TRAIN if train_mask[i] else Split.VAL,
                features=FeatureSequence(frames.astype(np.float32)),
                targets=targets,
                country=int(countries[i]),
            )
        )
    return samples


def by_split(samples: Iterable[LabeledSample], split: Split) -> list[LabeledSample]:
    return [s for s in samples if s.split is split]


def make_batches(
    samples: Sequence[LabeledSample],
    batch_size: int,
    shuffle_seed: int | None = None,
) -> list[Batch]:
    """Chunk samples into zero-padded batches (padding per batch, not global).

    Order is deterministic: unchanged when ``shuffle_seed`` is None, else a
    seeded permutation. The last batch may be short.
    """
    if not samples:
        raise DegenerateDataError("cannot batch an empty sample list")
    if batch_size < 1:
        raise SchemaError("batch_size must be >= 1")
    dims = {s.features.D for s in samples}
    if len(dims) != 1:
        raise SchemaError(f"feature dimension mismatch across samples: {sorted(dims)}")
    dim = dims.pop()

    task_keys = set(samples[0].targets)
    for s in samples:
        if set(s.targets) != task_keys:
            raise SchemaError(f"sample {s.id!r} has target keys {sorted(s.targets)}, expected {sorted(task_keys)}")

    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(order)

    batches: list[Batch] = []
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        b = len(chunk)
        t_max = max(s.features.T for s in chunk)
        features = np.zeros((b, t_max, dim), dtype=np.float32)
        mask = np.zeros((b, t_max), dtype=np.float64)
        for j, s in enumerate(chunk):
            features[j, : s.features.T] = s.features.frames
            mask[j, : s.features.T] = 1.0
        targets: dict[str, np.ndarray] = {}
        for key in sorted(task_keys):
            first = chunk[0].targets[key]
            if np.isscalar(first) or isinstance(first, (int, np.integer)):
                targets[key] = np.array([int(s.targets[key]) for s in chunk], dtype=np.int64)
            else:
                targets[key] = np.stack(
                    [np.asarray(s.targets[key], dtype=np.float64) for s in chunk]
                )
        batches.append(
            Batch(
                features=features,
                mask=mask,
                targets=targets,
                countries=np.array([s.country for s in chunk], dtype=np.int64),
                ids=tuple(s.id for s in chunk),
            )
        )
    return batches
