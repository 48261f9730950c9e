"""
Checkpoints and prediction
==========================

A checkpoint stores the model's structural fingerprint next to its
weights, so loading into the wrong architecture fails loudly instead of
silently predicting garbage. Reloaded models are bit-identical: same
inputs, same float64 outputs, byte for byte.
"""

import tempfile
from pathlib import Path

import torch

from burstmtl.data import make_batches
from burstmtl.errors import CheckpointError
from burstmtl.harness import ExperimentConfig, run_experiment
from burstmtl.model import MultitaskModel
from burstmtl.tasks import build_task_set
from burstmtl.trainer import load_checkpoint, save_checkpoint

out = Path(tempfile.mkdtemp(prefix="burstmtl-demo-"))

config = ExperimentConfig(
    seed=5,
    out_dir=str(out / "run"),
    data_n_samples=60,
    model_encoder_dim=24,
    model_head_hidden=48,
    s1_max_epochs=4,
    s2_max_epochs=2,
    s2_patience=1,
)
result = run_experiment(config, write_artifacts=False)

path = out / "model.pt"
save_checkpoint(result.model, path)
print(f"saved checkpoint: {path.stat().st_size / 1024:.0f} KiB")
print(f"fingerprint: {result.model.fingerprint[:16]}...")

restored = load_checkpoint(path, expected_fingerprint=result.model.fingerprint)

train, _ = config.load_samples()
probe = make_batches(train, 16)[0]
with torch.no_grad():
    original = result.model.forward_batch(probe)
    reloaded = restored.forward_batch(probe)

for name in original:
    same = original[name].numpy().tobytes() == reloaded[name].numpy().tobytes()
    print(f"  {name:8} predictions bit-identical: {same}")

# Loading into a different architecture is refused by fingerprint.
other = MultitaskModel(build_task_set("0/5"), in_dim=16, encoder_dim=24, head_hidden=48)
try:
    load_checkpoint(path, expected_fingerprint=other.fingerprint)
except CheckpointError as exc:
    print(f"\nwrong-architecture load refused:\n  {exc}")
