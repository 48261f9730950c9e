"""
The ablation grid
=================

Each preset names one row of the experiment table: routing variants
(2/3, 1/4, 0/5), loss substitutions (MSE, MAE), task removals (-Two,
-Country), weighting changes (-CW, +SW), and the sigmoid swap (-SM).
A preset is a complete recipe — running "-SM" configures everything the
reference chain had accumulated by that row.

The full 10-row grid is what `burstmtl ablate` produces; here we run a
three-row slice at toy size so the demo finishes in seconds.
"""

import tempfile
from pathlib import Path

from burstmtl.harness import (
    PRESET_CONFIGS,
    PRESET_ORDER,
    ExperimentConfig,
    run_grid,
)

print("all table rows, in order:")
print(" ", ", ".join(PRESET_ORDER))

print("\nwhat two of them mean:")
for name in ("0/5", "-SM"):
    axes = PRESET_CONFIGS[name]
    print(f"  {name:4} -> {axes}")

base = ExperimentConfig(
    seed=0,
    out_dir=str(Path(tempfile.mkdtemp(prefix="burstmtl-demo-")) / "grid"),
    data_n_samples=40,
    model_encoder_dim=16,
    model_encoder_blocks=1,
    model_head_hidden=32,
    s1_max_epochs=6,
    s1_batch_size=16,
    s2_max_epochs=3,
    s2_batch_size=16,
)

grid = run_grid(["0/5", "-Two", "-Country"], base)
print("\n" + grid.markdown)

print("note the '--' cells: a removed task reports nothing, and the")
print("column layout never changes, so tables stay diffable across runs.")
print(f"\nper-preset artifacts under {grid.out_dir}")
