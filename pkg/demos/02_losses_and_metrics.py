"""
Losses, metrics, and the uncertainty combination
================================================

The numbers below are small enough to verify by hand.  Concordance
correlation (CCC) rewards agreement in correlation, scale, and mean at
once; UAR averages per-class recall so a majority-class guesser scores
1/K; and the multitask total learns one log-variance scalar per task.
"""

import math

import numpy as np
import torch

from burstmtl.harness import SampleWeighting, compute_sample_weights
from burstmtl.objectives import UncertaintyParams, ccc, combine_mtl, uar, weighted_cross_entropy
from burstmtl.tasks import compute_class_weights

# --- CCC on a worked example -------------------------------------------------

pred = np.array([0.1, 0.5, 0.9])
target = np.array([0.0, 0.5, 1.0])
print(f"ccc({pred.tolist()}, {target.tolist()}) = {ccc(pred, target):.6f}")
print("  by hand: 2*cov/(var_p + var_t + (mean gap)^2) = 0.8/0.82 =",
      f"{0.8 / 0.82:.6f}")

# Perfect agreement is 1; a constant prediction is 0 by convention.
print(f"identical series      -> {ccc(target, target):.1f}")
print(f"constant prediction   -> {ccc(np.full(3, 0.5), target):.1f}")

# --- UAR ---------------------------------------------------------------------

targets = np.array([0, 0, 0, 0, 1, 1])
majority = np.zeros(6, dtype=int)
print(f"\nUAR of always-majority on {targets.tolist()}: "
      f"{uar(majority, targets, num_classes=2):.2f}  (recalls 1.0 and 0.0)")

# --- class and sample weights ------------------------------------------------

cw = compute_class_weights([10, 30, 60]).weights
print(f"\nclass weights for counts [10, 30, 60]: {np.round(cw, 4).tolist()}")
print("  formula N/(K*n_c): 100/(3*10), 100/(3*30), 100/(3*60)")

sw = compute_sample_weights([0, 0, 0, 1], SampleWeighting.INVERSE_COUNTRY)
print(f"sample weights for countries [0, 0, 0, 1]: {np.round(sw, 4).tolist()}"
      f"  (mean is exactly {sw.mean():.1f})")

# Weighted cross-entropy with uniform probabilities is ln K regardless
# of weights: every row contributes the same -log(1/K).
probs = torch.full((4, 4), 0.25, dtype=torch.float64)
y = torch.tensor([0, 1, 2, 3])
ce = weighted_cross_entropy(probs, y, torch.tensor([0.5, 2.0, 1.0, 3.0]))
print(f"\nuniform 4-class CE = {float(ce):.6f}  (ln 4 = {math.log(4):.6f})")

# --- uncertainty combination -------------------------------------------------

# One regression head, loss pinned at L. The total exp(-s)L + s is
# minimized at s* = ln L: cheap to confirm with a few optimizer steps.
params = UncertaintyParams(("OnlyTask",))
losses = {"OnlyTask": torch.tensor(3.0, dtype=torch.float64)}
with torch.no_grad():
    start = float(combine_mtl(losses, params))
print(f"\ncombined total at s=0 with L=3: {start:.4f}  (just L itself)")

opt = torch.optim.SGD(params.parameters(), lr=0.1)
for _ in range(400):
    opt.zero_grad()
    combine_mtl(losses, params).backward()
    opt.step()
s_final = float(params.s.detach()[0])
print(f"after optimization: s = {s_final:.4f}, ln(3) = {math.log(3):.4f}")
print(f"minimum value 1 + ln(3) = {1 + math.log(3):.4f}, "
      f"reached: {float(combine_mtl(losses, params).detach()):.4f}")
