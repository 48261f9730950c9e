"""
From wav files to toolkit features
==================================

The companion extractor (frontend/) turns a directory of 16 kHz wavs
into VBF1 feature files plus a manifest stub. This demo writes two tiny
wavs, runs the extractor CLI, and reads the result back with the same
reader the trainer uses. Build the extractor first:

    cd frontend && npm install && npm run build
"""

import subprocess
import sys
import tempfile
import wave
from pathlib import Path

import numpy as np

from burstmtl.data import read_features

CLI = Path(__file__).resolve().parents[1] / "frontend" / "dist" / "cli.js"
if not CLI.exists():
    sys.exit("extractor not built yet - run: cd frontend && npm install && npm run build")

root = Path(tempfile.mkdtemp(prefix="burstmtl-demo-"))
wav_dir = root / "wavs"
wav_dir.mkdir()

for name, seconds, freq in (("laugh", 1.0, 440.0), ("gasp", 0.6, 660.0)):
    t = np.arange(int(16000 * seconds)) / 16000
    signal = (0.4 * np.sin(2 * np.pi * freq * t) * 32767).astype("<i2")
    with wave.open(str(wav_dir / f"{name}.wav"), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(16000)
        fh.writeframes(signal.tobytes())
print(f"wrote 2 wavs under {wav_dir}")

feats = root / "feats"
manifest = root / "manifest.csv"
proc = subprocess.run(
    ["node", str(CLI), "extract", "--in", str(wav_dir), "--model", "base",
     "--out", str(feats), "--manifest", str(manifest)],
    capture_output=True, text=True, check=True,
)
print(proc.stdout.strip())

# The 20 ms hop gives ~50 frames per second: 49 for 1.0 s, 29 for 0.6 s.
for stem in ("laugh", "gasp"):
    seq = read_features(feats / f"{stem}.vbf1")
    print(f"  {stem}.vbf1: T={seq.T} frames, D={seq.D}")

print("\nmanifest stub (extend with labels/splits to feed the trainer):")
print(manifest.read_text().strip())
