"""
The command-line pipeline
=========================

The same workflow as demo 05, driven entirely through the CLI surface:
synth -> train -> eval -> infer -> count. Every command writes a run
manifest next to its outputs so the run can be reproduced exactly.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from drt.cli import main
from drt.imaging import save_image

root = Path(tempfile.mkdtemp(prefix="drt_demo_"))
print("working in", root)

# a handful of clean images
clean_dir = root / "clean"
clean_dir.mkdir()
rng = np.random.default_rng(0)
for i in range(4):
    yy, xx = np.mgrid[0:64, 0:64] / 64.0
    img = np.stack([0.5 + 0.3 * np.cos(2 * np.pi * (yy * f + xx)) for f in (1, 2, 3)])
    save_image(clean_dir / f"img{i}.png", np.clip(img + 0.05 * i, 0, 1).astype(np.float32))

config = root / "tiny.cfg"
config.write_text(
    "rtb_count = 1\nrecursions = 2\nstbs_per_block = 1\n"
    "embed_dim = 8\nheads = 2\nwindow_size = 7\n"
    "batch_size = 4\ncrop = 56\n"
)

def run(argv):
    print(f"\n$ drt {' '.join(argv)}")
    code = main(argv)
    assert code == 0, f"exit {code}"


run(["synth", "--clean-dir", str(clean_dir), "--out-dir", str(root / "data"), "--seed", "7"])
run(["eval", "--manifest", str(root / "data/pairs.tsv"), "--identity"])
run(["train", "--manifest", str(root / "data/pairs.tsv"), "--config", str(config),
     "--out", str(root / "run"), "--seed", "7", "--epochs", "3", "--lr", "1e-3"])
run(["eval", "--manifest", str(root / "data/pairs.tsv"),
     "--checkpoint", str(root / "run/best.ckpt")])
run(["infer", "--checkpoint", str(root / "run/best.ckpt"),
     "--input", str(next((root / "data").glob("*_rain.png"))),
     "--output", str(root / "restored.png")])
run(["count", "--input-shape", "3x336x336"])

manifest = json.loads((root / "run/run_manifest.json").read_text())
print("\nrun manifest keys:", sorted(manifest))
