"""Train a small depth model from scratch and compare it with a constant guess.

Renders 160 rooms at 64x128, trains for 30 epochs (under a
minute on one core) and evaluates on 16 unseen rooms.

    python demos/02_train_depth.py [workdir]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from hohonet.dataset import load_dataset, write_dataset
from hohonet.metrics import depth_metrics
from hohonet.train import RunConfig, evaluate, load_run, run_training

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="hoho_demo_"))
H, W = 64, 128
write_dataset(work / "train", seed=0, count=160, H=H, W=W, force=True)
write_dataset(work / "test", seed=1, count=16, H=H, W=W, force=True)
train, test = load_dataset(work / "train"), load_dataset(work / "test")

cfg = RunConfig.from_json(
    {
        "task": "depth",
        "model": {"task": "depth", "N": 1, "H_inp": H, "W_inp": W, "backbone_widths": [8, 16, 32, 64], "D": 32, "r": 16},
        "optim": {"lr": 1e-3, "total_epochs": 30, "batch": 4},
        "data": {"count": 160, "H": H, "W": W},
    }
)
ckpt = work / "depth.hoho"
run_training(cfg, train, ckpt, on_epoch=lambda e, l: print(f"epoch {e}: training L1 {l:.4f}"))

_, params, _ = load_run(ckpt)
model = evaluate(params, cfg.model, test, "depth")
guess = np.full_like(test.depth, train.depth.mean())
constant = depth_metrics(guess, test.depth, clip_m=10.0)
print(f"\nunseen rooms  MAE {model['mae']:.3f} m (constant mean depth: {constant['mae']:.3f} m)")
print(f"              delta1 {model['delta1']:.3f} (constant: {constant['delta1']:.3f})")
print(f"checkpoint and sidecars in {work}")
