"""Run configuration, the training driver and checkpoint evaluation.

A run writes four files next to each other::

    ckpt.hoho            model parameters (incl. batch-norm running stats)
    ckpt.hoho.opt        Adam moments, same container format
    ckpt.hoho.json       run config plus optimizer step / epoch counters
    ckpt.hoho.log.json   per-epoch mean training loss

Everything is rewritten after each epoch, so ``resume=True`` continues from
the last finished epoch and reproduces the uninterrupted run exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import io, nn
from .dataset import NUM_CLASSES, Dataset, decode_layout, load_dataset
from .erp import CuboidScene, LayoutGT1D
from .metrics import DepthAccumulator, MetricsReport, SegAccumulator, layout_1d_to_corners, layout_iou
from .model import ModelConfig, forward, init_params, params_from_arrays, train_step, trainable
from .rng import Rng
from .tensor import Tensor

logger = logging.getLogger(__name__)


def _strict(cls, d: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown {where} keys: {sorted(extra)}")
    return cls(**d)


@dataclass
class OptimConfig:
    lr: float = 1e-4
    total_epochs: int = 30
    batch: int = 4
    poly_power: float = 0.9
    augment_deg: float = 0.0


@dataclass
class DataConfig:
    dir: Optional[str] = None
    count: int = 200
    H: int = 128
    W: int = 256
    seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    task: str = "depth"

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.task != self.model.task:
            raise ValueError(f"task {self.task!r} does not match model task {self.model.task!r}")
        if (self.data.H, self.data.W) != (self.model.H_inp, self.model.W_inp):
            raise ValueError(
                f"data resolution {self.data.H}x{self.data.W} differs from model input "
                f"{self.model.H_inp}x{self.model.W_inp}"
            )
        o = self.optim
        if o.lr < 0 or o.total_epochs < 1 or o.batch < 1 or o.augment_deg < 0:
            raise ValueError(f"invalid optimizer settings {o}")
        if o.augment_deg and self.task == "layout":
            raise ValueError("rotation augmentation is not supported for the layout task")
        if self.data.count < 1:
            raise ValueError("data.count must be >= 1")
        return self

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json(),
            "optim": asdict(self.optim),
            "data": asdict(self.data),
            "task": self.task,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        extra = set(d) - {"model", "optim", "data", "task"}
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        model = ModelConfig.from_json(d.get("model", {}))
        task = d.get("task", model.task)
        return cls(
            model=model,
            optim=_strict(OptimConfig, d.get("optim", {}), "optim"),
            data=_strict(DataConfig, d.get("data", {}), "data"),
            task=task,
        ).validate()


def sidecars(ckpt) -> dict:
    ckpt = Path(ckpt)
    return {
        "opt": ckpt.with_name(ckpt.name + ".opt"),
        "config": ckpt.with_name(ckpt.name + ".json"),
        "log": ckpt.with_name(ckpt.name + ".log.json"),
    }


def trivial_baseline_loss(task: str, targets: np.ndarray) -> float:
    """Training loss of the best input-independent predictor family we compare against.

    depth: constant mean depth (L1 over valid pixels); semantic: per-pixel class
    frequencies (cross-entropy = label entropy); layout: per-channel mean rows plus
    the mean corner probability.
    """
    t = np.asarray(targets, dtype=np.float64)
    if task == "depth":
        valid = t[t > 0]
        return float(np.abs(valid - valid.mean()).mean())
    if task == "semantic":
        freq = np.bincount(np.asarray(targets).ravel(), minlength=NUM_CLASSES) / t.size
        nz = freq[freq > 0]
        return float(-(nz * np.log(nz)).sum())
    if task == "layout":
        rows = t[:, :2]
        l1 = np.abs(rows - rows.mean(axis=(0, 2), keepdims=True)).mean()
        y = t[:, 2]
        p = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
        bce = -(y * math.log(p) + (1 - y) * math.log(1 - p)).mean()
        return float(l1 + bce)
    raise ValueError(f"unknown task {task!r}")


def _save_state(out: Path, cfg: RunConfig, params, adam: nn.AdamState, epoch: int, log: list) -> None:
    side = sidecars(out)
    io.save_checkpoint(out, params)
    moments = {}
    for k in trainable(params):
        if k in adam.m:
            moments["m/" + k] = adam.m[k]
            moments["v/" + k] = adam.v[k]
    io.save_checkpoint(side["opt"], moments)
    io.write_json(side["config"], {"run": cfg.to_json(), "step": adam.t, "epoch": epoch, "total_steps": adam.total_steps})
    io.write_json(side["log"], {"epochs": log})


def load_run(ckpt) -> tuple[RunConfig, dict, dict]:
    """Load (config, params, state sidecar) for a saved checkpoint."""
    side = sidecars(ckpt)
    if not side["config"].exists():
        raise FileNotFoundError(f"missing config sidecar {side['config']}")
    state = io.read_json(side["config"])
    cfg = RunConfig.from_json(state["run"])
    params = params_from_arrays(io.load_checkpoint(ckpt), cfg.model)
    return cfg, params, state


def run_training(
    cfg: RunConfig,
    data: Dataset | str | Path,
    out,
    resume: bool = False,
    max_epochs: Optional[int] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> list:
    """Train and checkpoint after every epoch. Returns the per-epoch log.

    ``max_epochs`` stops after that many epochs in this call (used to simulate
    an interruption); the optimizer schedule still spans ``total_epochs``.
    """
    cfg.validate()
    out = Path(out)
    if not isinstance(data, Dataset):
        data = load_dataset(data)
    if len(data) < cfg.data.count:
        raise ValueError(f"dataset has {len(data)} scenes, config asks for {cfg.data.count}")
    data = data.subset(cfg.data.count)
    if (data.H, data.W) != (cfg.model.H_inp, cfg.model.W_inp):
        raise ValueError(f"dataset is {data.H}x{data.W}, model expects {cfg.model.H_inp}x{cfg.model.W_inp}")
    targets = data.targets(cfg.task)
    n, bs = len(data), cfg.optim.batch
    steps_per_epoch = math.ceil(n / bs)
    adam = nn.AdamState(
        base_lr=cfg.optim.lr,
        total_steps=cfg.optim.total_epochs * steps_per_epoch,
        poly_power=cfg.optim.poly_power,
    )
    seed = cfg.data.seed
    if resume:
        loaded_cfg, params, state = load_run(out)
        if loaded_cfg.to_json() != cfg.to_json():
            raise ValueError("resume config differs from the checkpointed run")
        moments = io.load_checkpoint(sidecars(out)["opt"])
        for k, v in moments.items():
            kind, name = k.split("/", 1)
            (adam.m if kind == "m" else adam.v)[name] = v
        adam.t = int(state["step"])
        start = int(state["epoch"])
        log = io.read_json(sidecars(out)["log"])["epochs"]
    else:
        params = init_params(cfg.model, seed=seed)
        start, log = 0, []
    stop = cfg.optim.total_epochs if max_epochs is None else min(cfg.optim.total_epochs, start + max_epochs)
    for epoch in range(start, stop):
        order = Rng.for_purpose(seed, "shuffle", epoch).permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = np.sort(order[b * bs : (b + 1) * bs])
            batch = {"rgb": data.rgb[idx], "target": targets[idx]}
            aug = Rng.for_purpose(seed, "augment", adam.t)
            losses.append(train_step(params, batch, adam, cfg.model, cfg.optim.augment_deg, aug))
        mean = float(np.mean(losses))
        log.append({"epoch": epoch + 1, "loss": mean, "step": adam.t})
        logger.info("epoch %d/%d loss %.6f", epoch + 1, cfg.optim.total_epochs, mean)
        _save_state(out, cfg, params, adam, epoch + 1, log)
        if on_epoch:
            on_epoch(epoch + 1, mean)
    return log


def predict(params, cfg: ModelConfig, rgb: np.ndarray, batch: int = 4) -> np.ndarray:
    """Eval-mode network output for [N, 3, H, W] input, as float32 numpy."""
    outs = []
    for i in range(0, rgb.shape[0], batch):
        outs.append(forward(Tensor(rgb[i : i + batch]), params, cfg, train=False).data)
    return np.concatenate(outs)


def layout_scene_iou(pred_rows: np.ndarray, meta: dict, H: int, W: int) -> tuple[float, float, bool]:
    """IoU of one decoded layout prediction against the true room; flag=True on extraction failure."""
    scene = CuboidScene.from_json(meta)
    gt_corners = scene.corners_xy()
    gt_h = (0.0, float(scene.size[2]))
    try:
        corners, heights = layout_1d_to_corners(LayoutGT1D.from_array(pred_rows), H, W, float(scene.cam[2]))
        i2, i3 = layout_iou(corners, gt_corners, heights, gt_h)
    except ValueError:
        return 0.0, 0.0, True
    return i2, i3, False


def evaluate(params, cfg: ModelConfig, data: Dataset, task: str, clip_m: Optional[float] = 10.0) -> MetricsReport:
    if task != cfg.task:
        raise ValueError(f"checkpoint was trained for {cfg.task!r}, not {task!r}")
    if (data.H, data.W) != (cfg.H_inp, cfg.W_inp):
        raise ValueError(f"data is {data.H}x{data.W}, checkpoint expects {cfg.H_inp}x{cfg.W_inp}")
    pred = predict(params, cfg, data.rgb)
    if task == "depth":
        acc = DepthAccumulator(clip_m)
        for p, g in zip(pred, data.depth):
            acc.update(p, g)
        return acc.report()
    if task == "semantic":
        acc = SegAccumulator(NUM_CLASSES)
        for p, g in zip(pred, data.sem):
            acc.update(p.argmax(axis=0), g)
        return acc.report()
    rows = decode_layout(pred, data.H)
    i2s, i3s, failed = [], [], 0
    for r, meta in zip(rows, data.scenes):
        i2, i3, bad = layout_scene_iou(r, meta, data.H, data.W)
        i2s.append(i2)
        i3s.append(i3)
        failed += bad
    flags = [f"corner extraction failed on {failed} scene(s); scored as 0"] if failed else []
    return MetricsReport("layout", {"iou2d": float(np.mean(i2s)), "iou3d": float(np.mean(i3s))}, len(rows), flags)


def evaluate_checkpoint(ckpt, data_dir, task: str, clip_m: Optional[float] = 10.0) -> MetricsReport:
    cfg, params, _ = load_run(ckpt)
    return evaluate(params, cfg.model, load_dataset(data_dir), task, clip_m)
