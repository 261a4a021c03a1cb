"""On-disk synthetic datasets: one directory per scene plus ``manifest.json``.

Each ``scene_NNNN/`` holds ``rgb.f32r`` (3 x H x W stand-in input),
``depth.f32r`` (1 x H x W), ``sem.pgm`` (16-bit labels), ``layout.f32r``
(1 x 3 x W: ceiling row, floor row, corner probability) and ``scene.json``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io
from .erp import RGB_DESCRIPTION, CuboidScene, LayoutGT1D, SceneRanges, generate_dataset

NUM_CLASSES = 3


def scene_dirname(index: int) -> str:
    return f"scene_{index:04d}"


def write_dataset(out, seed: int, count: int, H: int, W: int, ranges: SceneRanges = SceneRanges(), force: bool = False):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists and is not empty (use --force)")
    samples = generate_dataset(seed, count, H, W, ranges)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for s in samples:
        d = out / scene_dirname(s.index)
        d.mkdir(exist_ok=True)
        io.write_f32r(d / "rgb.f32r", s.rgb)
        io.write_f32r(d / "depth.f32r", s.depth[None])
        io.write_pgm16(d / "sem.pgm", s.sem)
        io.write_f32r(d / "layout.f32r", s.layout.as_array()[None])
        io.write_json(
            d / "scene.json",
            {**s.scene.to_json(), "seed": seed, "index": s.index, "H": H, "W": W, "input_channels": RGB_DESCRIPTION},
        )
        names.append(d.name)
    io.write_json(
        out / "manifest.json",
        {"count": count, "seed": seed, "H": H, "W": W, "scenes": names, "ranges": asdict(ranges)},
    )
    return names


@dataclass
class Dataset:
    rgb: np.ndarray  # [N, 3, H, W]
    depth: np.ndarray  # [N, 1, H, W]
    sem: np.ndarray  # [N, H, W]
    layout: np.ndarray  # [N, 3, W] in row units
    scenes: list

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def H(self) -> int:
        return self.depth.shape[-2]

    @property
    def W(self) -> int:
        return self.depth.shape[-1]

    def targets(self, task: str) -> np.ndarray:
        if task == "depth":
            return self.depth
        if task == "semantic":
            return self.sem
        if task == "layout":
            return encode_layout(self.layout, self.H)
        raise ValueError(f"unknown task {task!r}")

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.rgb[:n], self.depth[:n], self.sem[:n], self.layout[:n], self.scenes[:n])


def encode_layout(layout_rows: np.ndarray, H: int) -> np.ndarray:
    """Boundary rows -> (v + 0.5) / H; corner probability unchanged."""
    out = np.array(layout_rows, dtype=np.float32, copy=True)
    out[..., :2, :] = (out[..., :2, :] + 0.5) / H
    return out


def decode_layout(pred: np.ndarray, H: int) -> np.ndarray:
    """Inverse of :func:`encode_layout` for raw network output (corner logits -> probability)."""
    out = np.array(pred, dtype=np.float64, copy=True)
    out[..., :2, :] = out[..., :2, :] * H - 0.5
    out[..., 2, :] = 1.0 / (1.0 + np.exp(-out[..., 2, :]))
    return out


def load_scene(d) -> tuple:
    d = Path(d)
    rgb = io.read_f32r(d / "rgb.f32r")
    depth = io.read_f32r(d / "depth.f32r")
    sem = io.read_pgm16(d / "sem.pgm")
    layout = io.read_f32r(d / "layout.f32r")[0]
    meta = io.read_json(d / "scene.json")
    return rgb, depth, sem, layout, meta


def load_dataset(root, limit: int | None = None) -> Dataset:
    root = Path(root)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"{root}: no manifest.json")
    names = io.read_json(manifest)["scenes"]
    if limit is not None:
        if limit > len(names):
            raise ValueError(f"{root} holds {len(names)} scenes, {limit} requested")
        names = names[:limit]
    parts = [load_scene(root / n) for n in names]
    return Dataset(
        np.stack([p[0] for p in parts]),
        np.stack([p[1] for p in parts]),
        np.stack([p[2] for p in parts]),
        np.stack([p[3] for p in parts]),
        [p[4] for p in parts],
    )


def scene_of(meta: dict) -> CuboidScene:
    return CuboidScene.from_json(meta)


def layout_of(row: np.ndarray) -> LayoutGT1D:
    return LayoutGT1D.from_array(row)
