"""Measurement drivers: column-compression error under camera rotation, and forward-pass timing."""
from __future__ import annotations

import math
import os
import platform
import time
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .basis import compress_columns
from .dataset import load_dataset
from .erp import CuboidScene, Rotation, render_depth, rotate_erp
from .model import ModelConfig, forward, init_params
from .tensor import Tensor, profile

PERCENTILES = (50, 90, 99)


def parse_rotations(spec: str) -> list[tuple[str, float]]:
    """``"pitch:10,20,roll:10"`` -> [("pitch", 10), ("pitch", 20), ("roll", 10)].

    A bare number continues the most recent axis. The aligned setting is always included.
    """
    out: list[tuple[str, float]] = [("none", 0.0)]
    axis = None
    for tok in filter(None, (t.strip() for t in spec.split(","))):
        if ":" in tok:
            axis, tok = tok.split(":", 1)
        if axis not in ("pitch", "roll", "yaw"):
            raise ValueError(f"rotation {tok!r}: axis must be pitch, roll or yaw")
        deg = float(tok)
        if not math.isfinite(deg):
            raise ValueError(f"rotation angle {tok!r} is not finite")
        out.append((axis, deg))
    return out


def rotated_depths(source, axis: str, deg: float, H: int, W: int) -> Iterable[np.ndarray]:
    """Depth maps seen by a camera rotated by ``deg`` about ``axis``.

    ``source`` is a list of CuboidScene (re-rendered exactly) or of H x W depth
    maps (resampled bilinearly).
    """
    rot = None if deg == 0 else Rotation(axis, math.radians(deg))
    for item in source:
        if isinstance(item, CuboidScene):
            yield render_depth(item, H, W, rot)[0]
        else:
            yield item if rot is None else rotate_erp(item, rot, "bilinear")


def compression_table(source, K: int, rotations, H: int, W: int) -> list[dict]:
    """Per rotation setting: mean, max and percentile absolute error of K-coefficient column compression."""
    if K > H:
        raise ValueError(f"K={K} exceeds image height {H}")
    rows = []
    for axis, deg in rotations:
        errs = np.concatenate([compress_columns(d, K)[1].ravel() for d in rotated_depths(source, axis, deg, H, W)])
        row = {"axis": axis, "deg": deg, "K": K, "mean": float(errs.mean()), "max": float(errs.max())}
        for p in PERCENTILES:
            row[f"p{p}"] = float(np.percentile(errs, p))
        rows.append(row)
    return rows


def analyze_dataset(data_dir, K: int, rot_spec: str, resample: bool = False) -> dict:
    """Compression table for a rendered dataset.

    By default each scene is re-rendered from its stored geometry under the rotated
    camera; ``resample=True`` rotates the stored depth rasters instead.
    """
    ds = load_dataset(data_dir)
    if resample:
        source = [d[0].astype(np.float64) for d in ds.depth]
    else:
        source = [CuboidScene.from_json(m) for m in ds.scenes]
    rows = compression_table(source, K, parse_rotations(rot_spec), ds.H, ds.W)
    return {
        "data": str(Path(data_dir)),
        "scenes": len(ds),
        "H": ds.H,
        "W": ds.W,
        "method": "resample" if resample else "render",
        "rows": rows,
    }


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get("HOHO_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def bench(cfg: ModelConfig, iters: int = 50, threads: Optional[int] = None, seed: int = 0) -> dict:
    """Time ``iters`` single-image forward passes in eval mode.

    The first pass is a warm-up and is excluded. Timing fields vary run to run;
    op counts do not.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    cfg.validate()
    threads = resolve_threads(threads)
    params = init_params(cfg, seed=seed)
    img = Tensor(np.random.default_rng(seed).random((1, 3, cfg.H_inp, cfg.W_inp), dtype=np.float32))
    with threadpool_limits(threads):
        out = forward(img, params, cfg, train=False)
        times = []
        with profile() as prof:
            for _ in range(iters):
                t0 = time.perf_counter()
                forward(img, params, cfg, train=False)
                times.append(time.perf_counter() - t0)
    t = np.asarray(times)
    ops = prof.as_dict()
    return {
        "iters": iters,
        "batch": 1,
        "H": cfg.H_inp,
        "W": cfg.W_inp,
        "task": cfg.task,
        "params": int(sum(p.data.size for p in params.values())),
        "output_shape": list(out.shape),
        "threads": threads,
        "mean_ms": float(t.mean() * 1e3),
        "std_ms": float(t.std() * 1e3),
        "fps": float(1.0 / t.mean()),
        "op_calls": {k: v["calls"] for k, v in ops.items()},
        "op_ms": {k: v["seconds"] * 1e3 / iters for k, v in ops.items()},
        "platform": f"{platform.python_implementation()} {platform.python_version()} numpy {np.__version__}",
    }
