"""Dense 360-degree panorama prediction through compact 1-D horizontal features.

A self-contained numpy implementation: a small reverse-mode tensor engine,
the network layers built on it, basis matrices for lifting per-column
coefficients to dense columns, equirectangular geometry with an analytic
cuboid-room renderer, evaluation metrics and the ``hohonet`` command line.
"""
from .basis import BasisMatrix, apply_basis, compress_columns, forward_dct, make_basis
from .erp import CuboidScene, LayoutGT1D, Rotation, render_cuboid, rotate_erp
from .metrics import MetricsReport, depth_metrics, layout_iou, seg_metrics
from .model import ModelConfig, forward, init_params
from .rng import Rng
from .tensor import Tape, Tensor, backward, gradcheck

__all__ = [
    "BasisMatrix",
    "CuboidScene",
    "LayoutGT1D",
    "MetricsReport",
    "ModelConfig",
    "Rng",
    "Rotation",
    "Tape",
    "Tensor",
    "apply_basis",
    "backward",
    "compress_columns",
    "depth_metrics",
    "forward",
    "forward_dct",
    "gradcheck",
    "init_params",
    "layout_iou",
    "make_basis",
    "render_cuboid",
    "rotate_erp",
    "seg_metrics",
]
__version__ = "0.1.0"
