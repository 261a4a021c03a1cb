"""Horizon-to-dense bases.

A basis matrix ``M`` (H x r) lifts r per-column coefficients to H rows,
``X = M @ x``. Two kinds are supported:

* ``idct`` -- truncated inverse DCT: column 0 is the constant 1/2 and column
  n >= 1 is ``cos(pi * n * (m + 1/2) / H)``.
* ``interp`` -- linear interpolation from r samples to H rows with
  half-pixel centres and clamped ends (the height convention of
  :func:`hohonet.nn.bilinear_resize`).

:func:`forward_dct` is the exact analysis counterpart of the ``idct`` basis.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, linear_map

KINDS = ("idct", "interp")


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    kind: str
    H: int
    r: int
    M: np.ndarray


def _idct_matrix(h: int, r: int) -> np.ndarray:
    m = np.arange(h)[:, None] + 0.5
    n = np.arange(r)[None, :]
    mat = np.cos(np.pi * n * m / h)
    mat[:, 0] = 0.5
    return mat


def _interp_matrix(h: int, r: int) -> np.ndarray:
    mat = np.zeros((h, r))
    for row in range(h):
        # position of output row centre in component coordinates
        src = (row + 0.5) * r / h - 0.5
        src = min(max(src, 0.0), r - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, r - 1)
        t = src - lo
        mat[row, lo] += 1.0 - t
        if t:
            mat[row, hi] += t
    return mat


@functools.lru_cache(maxsize=64)
def make_basis(kind: str, H: int, r: int) -> BasisMatrix:
    """Build (and cache) the H x r basis of the given kind."""
    if kind not in KINDS:
        raise ValueError(f"unknown basis kind {kind!r}; expected one of {KINDS}")
    if not 1 <= r <= H:
        raise ValueError(f"need 1 <= r <= H, got r={r}, H={H}")
    mat = _idct_matrix(H, r) if kind == "idct" else _interp_matrix(H, r)
    mat.setflags(write=False)
    return BasisMatrix(kind, H, r, mat)


def apply_basis(x, basis: BasisMatrix, axis: int = -1):
    """Lift coefficients along ``axis`` (extent r) to H values: ``X = M x``.

    Tensors go through the tape; plain arrays are computed in float64.
    """
    if isinstance(x, Tensor):
        if x.shape[axis] != basis.r:
            raise ValueError(f"coefficient extent {x.shape[axis]} != r={basis.r}")
        return linear_map(x, basis.M, axis=axis)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] != basis.r:
        raise ValueError(f"coefficient extent {x.shape[axis]} != r={basis.r}")
    return np.moveaxis(np.moveaxis(x, axis, -1) @ basis.M.T, -1, axis)


@functools.lru_cache(maxsize=64)
def _analysis_matrix(h: int, r: int) -> np.ndarray:
    m = np.arange(h)[None, :] + 0.5
    n = np.arange(r)[:, None]
    mat = (2.0 / h) * np.cos(np.pi * n * m / h)
    mat.setflags(write=False)
    return mat


def forward_dct(X, r: int, axis: int = -1):
    """DCT-II coefficients ``x_n = (2/H) sum_m X_m cos(pi n (m + 1/2) / H)``, n < r.

    Scaled so that ``apply_basis(forward_dct(X, H), make_basis('idct', H, H))``
    reproduces ``X``. The result keeps the input's float precision.
    """
    X = np.asarray(X)
    h = X.shape[axis]
    if not 1 <= r <= h:
        raise ValueError(f"need 1 <= r <= H, got r={r}, H={h}")
    dtype = X.dtype if X.dtype in (np.float32, np.float64) else np.float64
    mat = _analysis_matrix(h, r).astype(dtype)
    out = np.moveaxis(X, axis, -1).astype(dtype) @ mat.T
    return np.moveaxis(out, -1, axis)


def compress_columns(depth, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the K lowest DCT frequencies of every column of an H x W map.

    Returns the reconstruction and the per-pixel absolute error.
    """
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError(f"expected an H x W map, got shape {depth.shape}")
    h = depth.shape[0]
    if K > h:
        raise ValueError(f"K={K} exceeds column height {h}")
    coeffs = forward_dct(depth, K, axis=0)
    basis = make_basis("idct", h, K)
    recon = (basis.M.astype(coeffs.dtype) @ coeffs).astype(depth.dtype if depth.dtype.kind == "f" else np.float64)
    return recon, np.abs(depth - recon)
