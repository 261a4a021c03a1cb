"""Layers and optimizer used by the model.

Convolutions pad the width axis circularly (ERP images wrap around in
longitude) and the height axis with zeros. All layers operate on
:class:`~hohonet.tensor.Tensor` and are differentiable through the tape.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Rng
from .tensor import (
    Tensor,
    _check_precision,
    _timed,
    linear_map,
    make_result,
    matmul,
    reshape,
    softmax,
    transpose,
    add,
    scale,
)

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# ---------------------------------------------------------------- padding helpers


def _pad(x: np.ndarray, ph: int, pw: int, mode_w: str, fill: float = 0.0) -> np.ndarray:
    if pw:
        if mode_w == "circular":
            w = x.shape[-1]
            idx = np.arange(-pw, w + pw) % w
            x = x[..., idx]
        elif mode_w == "zero":
            x = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(pw, pw)], constant_values=fill)
        else:
            raise ValueError(f"unknown width pad mode {mode_w!r}")
    if ph:
        x = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(ph, ph), (0, 0)], constant_values=fill)
    return x


def _unpad(g: np.ndarray, ph: int, pw: int, mode_w: str, w: int) -> np.ndarray:
    if ph:
        g = g[..., ph : g.shape[-2] - ph, :]
    if not pw:
        return np.ascontiguousarray(g)
    if mode_w == "zero":
        return np.ascontiguousarray(g[..., pw : pw + w])
    if pw <= w:
        out = g[..., pw : pw + w].copy()
        out[..., w - pw :] += g[..., :pw]
        out[..., :pw] += g[..., pw + w :]
        return out
    out = np.zeros(g.shape[:-1] + (w,), dtype=g.dtype)
    np.add.at(np.moveaxis(out, -1, 0), np.arange(-pw, w + pw) % w, np.moveaxis(g, -1, 0))
    return out


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


# ---------------------------------------------------------------- convolution


@dataclass
class Conv2DParams:
    weight: Tensor
    bias: Optional[Tensor] = None
    stride: tuple = (1, 1)
    pad: tuple = (0, 0)
    groups: int = 1
    pad_mode_w: str = "circular"


@_timed("conv2d")
def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride=1,
    pad=0,
    groups: int = 1,
    pad_mode_w: str = "circular",
) -> Tensor:
    """2-D cross-correlation of ``x`` [B, C_in, H, W] with ``weight`` [C_out, C_in/groups, kh, kw]."""
    if isinstance(weight, Conv2DParams):
        p = weight
        return conv2d(x, p.weight, p.bias, p.stride, p.pad, p.groups, p.pad_mode_w)
    _check_precision(x, weight)
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    b, cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if cin % groups or cout % groups:
        raise ValueError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cg * groups != cin:
        raise ValueError(f"weight expects {cg * groups} input channels, got {cin}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    xp = _pad(x.data, ph, pw, pad_mode_w)
    hp, wp = xp.shape[-2:]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    wd = weight.data

    if kh == 1 and kw == 1 and groups == 1:
        cols = xp[:, :, ::sh, ::sw][:, :, :ho, :wo]
        cmat = np.ascontiguousarray(cols.transpose(0, 2, 3, 1)).reshape(-1, cin)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
        if groups == 1:
            cmat = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, cin * kh * kw)
        else:
            cols = win.reshape(b, groups, cg, ho, wo, kh, kw)

    if groups == 1:
        wmat = wd.reshape(cout, -1)
        out = (cmat @ wmat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    else:
        wg = wd.reshape(groups, cout // groups, cg, kh, kw)
        out = np.einsum("bgchwij,gocij->bgohw", cols, wg, optimize=True).reshape(b, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def bw(g):
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if groups == 1:
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
            gw = (g2.T @ cmat).reshape(wd.shape)
            dcols = g2 @ wmat
            if kh == 1 and kw == 1:
                dcols = dcols.reshape(b, ho, wo, cin).transpose(0, 3, 1, 2)
                dxp = np.zeros(xp.shape, dtype=x.dtype)
                dxp[:, :, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw] = dcols
                return _unpad(dxp, ph, pw, pad_mode_w, w), gw, gb
            dcols = dcols.reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = g.reshape(b, groups, cout // groups, ho, wo)
            gw = np.einsum("bgohw,bgchwij->gocij", gg, cols, optimize=True).reshape(wd.shape)
            dcols = np.einsum("bgohw,gocij->bgchwij", gg, wg, optimize=True).reshape(
                b, cin, ho, wo, kh, kw
            )
        dxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += dcols[
                    ..., i, j
                ]
        return _unpad(dxp, ph, pw, pad_mode_w, w), gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, lambda g: bw(g)[: len(inputs)])


@_timed("conv_squeeze_h")
def conv_squeeze_h(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Depthwise convolution whose kernel covers the full feature height.

    ``x`` is [B, C, h, W] and ``weight`` is [C, 1, h, 1]; the output is
    [B, C, 1, W]. No padding is ever applied, so the kernel height must equal h.
    """
    _check_precision(x, weight)
    b, c, h, w = x.shape
    if weight.shape != (c, 1, weight.shape[2], 1):
        raise ValueError(f"weight must be [C, 1, h, 1] with C={c}, got {weight.shape}")
    if weight.shape[2] != h:
        raise ValueError(f"kernel height {weight.shape[2]} != feature height {h}")
    wv = weight.data[:, 0, :, 0]
    out = np.einsum("bchw,ch->bcw", x.data, wv)[:, :, None, :]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bw(g):
        g0 = g[:, :, 0, :]
        gx = g0[:, :, None, :] * wv[None, :, :, None]
        gw = np.einsum("bcw,bchw->ch", g0, x.data)[:, None, :, None]
        return gx, gw, (g0.sum(axis=(0, 2)) if bias is not None else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out, dtype=x.dtype), inputs, lambda g: bw(g)[: len(inputs)])


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Width-preserving 1-D convolution with circular padding.

    ``x`` is [B, C_in, W]; ``weight`` is [C_out, C_in, k] with odd k.
    """
    b, c, w = x.shape
    k = weight.shape[-1]
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    x4 = reshape(x, (b, c, 1, w))
    w4 = reshape(weight, (weight.shape[0], weight.shape[1], 1, k))
    y = conv2d(x4, w4, bias, stride=1, pad=(0, k // 2))
    return reshape(y, (b, weight.shape[0], w))


@_timed("max_pool2d")
def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, pad: int = 1) -> Tensor:
    """Max pooling; width padding wraps, height padding never wins."""
    b, c, h, w = x.shape
    xp = _pad(x.data, pad, pad, "circular", fill=-np.inf)
    hp, wp = xp.shape[-2:]
    ho = (hp - kernel) // stride + 1
    wo = (wp - kernel) // stride + 1
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][
        :, :, :ho, :wo
    ]
    flat = win.reshape(b, c, ho, wo, kernel * kernel)
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kernel):
            for j in range(kernel):
                sel = idx == i * kernel + j
                dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                    g * sel
                )
        return (_unpad(dxp, pad, pad, "circular", w),)

    return make_result(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------- batch norm


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    mode: str = "eval"


@_timed("batch_norm")
def batch_norm(x: Tensor, s: BatchNormState) -> Tensor:
    """Normalize over every axis except the channel axis (axis 1).

    In train mode the batch statistics are used and the running statistics
    are updated in place (running variance with the unbiased estimate).
    """
    _check_precision(x, s.gamma, s.beta)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    gamma = s.gamma.data.reshape(bshape)
    beta = s.beta.data.reshape(bshape)
    xd = x.data
    if s.mode == "train":
        n = xd.size // xd.shape[1]
        if n <= 1:
            raise ValueError("train-mode batch norm needs more than one value per channel")
        mean = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + s.eps)
        xhat = (xd - mean) * inv
        m = s.momentum
        s.running_mean.data = ((1 - m) * s.running_mean.data + m * mean.reshape(-1)).astype(xd.dtype)
        s.running_var.data = ((1 - m) * s.running_var.data + m * var.reshape(-1) * n / (n - 1)).astype(
            xd.dtype
        )

        def bw(g):
            dxhat = g * gamma
            dx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    elif s.mode == "eval":
        inv = 1.0 / np.sqrt(s.running_var.data.reshape(bshape) + s.eps)
        xhat = (xd - s.running_mean.data.reshape(bshape)) * inv

        def bw(g):
            return g * gamma * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        raise ValueError(f"unknown batch norm mode {s.mode!r}")
    out = (gamma * xhat + beta).astype(xd.dtype)
    return make_result(out, (x, s.gamma, s.beta), bw)


# ---------------------------------------------------------------- resampling


def resize_matrix(n_in: int, n_out: int, wrap: bool) -> np.ndarray:
    """Half-pixel-centre linear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(int)
    frac = src - i0
    i1 = i0 + 1
    if wrap:
        i0 %= n_in
        i1 %= n_in
    else:
        i0 = np.clip(i0, 0, n_in - 1)
        i1 = np.clip(i1, 0, n_in - 1)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the last two axes; width wraps circularly, height clamps."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extents must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if out_w != w:
        x = linear_map(x, resize_matrix(w, out_w, wrap=True), axis=-1)
    if out_h != h:
        x = linear_map(x, resize_matrix(h, out_h, wrap=False), axis=-2)
    return x


def resize_width(x: Tensor, out_w: int) -> Tensor:
    """Circular linear resize of the last axis only."""
    if x.shape[-1] == out_w:
        return x
    return linear_map(x, resize_matrix(x.shape[-1], out_w, wrap=True), axis=-1)


# ---------------------------------------------------------------- attention


@dataclass
class MHSAParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int


def mhsa(x: Tensor, p: MHSAParams) -> Tensor:
    """Residual multi-head self-attention over the width positions of ``x`` [B, D, W].

    Projections act on the channel axis (``Q = Wq @ x``); no positional encoding.
    """
    b, d, w = x.shape
    if p.wq.shape != (d, d):
        raise ValueError(f"projection shape {p.wq.shape} does not match D={d}")
    if d % p.heads:
        raise ValueError(f"heads={p.heads} does not divide D={d}")
    dh = d // p.heads
    q = reshape(matmul(p.wq, x), (b, p.heads, dh, w))
    k = reshape(matmul(p.wk, x), (b, p.heads, dh, w))
    v = reshape(matmul(p.wv, x), (b, p.heads, dh, w))
    scores = scale(matmul(transpose(q, (0, 1, 3, 2)), k), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    o = reshape(matmul(v, transpose(attn, (0, 1, 3, 2))), (b, d, w))
    return add(x, matmul(p.wo, o))


# ---------------------------------------------------------------- init + optimizer


def uniform_init(rng: Rng, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / fan_in), drawn in row-major order."""
    a = math.sqrt(6.0 / fan_in)
    return rng.uniform_array(-a, a, shape).astype(dtype)


@dataclass
class AdamState:
    base_lr: float
    total_steps: int
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    poly_power: float = 0.9
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def poly_lr(s: AdamState, t: Optional[int] = None) -> float:
    """base_lr * (1 - t / total_steps) ** poly_power, clamped to 0 at the end."""
    t = s.t if t is None else t
    if t >= s.total_steps:
        return 0.0
    return s.base_lr * (1.0 - t / s.total_steps) ** s.poly_power


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], s: AdamState) -> float:
    """One bias-corrected Adam update in place; returns the learning rate used."""
    if s.t >= s.total_steps:
        warnings.warn(
            f"step {s.t} >= total_steps {s.total_steps}; learning rate clamped to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    lr = poly_lr(s)
    b1, b2 = s.betas
    t = s.t + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ValueError(f"missing gradient for {name}")
        m = s.m.get(name)
        v = s.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (b1 * m + (1 - b1) * g).astype(p.dtype)
        v = (b2 * v + (1 - b2) * g * g).astype(p.dtype)
        s.m[name], s.v[name] = m, v
        if lr > 0.0:
            step = lr * (m / c1) / (np.sqrt(v / c2) + s.eps)
            p.data = (p.data - step).astype(p.dtype)
    s.t = t
    return lr
