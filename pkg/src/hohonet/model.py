"""The panorama network: backbone pyramid -> height compression -> 1-D features -> heads.

Parameters live in a flat ``ModelParams`` dict keyed by dotted paths such as
``backbone.stage2.block0.conv1.weight``. Batch-norm running statistics are
stored in the same dict (``*.running_mean`` / ``*.running_var``) but are not
trained.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import nn
from .basis import BasisMatrix, apply_basis, make_basis
from .erp import Rotation, rotate_erp
from .rng import Rng
from .tensor import (
    Tape,
    Tensor,
    absolute,
    add,
    log_softmax,
    mul,
    reduce,
    relu,
    reshape,
    scale,
    softplus,
    sub,
)

logger = logging.getLogger(__name__)

ModelParams = dict  # str -> Tensor

TASKS = ("depth", "semantic", "layout")
STATS_SUFFIXES = (".running_mean", ".running_var")


@dataclass
class ModelConfig:
    H_inp: int = 128
    W_inp: int = 256
    backbone_widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    D: int = 64
    heads: int = 4
    r: int = 32
    basis_kind: str = "idct"
    N: int = 1
    task: str = "depth"

    def __post_init__(self):
        self.backbone_widths = tuple(int(c) for c in self.backbone_widths)

    def validate(self) -> "ModelConfig":
        if self.H_inp % 32 or self.W_inp % 32 or self.H_inp < 32 or self.W_inp < 32:
            raise ValueError(f"input extents must be positive multiples of 32, got {self.H_inp}x{self.W_inp}")
        if len(self.backbone_widths) != 4 or any(c < 4 or c % 4 for c in self.backbone_widths):
            raise ValueError(f"need 4 backbone widths divisible by 4, got {self.backbone_widths}")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if self.D < 1 or self.heads < 1 or self.D % self.heads:
            raise ValueError(f"heads={self.heads} must divide D={self.D}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "depth" and self.N != 1:
            raise ValueError("depth task needs N=1")
        if self.task == "layout" and self.N != 3:
            raise ValueError("layout task needs N=3 (ceiling, floor, corner)")
        if self.task == "semantic" and self.N < 2:
            raise ValueError("semantic task needs N >= 2 classes")
        if self.task != "layout":
            if not 1 <= self.r <= self.H_inp:
                raise ValueError(f"need 1 <= r <= H_inp, got r={self.r}")
            if self.basis_kind not in ("idct", "interp"):
                raise ValueError(f"unknown basis kind {self.basis_kind!r}")
        return self

    @property
    def dense(self) -> bool:
        return self.task != "layout"

    @property
    def W1(self) -> int:
        return self.W_inp // 4

    @property
    def E(self) -> int:
        return self.N * self.r if self.dense else self.N

    def stage_shape(self, level: int) -> tuple[int, int, int]:
        """(C, H, W) of pyramid level 1..4."""
        return (
            self.backbone_widths[level - 1],
            self.H_inp // 2 ** (level + 1),
            self.W_inp // 2 ** (level + 1),
        )

    def basis(self) -> BasisMatrix:
        return make_basis(self.basis_kind, self.H_inp, self.r)

    def to_json(self) -> dict:
        d = asdict(self)
        d["backbone_widths"] = list(self.backbone_widths)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- parameters


class _Builder:
    def __init__(self, seed: int, dtype):
        self.seed = seed
        self.dtype = dtype
        self.params: ModelParams = {}

    def weight(self, name: str, shape, fan_in: int) -> None:
        rng = Rng.for_purpose(self.seed, "init:" + name)
        self.params[name] = Tensor(nn.uniform_init(rng, shape, fan_in, self.dtype), requires_grad=True)

    def const(self, name: str, shape, value: float, trainable: bool = True) -> None:
        self.params[name] = Tensor(np.full(shape, value, dtype=self.dtype), requires_grad=trainable)

    def conv(self, name: str, cout: int, cin: int, kh: int, kw: int, bias: bool = False) -> None:
        self.weight(name + ".weight", (cout, cin, kh, kw), cin * kh * kw)
        if bias:
            self.const(name + ".bias", (cout,), 0.0)

    def bn(self, name: str, c: int, gamma: float = 1.0) -> None:
        self.const(name + ".gamma", (c,), gamma)
        self.const(name + ".beta", (c,), 0.0)
        self.const(name + ".running_mean", (c,), 0.0, trainable=False)
        self.const(name + ".running_var", (c,), 1.0, trainable=False)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32, zero_init_residual: bool = False) -> ModelParams:
    """Fresh parameters: He-uniform weights, zero biases, unit BN scale."""
    cfg.validate()
    b = _Builder(seed, dtype)
    c1 = cfg.backbone_widths[0]
    b.conv("backbone.stem.conv", c1, 3, 7, 7)
    b.bn("backbone.stem.bn", c1)
    cin = c1
    for level in range(1, 5):
        cout = cfg.backbone_widths[level - 1]
        for k in range(cfg.blocks_per_stage):
            p = f"backbone.stage{level}.block{k}"
            b.conv(p + ".conv1", cout, cin, 3, 3)
            b.bn(p + ".bn1", cout)
            b.conv(p + ".conv2", cout, cout, 3, 3)
            b.bn(p + ".bn2", cout, gamma=0.0 if zero_init_residual else 1.0)
            if _needs_projection(level, k, cin, cout):
                b.conv(p + ".shortcut.conv", cout, cin, 1, 1)
                b.bn(p + ".shortcut.bn", cout)
            cin = cout
    for level in range(1, 5):
        c, h, _ = cfg.stage_shape(level)
        q = c // 4
        p = f"ehc{level}"
        b.conv(p + ".reduce.conv", q, c, 3, 3)
        b.bn(p + ".reduce.bn", q)
        b.conv(p + ".refine.conv", q, q, 3, 3)
        b.bn(p + ".refine.bn", q)
        b.weight(p + ".squeeze.weight", (q, 1, h, 1), h)
        b.bn(p + ".squeeze.bn", q)
        b.conv(p + ".proj", cfg.D, q, 1, 1, bias=True)
    for name in ("wq", "wk", "wv", "wo"):
        b.weight("mhsa." + name, (cfg.D, cfg.D), cfg.D)
    b.weight("head.conv1.weight", (cfg.D, cfg.D, 3), cfg.D * 3)
    b.bn("head.bn1", cfg.D)
    b.weight("head.conv2.weight", (cfg.D, cfg.D, 3), cfg.D * 3)
    b.bn("head.bn2", cfg.D)
    b.weight("head.conv3.weight", (cfg.E, cfg.D, 1), cfg.D)
    b.const("head.conv3.bias", (cfg.E,), 0.0)
    return b.params


def _needs_projection(level: int, k: int, cin: int, cout: int) -> bool:
    return k == 0 and (level > 1 or cin != cout)


def trainable(params: ModelParams) -> dict:
    return {k: v for k, v in params.items() if not k.endswith(STATS_SUFFIXES)}


def params_from_arrays(arrays: dict, cfg: ModelConfig) -> ModelParams:
    """Rebuild a ModelParams dict from loaded arrays, checking names and shapes."""
    ref = init_params(cfg, seed=0)
    if list(arrays) != list(ref):
        missing = sorted(set(ref) - set(arrays))
        extra = sorted(set(arrays) - set(ref))
        raise ValueError(f"checkpoint does not match config (missing {missing[:3]}, extra {extra[:3]})")
    out = {}
    for name, arr in arrays.items():
        if arr.shape != ref[name].shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != config shape {ref[name].shape}")
        out[name] = Tensor(arr.copy(), requires_grad=ref[name].requires_grad)
    return out


# ---------------------------------------------------------------- building blocks


def _bn(x: Tensor, params: ModelParams, name: str, train: bool) -> Tensor:
    s = nn.BatchNormState(
        params[name + ".gamma"],
        params[name + ".beta"],
        params[name + ".running_mean"],
        params[name + ".running_var"],
        mode="train" if train else "eval",
    )
    return nn.batch_norm(x, s)


def _conv_bn_relu(x, params, name, bn_name, train, stride=1, pad=1):
    y = nn.conv2d(x, params[name + ".weight"], None, stride=stride, pad=pad)
    return relu(_bn(y, params, bn_name, train))


def _basic_block(x: Tensor, params: ModelParams, p: str, stride: int, train: bool) -> Tensor:
    y = _conv_bn_relu(x, params, p + ".conv1", p + ".bn1", train, stride=stride)
    y = nn.conv2d(y, params[p + ".conv2.weight"], None, stride=1, pad=1)
    y = _bn(y, params, p + ".bn2", train)
    if p + ".shortcut.conv.weight" in params:
        sc = nn.conv2d(x, params[p + ".shortcut.conv.weight"], None, stride=stride, pad=0)
        sc = _bn(sc, params, p + ".shortcut.bn", train)
    else:
        sc = x
    return relu(add(y, sc))


def backbone_forward(img: Tensor, params: ModelParams, cfg: ModelConfig, train: bool = False) -> list[Tensor]:
    """Residual backbone returning the 4-level pyramid at strides 4, 8, 16, 32."""
    b, c, h, w = img.shape
    if c != 3 or h % 32 or w % 32:
        raise ValueError(f"expected [B, 3, H, W] with H, W divisible by 32, got {img.shape}")
    x = nn.conv2d(img, params["backbone.stem.conv.weight"], None, stride=2, pad=3)
    x = relu(_bn(x, params, "backbone.stem.bn", train))
    x = nn.max_pool2d(x, 3, 2, 1)
    pyramid = []
    for level in range(1, 5):
        for k in range(cfg.blocks_per_stage):
            stride = 2 if (level > 1 and k == 0) else 1
            x = _basic_block(x, params, f"backbone.stage{level}.block{k}", stride, train)
        pyramid.append(x)
    return pyramid


def ehc_block_forward(
    feat: Tensor, params: ModelParams, level: int, cfg: ModelConfig, train: bool = False
) -> Tensor:
    """Squeeze one pyramid level [B, C, h, w] into a [B, D, W1] horizontal feature."""
    p = f"ehc{level}"
    h = params[p + ".squeeze.weight"].shape[2]
    if feat.shape[2] != h:
        raise ValueError(f"level {level}: feature height {feat.shape[2]} != configured {h}")
    x = _conv_bn_relu(feat, params, p + ".reduce.conv", p + ".reduce.bn", train)
    x = nn.resize_width(x, cfg.W1)
    x = _conv_bn_relu(x, params, p + ".refine.conv", p + ".refine.bn", train)
    x = nn.conv_squeeze_h(x, params[p + ".squeeze.weight"])
    x = relu(_bn(x, params, p + ".squeeze.bn", train))
    x = nn.conv2d(x, params[p + ".proj.weight"], params[p + ".proj.bias"])
    b, d, _, w1 = x.shape
    return reshape(x, (b, d, w1))


def mhsa_params(params: ModelParams, cfg: ModelConfig) -> nn.MHSAParams:
    return nn.MHSAParams(params["mhsa.wq"], params["mhsa.wk"], params["mhsa.wv"], params["mhsa.wo"], cfg.heads)


def lhfeat_extract(
    pyramid: list[Tensor], params: ModelParams, cfg: ModelConfig, train: bool = False, refine: bool = True
) -> Tensor:
    """Sum of the four EHC outputs, refined by one residual MHSA pass: [B, D, W1]."""
    if len(pyramid) != 4:
        raise ValueError(f"expected 4 pyramid levels, got {len(pyramid)}")
    fused = None
    for level, feat in enumerate(pyramid, start=1):
        y = ehc_block_forward(feat, params, level, cfg, train)
        if fused is not None and y.shape != fused.shape:
            raise ValueError(f"EHC output {y.shape} does not match {fused.shape}")
        fused = y if fused is None else add(fused, y)
    if not refine:
        return fused
    return nn.mhsa(fused, mhsa_params(params, cfg))


def _head_trunk(lh: Tensor, params: ModelParams, cfg: ModelConfig, train: bool) -> Tensor:
    x = nn.resize_width(lh, cfg.W_inp)
    x = nn.conv1d(x, params["head.conv1.weight"])
    x = relu(_bn(x, params, "head.bn1", train))
    x = nn.conv1d(x, params["head.conv2.weight"])
    x = relu(_bn(x, params, "head.bn2", train))
    return nn.conv1d(x, params["head.conv3.weight"], params["head.conv3.bias"])


def head_1d(lh: Tensor, params: ModelParams, cfg: ModelConfig, train: bool = False) -> Tensor:
    """Per-column prediction [B, N, W_inp]."""
    return _head_trunk(lh, params, cfg, train)


def head_h2d(
    lh: Tensor, params: ModelParams, cfg: ModelConfig, basis: Optional[BasisMatrix] = None, train: bool = False
) -> Tensor:
    """Dense prediction [B, N, H_inp, W_inp]: E = N*r channels per column lifted by ``basis``."""
    basis = basis or cfg.basis()
    if basis.H != cfg.H_inp or basis.r != cfg.r:
        raise ValueError(f"basis ({basis.H} x {basis.r}) does not match config ({cfg.H_inp} x {cfg.r})")
    coeffs = _head_trunk(lh, params, cfg, train)
    b = coeffs.shape[0]
    coeffs = reshape(coeffs, (b, cfg.N, cfg.r, cfg.W_inp))
    return apply_basis(coeffs, basis, axis=2)


def forward(img: Tensor, params: ModelParams, cfg: ModelConfig, train: bool = False) -> Tensor:
    """Task output: depth [B,1,H,W] (softplus), semantic logits [B,N,H,W], or layout [B,3,W]."""
    lh = lhfeat_extract(backbone_forward(img, params, cfg, train), params, cfg, train)
    if cfg.task == "layout":
        return head_1d(lh, params, cfg, train)
    out = head_h2d(lh, params, cfg, train=train)
    return softplus(out) if cfg.task == "depth" else out


# ---------------------------------------------------------------- losses


def loss(task: str, pred: Tensor, gt: np.ndarray) -> Tensor:
    """Training objective.

    depth: mean |pred - gt| over pixels with gt > 0.
    semantic: mean cross-entropy; ``gt`` holds integer labels [B, H, W].
    layout: L1 on channels 0-1 (boundary rows / H) plus binary cross-entropy
    with logits on channel 2.
    """
    gt = np.asarray(gt)
    if task == "depth":
        if pred.shape != gt.shape:
            raise ValueError(f"pred {pred.shape} vs gt {gt.shape}")
        mask = gt > 0
        n = int(mask.sum())
        if n == 0:
            raise ValueError("depth loss: no valid pixels (gt > 0)")
        diff = absolute(sub(pred, Tensor(np.where(mask, gt, 0), dtype=pred.dtype)))
        return scale(reduce("sum", mul(diff, Tensor(mask, dtype=pred.dtype))), 1.0 / n)
    if task == "semantic":
        b, n_cls, h, w = pred.shape
        if gt.shape != (b, h, w):
            raise ValueError(f"labels {gt.shape} do not match logits {pred.shape}")
        onehot = np.zeros(pred.shape, dtype=pred.dtype)
        np.put_along_axis(onehot, gt[:, None].astype(np.int64), 1.0, axis=1)
        lsm = log_softmax(pred, axis=1)
        return scale(reduce("sum", mul(lsm, Tensor(onehot))), -1.0 / (b * h * w))
    if task == "layout":
        if pred.shape != gt.shape or pred.shape[1] != 3:
            raise ValueError(f"layout pred {pred.shape} vs gt {gt.shape}")
        bnd = pred[:, :2]
        l1 = reduce("mean", absolute(sub(bnd, Tensor(gt[:, :2], dtype=pred.dtype))))
        z = pred[:, 2]
        y = Tensor(gt[:, 2], dtype=pred.dtype)
        bce = reduce("mean", sub(softplus(z), mul(y, z)))
        return add(l1, bce)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------- training


def augment_batch(batch: dict, rng: Rng, max_deg: float, task: str) -> dict:
    """Random pitch or roll ~ U(-max_deg, max_deg) per sample, applied to input and targets.

    Per sample: one draw picks the axis (pitch if < 0.5), one draw the angle.
    """
    if max_deg == 0:
        return batch
    if task == "layout":
        raise ValueError("rotation augmentation is undefined for the 1-D layout targets")
    rgb = batch["rgb"].copy()
    target = batch["target"].copy()
    for i in range(rgb.shape[0]):
        axis = "pitch" if rng.random() < 0.5 else "roll"
        angle = math.radians(rng.uniform(-max_deg, max_deg))
        rot = Rotation(axis, angle)
        rgb[i] = rotate_erp(rgb[i], rot, "bilinear")
        target[i] = rotate_erp(target[i], rot, "nearest")
    return {**batch, "rgb": rgb, "target": target}


def train_step(
    params: ModelParams,
    batch: dict,
    adam: nn.AdamState,
    cfg: ModelConfig,
    augment_deg: float = 0.0,
    rng: Optional[Rng] = None,
) -> float:
    """Forward, loss, backward and one Adam update. Returns the loss value."""
    if augment_deg:
        batch = augment_batch(batch, rng, augment_deg, cfg.task)
    dtype = next(iter(params.values())).dtype
    img = Tensor(batch["rgb"], dtype=dtype)
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        pred = forward(img, params, cfg, train=True)
        value = loss(cfg.task, pred, batch["target"])
    lv = value.item()
    if not math.isfinite(lv):
        raise FloatingPointError(f"non-finite loss {lv} at optimizer step {adam.t}")
    tape.backward(value)
    tp = trainable(params)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in tp.items()}
    nn.adam_step(tp, grads, adam)
    return lv
