"""Equirectangular geometry and the analytic cuboid-room renderer.

Conventions: pixel (u, v) of an H x W image looks along longitude
``phi = 2*pi*(u + 0.5)/W - pi`` and latitude ``theta = pi/2 - pi*(v + 0.5)/H``;
the ray is ``(cos(theta)cos(phi), cos(theta)sin(phi), sin(theta))`` with z up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .tensor import Tensor

WALL, FLOOR, CEILING = 0, 1, 2
# tie nudge on floor/ceiling hits so that walls win exact edge rays
TIE_EPS = 1e-9


# ---------------------------------------------------------------- projection


def pixel_to_ray(u, v, H: int, W: int) -> np.ndarray:
    """Unit viewing direction(s) for pixel coordinates; shape (..., 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0) or np.any(u >= W) or np.any(v < 0) or np.any(v >= H):
        raise ValueError(f"pixel coordinates outside [0, {W}) x [0, {H})")
    phi = 2 * np.pi * (u + 0.5) / W - np.pi
    theta = np.pi / 2 - np.pi * (v + 0.5) / H
    c = np.cos(theta)
    return np.stack([c * np.cos(phi), c * np.sin(phi), np.sin(theta)], axis=-1)


def ray_to_pixel(d: np.ndarray, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (u, v) for unit directions; u in [-0.5, W - 0.5)."""
    phi = np.arctan2(d[..., 1], d[..., 0])
    theta = np.arcsin(np.clip(d[..., 2], -1.0, 1.0))
    u = (phi + np.pi) * W / (2 * np.pi) - 0.5
    v = (np.pi / 2 - theta) * H / np.pi - 0.5
    return u, v


def pixel_grid(H: int, W: int) -> np.ndarray:
    """Rays of every pixel centre, shape (H, W, 3)."""
    vv, uu = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    return pixel_to_ray(uu, vv, H, W)


def latitudes(H: int) -> np.ndarray:
    return np.pi / 2 - np.pi * (np.arange(H) + 0.5) / H


def longitudes(W: int) -> np.ndarray:
    return 2 * np.pi * (np.arange(W) + 0.5) / W - np.pi


# ---------------------------------------------------------------- rotation


@dataclass(frozen=True)
class Rotation:
    axis: str
    angle: float

    def __post_init__(self):
        if self.axis not in ("yaw", "pitch", "roll"):
            raise ValueError(f"unknown rotation axis {self.axis!r}")
        if abs(self.angle) > math.pi + 1e-12:
            raise ValueError(f"|angle| must be <= pi, got {self.angle}")

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        if self.axis == "yaw":
            return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        if self.axis == "pitch":
            return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _source_coords(rot: Rotation, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    rays = pixel_grid(H, W)
    # R^-1 d == R^T d, i.e. d @ R for row vectors
    src = rays @ rot.matrix
    return ray_to_pixel(src, H, W)


def rotate_erp(img, rot: Rotation, interp: str = "bilinear"):
    """Resample a [C, H, W] (or [H, W]) panorama as seen after rotating the camera.

    Output pixel (u, v) takes the input value along ``R^-1 @ pixel_to_ray(u, v)``.
    Sampling wraps in width and clamps in height.
    """
    as_tensor = isinstance(img, Tensor)
    arr = img.data if as_tensor else np.asarray(img)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    _, H, W = arr.shape
    if rot.angle == 0.0:
        out = arr.copy()
    else:
        us, vs = _source_coords(rot, H, W)
        if interp == "nearest":
            ui = np.floor(us + 0.5).astype(int) % W
            vi = np.clip(np.floor(vs + 0.5).astype(int), 0, H - 1)
            out = arr[:, vi, ui]
        elif interp == "bilinear":
            u0 = np.floor(us).astype(int)
            v0 = np.floor(vs).astype(int)
            fu = us - u0
            fv = vs - v0
            u1 = (u0 + 1) % W
            u0 = u0 % W
            v1 = np.clip(v0 + 1, 0, H - 1)
            v0 = np.clip(v0, 0, H - 1)
            out = (
                arr[:, v0, u0] * (1 - fu) * (1 - fv)
                + arr[:, v0, u1] * fu * (1 - fv)
                + arr[:, v1, u0] * (1 - fu) * fv
                + arr[:, v1, u1] * fu * fv
            ).astype(arr.dtype)
        else:
            raise ValueError(f"unknown interpolation {interp!r}")
    if squeeze:
        out = out[0]
    return Tensor(out) if as_tensor else out


# ---------------------------------------------------------------- cuboid scenes


@dataclass(frozen=True)
class CuboidScene:
    """Axis-aligned box [0, Lx] x [0, Ly] x [0, Lz] with a camera inside."""

    size: tuple
    cam: tuple
    wall_class: int = WALL
    floor_class: int = FLOOR
    ceiling_class: int = CEILING

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise ValueError(f"room extents must be positive, got {self.size}")
        if any(not 0 < p < s for p, s in zip(self.cam, self.size)):
            raise ValueError(f"camera {self.cam} not strictly inside room {self.size}")

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.size))

    def corners_xy(self) -> np.ndarray:
        """Floor corners relative to the camera, counter-clockwise."""
        lx, ly, _ = self.size
        px, py, _ = self.cam
        return np.array([[0, 0], [lx, 0], [lx, ly], [0, ly]], dtype=np.float64) - [px, py]

    def to_json(self) -> dict:
        return {
            "size": list(self.size),
            "cam": list(self.cam),
            "wall_class": self.wall_class,
            "floor_class": self.floor_class,
            "ceiling_class": self.ceiling_class,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CuboidScene":
        return cls(
            tuple(d["size"]),
            tuple(d["cam"]),
            d.get("wall_class", WALL),
            d.get("floor_class", FLOOR),
            d.get("ceiling_class", CEILING),
        )


@dataclass
class LayoutGT1D:
    """Per-column ceiling/floor boundary rows and corner probability."""

    ceil_v: np.ndarray
    floor_v: np.ndarray
    corner_prob: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.ceil_v, self.floor_v, self.corner_prob])

    @classmethod
    def from_array(cls, a: np.ndarray) -> "LayoutGT1D":
        a = np.asarray(a)
        return cls(a[0], a[1], a[2])


def cast_rays(scene: CuboidScene, rays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exit distance and hit-face label for unit rays from the camera.

    A ray parallel to a face plane never hits it. Floor/ceiling distances are
    nudged by 1e-9 so exact edge rays resolve to the wall.
    """
    size = np.asarray(scene.size, dtype=np.float64)
    cam = np.asarray(scene.cam, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rays > 0, (size - cam) / rays, np.where(rays < 0, -cam / rays, np.inf))
    t[..., 2] += TIE_EPS
    face = np.argmin(t, axis=-1)
    depth = np.take_along_axis(t, face[..., None], axis=-1)[..., 0]
    depth = np.where(face == 2, depth - TIE_EPS, depth)
    labels = np.full(face.shape, scene.wall_class, dtype=np.int64)
    labels[(face == 2) & (rays[..., 2] < 0)] = scene.floor_class
    labels[(face == 2) & (rays[..., 2] > 0)] = scene.ceiling_class
    return depth, labels


def render_depth(scene: CuboidScene, H: int, W: int, rot: Rotation | None = None):
    """Depth and labels, optionally as seen by a camera rotated by ``rot``."""
    rays = pixel_grid(H, W)
    if rot is not None:
        rays = rays @ rot.matrix
    return cast_rays(scene, rays)


def wall_distance(scene: CuboidScene, phi) -> np.ndarray:
    """Horizontal distance from the camera to the wall at longitude ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    d = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    size = np.asarray(scene.size[:2], dtype=np.float64)
    cam = np.asarray(scene.cam[:2], dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(d > 0, (size - cam) / d, np.where(d < 0, -cam / d, np.inf))
    return t.min(axis=-1)


def layout_1d(scene: CuboidScene, H: int, W: int) -> LayoutGT1D:
    horiz = wall_distance(scene, longitudes(W))
    lz = scene.size[2]
    pz = scene.cam[2]
    theta_c = np.arctan2(lz - pz, horiz)
    theta_f = -np.arctan2(pz, horiz)
    to_v = lambda th: (np.pi / 2 - th) * H / np.pi - 0.5  # noqa: E731

    corners = scene.corners_xy()
    u_c = (np.arctan2(corners[:, 1], corners[:, 0]) + np.pi) * W / (2 * np.pi) - 0.5
    du = np.abs(np.arange(W)[:, None] - u_c[None, :]) % W
    du = np.minimum(du, W - du).min(axis=1)
    sigma = W / 256
    prob = np.exp(-(du**2) / (2 * sigma**2))
    return LayoutGT1D(to_v(theta_c), to_v(theta_f), prob)


def render_cuboid(scene: CuboidScene, H: int, W: int):
    """Return (depth [H, W], labels [H, W], LayoutGT1D) for a gravity-aligned camera.

    Depth is the Euclidean distance along each pixel ray to the first face.
    """
    depth, labels = render_depth(scene, H, W)
    return depth, labels, layout_1d(scene, H, W)


def synth_rgb(depth: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Deterministic 3-channel stand-in for a colour panorama.

    Channel 0 is the depth-gradient magnitude scaled to [0, 1] (central
    differences, circular in width); channel 1 is a per-class albedo
    (wall 0.6, floor 0.2, ceiling 0.9); channel 2 is latitude / (pi/2).
    """
    H, W = depth.shape
    gx = (np.roll(depth, -1, axis=1) - np.roll(depth, 1, axis=1)) / 2
    gy = np.gradient(depth, axis=0)
    mag = np.hypot(gx, gy)
    mag = mag / max(float(mag.max()), 1e-12)
    albedo = np.choose(np.clip(labels, 0, 2), [0.6, 0.2, 0.9])
    lat = np.broadcast_to((latitudes(H) / (np.pi / 2))[:, None], (H, W))
    return np.stack([mag, albedo, lat]).astype(np.float32)


RGB_DESCRIPTION = {
    "0": "depth-gradient magnitude / image max (central differences, circular width)",
    "1": "albedo by class: wall 0.6, floor 0.2, ceiling 0.9",
    "2": "latitude / (pi/2)",
}


def classify_surfaces(depth: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Recover wall/floor/ceiling labels of a gravity-aligned cuboid depth map."""
    H, W = depth.shape
    z = pixel_grid(H, W)[..., 2] * depth
    zmin, zmax = float(z.min()), float(z.max())
    labels = np.full((H, W), WALL, dtype=np.int64)
    span = max(zmax - zmin, 1e-9)
    labels[z <= zmin + tol * span] = FLOOR
    labels[z >= zmax - tol * span] = CEILING
    return labels


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class SceneRanges:
    size_x: tuple = (2.5, 5.0)
    size_y: tuple = (2.5, 5.0)
    size_z: tuple = (2.4, 3.2)
    cam_z: tuple = (1.0, 1.8)
    margin: float = 0.3

    def validate(self) -> None:
        m = self.margin
        for name in ("size_x", "size_y", "size_z"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} range {lo, hi} invalid")
            if lo <= 2 * m:
                raise ValueError(f"{name} lower bound {lo} leaves no room for margin {m}")
        lo, hi = self.cam_z
        if lo > hi or lo < m or hi > self.size_z[0] - m:
            raise ValueError(f"cam_z range {self.cam_z} infeasible for heights {self.size_z} and margin {m}")


@dataclass
class Sample:
    scene: CuboidScene
    depth: np.ndarray
    sem: np.ndarray
    layout: LayoutGT1D
    index: int = 0
    rgb: np.ndarray = field(default=None, repr=False)


def sample_scene(seed: int, index: int, ranges: SceneRanges = SceneRanges()) -> CuboidScene:
    """Scene ``index`` of stream ``(seed, 'scene', index)``.

    Draw order: Lx, Ly, Lz, then camera x, y in [margin, L - margin] and z in cam_z.
    """
    rng = Rng.for_purpose(seed, "scene", index)
    lx = rng.uniform(*ranges.size_x)
    ly = rng.uniform(*ranges.size_y)
    lz = rng.uniform(*ranges.size_z)
    m = ranges.margin
    px = rng.uniform(m, lx - m)
    py = rng.uniform(m, ly - m)
    pz = rng.uniform(*ranges.cam_z)
    return CuboidScene((lx, ly, lz), (px, py, pz))


def generate_dataset(seed: int, count: int, H: int, W: int, ranges: SceneRanges = SceneRanges()) -> list[Sample]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    ranges.validate()
    out = []
    for i in range(count):
        scene = sample_scene(seed, i, ranges)
        depth, sem, layout = render_cuboid(scene, H, W)
        out.append(Sample(scene, depth, sem, layout, index=i, rgb=synth_rgb(depth, sem)))
    return out
