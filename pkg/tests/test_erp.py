import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hohonet.erp import (
    CEILING,
    FLOOR,
    WALL,
    CuboidScene,
    Rotation,
    SceneRanges,
    cast_rays,
    classify_surfaces,
    generate_dataset,
    layout_1d,
    pixel_grid,
    pixel_to_ray,
    ray_to_pixel,
    render_cuboid,
    render_depth,
    rotate_erp,
    sample_scene,
    synth_rgb,
    wall_distance,
)
from hohonet.tensor import Tensor

CUBE = CuboidScene((2.0, 2.0, 2.0), (1.0, 1.0, 1.0))


def march(scene, d, step=1e-3):
    """Walk along the ray until it leaves the box, then bisect the exit point."""
    cam, size = np.array(scene.cam), np.array(scene.size)
    inside = lambda t: np.all((cam + t * d >= 0) & (cam + t * d <= size))  # noqa: E731
    t = 0.0
    while inside(t + step):
        t += step
    lo, hi = t, t + step
    for _ in range(60):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if inside(mid) else (lo, mid)
    return lo


# ---------------------------------------------------------------- projection


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 63.999), st.floats(0, 31.5))
def test_rays_are_unit_and_invert(u, v):
    # rows past the last pixel centre look beyond the pole, where the map is not one-to-one
    d = pixel_to_ray(u, v, 32, 64)
    assert abs(np.linalg.norm(d) - 1) < 1e-6
    uu, vv = ray_to_pixel(d, 32, 64)
    assert abs(vv - v) < 1e-6
    assert min(abs(uu - u), abs(uu + 64 - u)) < 1e-6


def test_projection_examples():
    d = pixel_to_ray(1.5, 1, 4, 4)  # u = W/2 - 1/2 -> phi = 0
    assert abs(math.atan2(d[1], d[0])) < 1e-12
    assert abs(math.asin(d[2]) - math.pi / 8) < 1e-12
    top = pixel_to_ray(0, 0, 512, 1024)
    assert abs(math.asin(top[2]) - (math.pi / 2 - math.pi / 1024)) < 1e-12
    assert pixel_to_ray(0, 0, 100000, 8)[2] > 1 - 1e-8


def test_projection_range_checked():
    with pytest.raises(ValueError):
        pixel_to_ray(4, 0, 4, 4)
    with pytest.raises(ValueError):
        pixel_to_ray(0, -0.1, 4, 4)


# ---------------------------------------------------------------- rotation


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation("tilt", 0.1)
    with pytest.raises(ValueError):
        Rotation("yaw", 4.0)


def test_rotation_matrices_orthonormal_and_axes():
    for ax, fixed in (("yaw", 2), ("pitch", 1), ("roll", 0)):
        R = Rotation(ax, 0.3).matrix
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        e = np.zeros(3)
        e[fixed] = 1
        np.testing.assert_allclose(R @ e, e, atol=1e-12)


def test_zero_angle_is_bit_exact_identity():
    img = np.random.default_rng(0).random((2, 16, 32)).astype(np.float32)
    for ax in ("yaw", "pitch", "roll"):
        assert np.array_equal(rotate_erp(img, Rotation(ax, 0.0), "nearest"), img)


@pytest.mark.parametrize("k", [1, 5, -3])
def test_yaw_pixel_multiple_is_circular_shift(k):
    img = np.random.default_rng(1).random((3, 8, 32))
    out = rotate_erp(img, Rotation("yaw", 2 * math.pi * k / 32), "nearest")
    assert np.array_equal(out, np.roll(img, k, axis=-1))
    back = rotate_erp(out, Rotation("yaw", -2 * math.pi * k / 32), "nearest")
    assert np.array_equal(back, img)


def test_pitch_roundtrip_error_bound():
    H, W = 256, 512
    v, u = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    img = 0.5 + 0.25 * np.sin(2 * np.pi * u / W * 3) * np.cos(np.pi * v / H * 2) + 0.2 * np.sin(2 * np.pi * u / W)
    back = rotate_erp(rotate_erp(img, Rotation("pitch", math.radians(10))), Rotation("pitch", math.radians(-10)))
    band = slice(H // 10, H - H // 10)
    assert np.abs(back - img)[band].mean() < 0.05


def test_rotate_accepts_tensor_and_checks_interp():
    t = Tensor(np.ones((1, 4, 8), np.float32))
    out = rotate_erp(t, Rotation("roll", 0.2))
    assert isinstance(out, Tensor) and np.allclose(out.data, 1.0)
    with pytest.raises(ValueError):
        rotate_erp(np.ones((4, 8)), Rotation("roll", 0.2), "cubic")


def test_rotated_render_matches_rotated_rays():
    s = sample_scene(3, 0)
    rot = Rotation("pitch", 0.2)
    d = render_depth(s, 16, 32, rot)[0]
    rays = pixel_grid(16, 32) @ rot.matrix
    for (v, u) in [(0, 0), (7, 13), (15, 31)]:
        assert abs(d[v, u] - march(s, rays[v, u])) < 1e-9


# ---------------------------------------------------------------- renderer


def test_cube_examples():
    depth, lab = cast_rays(CUBE, np.array([[1.0, 0, 0], [0, 0, -1.0], [math.sqrt(0.5), math.sqrt(0.5), 0]]))
    np.testing.assert_allclose(depth, [1.0, 1.0, math.sqrt(2)], atol=1e-12)
    assert lab.tolist() == [WALL, FLOOR, WALL]


def test_cube_layout_latitude_at_forward_column():
    W, H = 64, 32
    lay = layout_1d(CUBE, H, W)
    # column whose centre is closest to phi = 0 sits half a pixel off; use exact theta at the column
    u = W // 2
    phi = 2 * math.pi * (u + 0.5) / W - math.pi
    horiz = 1.0 / math.cos(phi)
    theta = math.atan2(1.0, horiz)
    assert abs((math.pi / 2 - math.pi * (lay.ceil_v[u] + 0.5) / H) - theta) < 1e-12
    # exactly forward the wall is 1 m away and the ceiling edge 1 m up: 45 degrees
    assert wall_distance(CUBE, 0.0) == 1.0


@pytest.mark.parametrize("idx", range(4))
def test_render_matches_ray_marcher(idx):
    s = sample_scene(11, idx)
    H, W = 16, 32
    depth, lab, _ = render_cuboid(s, H, W)
    rays = pixel_grid(H, W)
    rng = np.random.default_rng(idx)
    for _ in range(12):
        v, u = rng.integers(H), rng.integers(W)
        assert abs(depth[v, u] - march(s, rays[v, u])) < 1e-9
        hit = np.array(s.cam) + depth[v, u] * rays[v, u]
        if abs(hit[2]) < 1e-7:
            assert lab[v, u] == FLOOR
        elif abs(hit[2] - s.size[2]) < 1e-7:
            assert lab[v, u] == CEILING
        else:
            assert lab[v, u] == WALL


def test_depth_positive_and_bounded():
    for i in range(10):
        s = sample_scene(0, i)
        d = render_cuboid(s, 32, 64)[0]
        assert d.min() > 0 and d.max() <= s.diagonal


def test_edge_rays_resolve_to_wall():
    # a ray aimed exactly at the wall-floor edge
    s = CuboidScene((2.0, 2.0, 2.0), (1.0, 1.0, 1.0))
    d = np.array([1.0, 0.0, -1.0]) / math.sqrt(2)
    assert cast_rays(s, d[None])[1][0] == WALL


def test_columns_have_at_most_two_kinks():
    s = sample_scene(5, 2)
    d = render_cuboid(s, 128, 64)[0]
    for u in range(0, 64, 3):
        col = d[:, u]
        # away from the boundaries the second difference is small and smooth
        dd = np.abs(np.diff(col, 2))
        big = dd > 10 * np.median(dd) + 1e-6
        runs = np.count_nonzero(np.diff(big.astype(int)) == 1) + int(big[0])
        assert runs <= 2


def test_layout_boundaries_match_labels():
    s = sample_scene(2, 7)
    H, W = 64, 128
    _, lab, lay = render_cuboid(s, H, W)
    assert np.all(lay.ceil_v >= 0) and np.all(lay.ceil_v < lay.floor_v) and np.all(lay.floor_v < H)
    for u in range(0, W, 7):
        rows = np.arange(H)
        assert np.all(lab[rows < lay.ceil_v[u] - 0.5, u] == CEILING)
        assert np.all(lab[(rows > lay.ceil_v[u] + 0.5) & (rows < lay.floor_v[u] - 0.5), u] == WALL)
        assert np.all(lab[rows > lay.floor_v[u] + 0.5, u] == FLOOR)


@pytest.mark.parametrize("W", [128, 256, 1024])
def test_corner_probability_peaks(W):
    for i in range(5):
        lay = render_cuboid(sample_scene(4, i), 32, W)[2]
        p = lay.corner_prob
        peaks = (p >= np.roll(p, 1)) & (p > np.roll(p, -1)) & (p >= 0.5)
        assert peaks.sum() == 4
        assert p.max() <= 1.0 and p.min() >= 0.0


def test_scene_invariants():
    with pytest.raises(ValueError):
        CuboidScene((1.0, 1.0, -1.0), (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        CuboidScene((1.0, 1.0, 1.0), (1.0, 0.5, 0.5))
    s = sample_scene(1, 1)
    assert CuboidScene.from_json(s.to_json()) == s


# ---------------------------------------------------------------- datasets


def test_dataset_reproducible_and_valid():
    a = generate_dataset(9, 3, 32, 64)
    b = generate_dataset(9, 3, 32, 64)
    for x, y in zip(a, b):
        assert x.scene == y.scene
        assert np.array_equal(x.depth, y.depth) and np.array_equal(x.rgb, y.rgb)
    assert a[0].scene != a[1].scene
    with pytest.raises(ValueError):
        generate_dataset(0, 0, 32, 64)


def test_hundred_scenes_satisfy_ranges():
    r = SceneRanges()
    for i in range(100):
        s = sample_scene(0, i, r)
        for k, (lo, hi) in enumerate((r.size_x, r.size_y, r.size_z)):
            assert lo <= s.size[k] <= hi
        assert all(r.margin <= s.cam[k] <= s.size[k] - r.margin for k in range(3))
        assert s.diagonal < 10.0


def test_infeasible_ranges_rejected():
    with pytest.raises(ValueError):
        SceneRanges(cam_z=(1.0, 3.0)).validate()
    with pytest.raises(ValueError):
        SceneRanges(size_x=(0.5, 1.0)).validate()


def test_stand_in_rgb_channels():
    depth, lab, _ = render_cuboid(sample_scene(0, 0), 32, 64)
    rgb = synth_rgb(depth, lab)
    assert rgb.shape == (3, 32, 64) and rgb.dtype == np.float32
    assert abs(rgb[0].max() - 1) < 1e-6 and rgb[0].min() >= 0
    assert np.all(np.isclose(rgb[1][..., None], [0.6, 0.2, 0.9]).any(axis=-1))
    assert np.all(np.abs(rgb[2]) < 1)


def test_classify_surfaces_recovers_labels():
    for i in range(3):
        depth, lab, _ = render_cuboid(sample_scene(6, i), 64, 128)
        assert (classify_surfaces(depth) == lab).mean() > 0.995
