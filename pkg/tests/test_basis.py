import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hohonet import nn
from hohonet.basis import apply_basis, compress_columns, forward_dct, make_basis
from hohonet.erp import CuboidScene, render_cuboid
from hohonet.tensor import Tensor


def brute_dct(col, r):
    H = len(col)
    return np.array([2.0 / H * sum(col[m] * math.cos(math.pi * n * (m + 0.5) / H) for m in range(H)) for n in range(r)])


def brute_idct(coef, H):
    return np.array(
        [coef[0] / 2 + sum(coef[n] * math.cos(math.pi * n * (m + 0.5) / H) for n in range(1, len(coef))) for m in range(H)]
    )


def test_interp_square_is_identity():
    assert np.array_equal(make_basis("interp", 4, 4).M, np.eye(4))


def test_idct_small_columns():
    M = make_basis("idct", 4, 2).M
    assert M[:, 0].tolist() == [0.5] * 4
    np.testing.assert_allclose(M[:, 1], [0.92388, 0.38268, -0.38268, -0.92388], atol=1e-5)


@pytest.mark.parametrize("H,r", [(4, 4), (16, 5), (128, 32), (512, 64)])
def test_idct_gram_is_diagonal(H, r):
    M = make_basis("idct", H, r).M
    G = M.T @ M
    expected = np.diag([H / 4] + [H / 2] * (r - 1))
    assert np.abs(G - expected).max() < 1e-4


@pytest.mark.parametrize("H,r", [(8, 3), (32, 7), (64, 64), (16, 1)])
def test_interp_rows(H, r):
    M = make_basis("interp", H, r).M
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)
    assert (np.count_nonzero(M, axis=1) <= 2).all()


@pytest.mark.parametrize("H,r", [(16, 4), (128, 32), (64, 48)])
def test_interp_equals_height_resize(H, r):
    x = np.random.default_rng(H + r).standard_normal((3, r, 5))
    via_basis = apply_basis(Tensor(x, dtype=np.float64), make_basis("interp", H, r), axis=1).data
    via_resize = nn.bilinear_resize(Tensor(x, dtype=np.float64), H, 5).data
    assert np.abs(via_basis - via_resize).max() < 1e-6


def test_bad_arguments():
    for args in [("idct", 4, 5), ("idct", 4, 0), ("dct", 4, 2)]:
        with pytest.raises(ValueError):
            make_basis(*args)
    with pytest.raises(ValueError):
        forward_dct(np.zeros(4), 5)
    with pytest.raises(ValueError):
        apply_basis(np.zeros(3), make_basis("idct", 8, 4))


def test_basis_is_cached_and_read_only():
    b = make_basis("idct", 32, 8)
    assert b is make_basis("idct", 32, 8)
    with pytest.raises(ValueError):
        b.M[0, 0] = 1.0


def test_apply_examples():
    b = make_basis("idct", 6, 4)
    assert np.allclose(apply_basis(np.array([2.0, 0, 0, 0]), b), 1.0)
    np.testing.assert_allclose(
        apply_basis(np.array([0.0, 1.0]), make_basis("idct", 4, 2)), [0.92388, 0.38268, -0.38268, -0.92388], atol=1e-5
    )
    x = np.random.default_rng(0).standard_normal(7)
    assert np.array_equal(apply_basis(x, make_basis("interp", 7, 7)), x)


def test_forward_constant_signal():
    np.testing.assert_allclose(forward_dct(np.full(10, 3.0), 4), [6.0, 0, 0, 0], atol=1e-12)


def test_forward_and_inverse_match_brute_force():
    col = np.random.default_rng(1).standard_normal(24)
    np.testing.assert_allclose(forward_dct(col, 9), brute_dct(col, 9), atol=1e-12)
    coef = np.random.default_rng(2).standard_normal(9)
    np.testing.assert_allclose(apply_basis(coef, make_basis("idct", 24, 9)), brute_idct(coef, 24), atol=1e-12)


def test_roundtrip_512():
    X = np.random.default_rng(3).standard_normal(512)
    b = make_basis("idct", 512, 512)
    assert np.abs(apply_basis(forward_dct(X, 512), b) - X).max() < 1e-10
    X32 = X.astype(np.float32)
    out32 = apply_basis(Tensor(forward_dct(X32, 512)), b).data
    assert out32.dtype == np.float32 and np.abs(out32 - X32).max() < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_truncation_error_non_increasing_in_r(H, seed):
    X = np.random.default_rng(seed).standard_normal(H)
    errs = [np.sum((apply_basis(forward_dct(X, r), make_basis("idct", H, r)) - X) ** 2) for r in range(1, H + 1)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-18 * H + 1e-20


def test_compress_full_and_constant():
    d = render_cuboid(CuboidScene((4.0, 3.0, 2.8), (1.2, 2.0, 1.5)), 64, 128)[0].astype(np.float32)
    assert compress_columns(d, 64)[1].max() < 1e-3
    const_cols = np.tile(np.random.default_rng(0).uniform(1, 3, 20), (16, 1))
    rec, err = compress_columns(const_cols, 1)
    assert err.max() < 1e-12
    with pytest.raises(ValueError):
        compress_columns(d, 65)


def test_compress_matches_per_column_oracle():
    d = render_cuboid(CuboidScene((4.0, 3.0, 2.8), (1.2, 2.0, 1.5)), 512, 16)[0]
    rec, err = compress_columns(d, 16)
    for u in (0, 5, 11):
        ref = brute_idct(brute_dct(d[:, u], 16), 512)
        assert np.abs(rec[:, u] - ref).max() < 1e-5
    np.testing.assert_allclose(err, np.abs(d - rec))
