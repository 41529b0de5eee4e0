import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsom.errors import DimensionMismatchError, GeometryError
from lsom.lattice_ops import (
    Rounding,
    WindowPool,
    coverage,
    inverse_scan,
    output_side,
    scan,
    scan_many,
    unflatten_window,
)


@pytest.mark.parametrize("s,p,v,u", [(28, 7, 1, 22), (28, 4, 3, 9), (28, 28, 1, 1), (28, 2, 2, 14), (22, 22, 1, 1)])
def test_output_side(s, p, v, u):
    assert output_side(s, p, v).u == u


@pytest.mark.parametrize("s,p,v", [(28, 5, 2), (28, 29, 1), (28, 0, 1), (28, 3, 0)])
def test_output_side_errors(s, p, v):
    with pytest.raises(GeometryError):
        output_side(s, p, v)


def test_scan_shapes():
    img = np.random.default_rng(0).random((28, 28))
    out = scan(img, output_side(28, 7, 1))
    assert out.shape == (22, 22, 49)
    np.testing.assert_array_equal(out[3, 5], img[3:10, 5:12].ravel())


def test_scan_whole_lattice():
    L = np.random.default_rng(0).random((6, 6, 2))
    out = scan(L, output_side(6, 6, 1))
    assert out.shape == (1, 1, 72)
    np.testing.assert_array_equal(out[0, 0], L.reshape(-1))


def test_scan_hand_enumerated_windows():
    # cell (r, c) holds (10*r + c, 100 + 10*r + c)
    L = np.zeros((4, 4, 2))
    for r in range(4):
        for c in range(4):
            L[r, c] = (10 * r + c, 100 + 10 * r + c)
    out = scan(L, output_side(4, 2, 2))
    assert out.shape == (2, 2, 8)
    np.testing.assert_array_equal(out[0, 0], [0, 100, 1, 101, 10, 110, 11, 111])
    np.testing.assert_array_equal(out[0, 1], [2, 102, 3, 103, 12, 112, 13, 113])
    np.testing.assert_array_equal(out[1, 0], [20, 120, 21, 121, 30, 130, 31, 131])
    np.testing.assert_array_equal(out[1, 1], [22, 122, 23, 123, 32, 132, 33, 133])


def test_scan_geometry_mismatch():
    with pytest.raises(GeometryError):
        scan(np.zeros((10, 10)), output_side(28, 7, 1))


def test_scan_many_matches_scan():
    rng = np.random.default_rng(1)
    stack = rng.random((3, 9, 9, 2))
    g = output_side(9, 3, 2)
    out = scan_many(stack, g)
    for i in range(3):
        np.testing.assert_array_equal(out[i], scan(stack[i], g))


def test_inverse_scan_nonoverlapping_exact():
    L = np.random.default_rng(2).integers(0, 50, size=(12, 12, 2)).astype(float)
    g = output_side(12, 4, 4)
    np.testing.assert_array_equal(inverse_scan(scan(L, g), g, Rounding.ROUND), L)


def test_inverse_scan_overlap_tie_rounds_half_even():
    # s=3, p=2, v=1: cell (1, 1) is written by all four windows
    g = output_side(3, 2, 1)
    windows = np.zeros((2, 2, 4))
    windows[0, 0] = [2, 2, 2, 2.0]
    windows[0, 1] = [2, 2, 2, 2.0]
    windows[1, 0] = [3, 3, 3, 3.0]
    windows[1, 1] = [3, 3, 3, 3.0]
    mean = inverse_scan(windows, g)
    assert mean[1, 1, 0] == 2.5
    assert inverse_scan(windows, g, Rounding.ROUND)[1, 1, 0] == 2.0
    assert inverse_scan(windows + 1, g, Rounding.ROUND)[1, 1, 0] == 4.0  # 3.5 -> 4


def test_inverse_scan_clamp_unit():
    g = output_side(2, 2, 1)
    windows = np.array([[[1.3, -0.2, 0.4, 1.0]]])
    out = inverse_scan(windows, g, Rounding.CLAMP_UNIT)
    np.testing.assert_array_equal(out[..., 0], [[1.0, 0.0], [0.4, 1.0]])


def test_inverse_scan_round_clamps_to_grid():
    g = output_side(2, 2, 1)
    windows = np.array([[[-2.0, 7.6, 3.0, 50.0]]])
    out = inverse_scan(windows, g, Rounding.ROUND, coord_max=9)
    np.testing.assert_array_equal(out[..., 0], [[0.0, 8.0], [3.0, 9.0]])


def test_inverse_scan_errors():
    g = output_side(6, 2, 2)
    with pytest.raises(GeometryError):
        inverse_scan(np.zeros((2, 2, 4)), g)
    with pytest.raises(DimensionMismatchError):
        inverse_scan(np.zeros((3, 3, 6)), g)


def _geometries(max_side=16, overlapping=None):
    @st.composite
    def build(draw):
        s = draw(st.integers(1, max_side))
        p = draw(st.integers(1, s))
        strides = [v for v in range(1, p + 1) if (s - p) % v == 0]
        if overlapping is True:
            strides = [v for v in strides if v < p] or strides
        if overlapping is False:
            strides = [p] if (s - p) % p == 0 else []
        if not strides:
            return output_side(s, s, 1)
        return output_side(s, p, draw(st.sampled_from(strides)))
    return build()


@settings(max_examples=200, deadline=None)
@given(_geometries(overlapping=False), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_roundtrip_nonoverlapping_property(geom, dim, seed):
    L = np.random.default_rng(seed).integers(-20, 20, size=(geom.s, geom.s, dim)).astype(float)
    np.testing.assert_array_equal(inverse_scan(scan(L, geom), geom, Rounding.ROUND), L)


@settings(max_examples=200, deadline=None)
@given(_geometries(), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_roundtrip_mean_property(geom, dim, seed):
    L = np.random.default_rng(seed).normal(size=(geom.s, geom.s, dim)) * 1e3
    np.testing.assert_array_equal(inverse_scan(scan(L, geom), geom), L)


@settings(max_examples=200, deadline=None)
@given(_geometries(), st.integers(1, 3))
def test_scan_dim_and_coverage(geom, dim):
    out = scan(np.zeros((geom.s, geom.s, dim)), geom)
    assert out.shape == (geom.u, geom.u, geom.p * geom.p * dim)
    cov = coverage(geom)
    assert cov.min() >= 1
    if geom.v == 1:
        assert cov[0, 0] == 1
        mid = geom.s // 2
        assert cov[mid, mid] <= min(geom.p, geom.u) ** 2
        if geom.p <= geom.u:
            assert cov.max() == min(geom.p, geom.u) ** 2


def test_coverage_center_count():
    cov = coverage(output_side(28, 7, 1))
    assert cov[0, 0] == 1
    assert cov[14, 14] == 49


@given(st.integers(1, 6), st.integers(1, 4))
def test_unflatten_bijection(p, dim):
    window = np.arange(p * p * dim, dtype=float).reshape(p, p, dim)
    flat = window.reshape(-1)
    np.testing.assert_array_equal(unflatten_window(flat, p, dim), window)
    np.testing.assert_array_equal(unflatten_window(flat, p, dim).reshape(-1), flat)


def test_window_pool_indexing():
    rng = np.random.default_rng(3)
    stack = rng.random((4, 10, 10, 2))
    g = output_side(10, 4, 2)
    pool = WindowPool(stack, g)
    assert len(pool) == 4 * 16
    assert pool.dim == 32
    expected = scan_many(stack, g).reshape(-1, 32)
    for i in (0, 5, 17, 63):
        np.testing.assert_array_equal(pool[i], expected[i])
    with pytest.raises(IndexError):
        pool[64]
