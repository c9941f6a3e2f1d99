import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthfuse.geometry import (DepthImage, Intrinsics, PointSet, feature_extent, gather, load_intrinsics,
                                project, save_intrinsics, scatter, unproject)
from depthfuse.ndcore import Parameter, Tensor, ops

K1 = Intrinsics(1.0, 1.0, 0.0, 0.0, 8, 8)


def single(u, v, z, k=K1):
    values = np.zeros((k.height, k.width))
    values[v, u] = z
    return DepthImage.from_values(values)


def test_unproject_examples():
    np.testing.assert_allclose(unproject(single(0, 0, 2.0), K1).coords, [[0, 0, 2]])
    np.testing.assert_allclose(unproject(single(3, 1, 2.0), K1).coords, [[6, 2, 2]])


def test_unproject_row_major_and_empty():
    values = np.zeros((8, 8))
    values[2, 5], values[1, 7], values[2, 1] = 1.0, 2.0, 3.0
    pts = unproject(DepthImage.from_values(values), K1)
    np.testing.assert_allclose(pts.coords[:, 2], [2.0, 3.0, 1.0])
    with pytest.raises(ValueError, match="no observed"):
        unproject(DepthImage.from_values(np.zeros((8, 8))), K1)


def test_project_examples_and_bounds():
    pix, inside = project(PointSet([[0, 0, 5.0]]), Intrinsics(10, 10, 4, 3, 8, 8))
    np.testing.assert_array_equal(pix, [[4, 3]])
    assert inside.all()
    pix, inside = project(PointSet([[10, 0, 1.0], [-10, 0, 1.0]]), K1)
    assert not inside.any()


def test_project_halves_round_up_and_scale_floor():
    k = Intrinsics(1.0, 1.0, 0.0, 0.0, 8, 8)
    pix, _ = project(PointSet([[2.5, 1.49, 1.0]]), k)
    np.testing.assert_array_equal(pix, [[3, 1]])
    pix, _ = project(PointSet([[5.0, 3.0, 1.0]]), k, scale=0.5)
    np.testing.assert_array_equal(pix, [[2, 1]])
    assert feature_extent(Intrinsics(1, 1, 0, 0, 7, 5), 0.5) == (2, 3)


@settings(max_examples=40, deadline=None)
@given(u=st.integers(0, 39), v=st.integers(0, 29), z=st.floats(0.5, 90.0),
       fx=st.floats(20, 800), cx=st.floats(-5, 45), cy=st.floats(-5, 35))
def test_unproject_project_roundtrip(u, v, z, fx, cx, cy):
    k = Intrinsics(fx, fx * 1.1, cx, cy, 40, 30)
    pix, inside = project(unproject(single(u, v, z, k), k), k)
    np.testing.assert_array_equal(pix, [[u, v]])
    assert inside.all()


def test_intrinsics_validation_and_file(tmp_path):
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0, 0, 4, 4)
    k = Intrinsics(721.5377, 721.5377, 609.5593, 172.854, 1242, 375)
    save_intrinsics(k, tmp_path / "k.txt")
    assert load_intrinsics(tmp_path / "k.txt") == k
    (tmp_path / "bad.txt").write_text("1 2 3")
    with pytest.raises(ValueError, match="bad.txt"):
        load_intrinsics(tmp_path / "bad.txt")


def test_depth_image_rejects_nonpositive_observed():
    with pytest.raises(ValueError):
        DepthImage(np.array([[-1.0]]), np.array([[True]]))
    with pytest.raises(ValueError):
        PointSet([[0, 0, 0.0]])


def test_gather_and_out_of_bounds_zeros():
    feat = Tensor(np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4))
    out = gather(feat, [[1, 2], [3, 0], [9, 9]], [True, True, False])
    np.testing.assert_array_equal(out.data, [feat.data[:, 2, 1], feat.data[:, 0, 3], [0, 0]])


def test_scatter_collision_mean():
    feats = Tensor(np.array([[1.0], [3.0], [10.0]]))
    out = scatter(feats, [[0, 0], [0, 0], [2, 1]], [True, True, True], 2, 3)
    assert out.data[0, 0, 0] == 2.0
    assert out.data[0, 1, 2] == 10.0
    assert out.data.sum() == 12.0


def test_scatter_empty_mask_gives_zero_map():
    out = scatter(Tensor(np.ones((3, 2))), np.zeros((3, 2), int), np.zeros(3, bool), 4, 4)
    assert out.shape == (2, 4, 4) and not out.data.any()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40))
def test_scatter_conserves_mass_per_pixel(seed, n):
    rng = np.random.default_rng(seed)
    pix = rng.integers(0, 4, size=(n, 2))
    feats = rng.standard_normal((n, 2))
    out = scatter(Tensor(feats), pix, np.ones(n, bool), 4, 4).data
    flat = pix[:, 1] * 4 + pix[:, 0]
    counts = np.bincount(flat, minlength=16)
    recovered = out.reshape(2, 16).T * counts[:, None]
    expected = np.zeros((16, 2))
    np.add.at(expected, flat, feats)
    np.testing.assert_allclose(recovered, expected, atol=1e-12)


def test_gather_backward_adds_duplicates():
    feat = Parameter(np.zeros((1, 2, 2)), dtype=np.float64)
    ops.total(gather(feat, [[1, 1], [1, 1], [0, 0]], [True, True, True])).backward()
    np.testing.assert_array_equal(feat.grad[0], [[1, 0], [0, 2]])


def test_batched_gather_and_scatter_respect_frame_index():
    feat = Tensor(np.arange(8.0).reshape(2, 1, 2, 2))
    out = gather(feat, [[0, 0], [0, 0]], [True, True], batch=[0, 1])
    np.testing.assert_array_equal(out.data[:, 0], [0.0, 4.0])
    back = scatter(out, [[0, 0], [0, 0]], [True, True], 2, 2, batch=[0, 1], batch_size=2)
    np.testing.assert_array_equal(back.data[:, 0, 0, 0], [0.0, 4.0])
