import numpy as np

from depthfuse.visualize import ANCHORS, colorize


def test_fixed_range_endpoints_and_clipping():
    rgb = colorize(np.array([[0.0, 80.0, 500.0]]), max_depth=80.0)
    np.testing.assert_array_equal(rgb[0, 0], ANCHORS[0, 1:])
    np.testing.assert_array_equal(rgb[0, 1], ANCHORS[-1, 1:])
    np.testing.assert_array_equal(rgb[0, 2], rgb[0, 1])


def test_mask_blacks_out_and_range_is_fixed():
    rgb = colorize(np.array([[10.0, 10.0]]), mask=np.array([[True, False]]))
    assert rgb[0, 1].sum() == 0 and rgb[0, 0].sum() > 0
    a = colorize(np.array([[20.0, 40.0]]))
    b = colorize(np.array([[20.0, 79.0]]))
    np.testing.assert_array_equal(a[0, 0], b[0, 0])
