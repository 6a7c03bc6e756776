import numpy as np
import pytest
import scipy.sparse as sp

from stereolift.engine.errors import DataError, DimensionMismatchError
from stereolift.harness.metrics import psnr
from stereolift.imaging.raster import DepthMap, Raster
from stereolift.inference.depth import smoothness_weights
from stereolift.models import SolverConfig
from stereolift.solver import grad_x, grad_y
from stereolift.stereo import (
    DisparityField,
    SaliencyWeights,
    StereoPair,
    compose_anaglyph,
    compose_interlaced,
    compose_side_by_side,
    default_wmax,
    depth_to_disparity,
    optimize_disparity,
    render_stereo,
    saliency_weights,
)


def test_default_wmax_scales_with_width():
    assert default_wmax(640) == pytest.approx(25.0)
    assert default_wmax(160) == pytest.approx(6.25)


def test_depth_to_disparity():
    near = depth_to_disparity(DepthMap.from_array(np.ones((4, 4))), wmax=20.0)
    np.testing.assert_allclose(near.values, 20.0 / 1.01)
    far = depth_to_disparity(DepthMap.from_array(np.full((4, 4), 1e6)), wmax=20.0)
    assert far.values.max() < 1e-4


def test_depth_to_disparity_rejects_holes():
    valid = np.ones((4, 4), dtype=bool)
    valid[1, 1] = False
    with pytest.raises(DataError):
        depth_to_disparity(DepthMap.from_array(np.ones((4, 4)), valid), wmax=20.0)


def test_saliency_flat_region():
    image = Raster(data=np.full((6, 6), 0.4))
    w0 = DisparityField(values=np.full((6, 6), 10.0))
    sal = saliency_weights(image, w0, wmax=20.0)
    np.testing.assert_allclose(sal.values, 0.5 + 1.0 / (1.0 + np.exp(5.0)), rtol=1e-9)


def test_saliency_edges():
    image = Raster(data=np.array([[0.0, 0.1, 0.1]]))
    sal = saliency_weights(image, DisparityField(values=np.zeros((1, 3))), wmax=20.0)
    assert sal.values[0, 0] > 0.999
    assert sal.values[0, 1] < 0.01

    threshold = Raster(data=np.array([[0.0, 0.01]]))
    sal = saliency_weights(threshold, DisparityField(values=np.zeros((1, 2))), wmax=20.0)
    assert sal.values[0, 0] == pytest.approx(0.5)


def test_saliency_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        saliency_weights(Raster(data=np.zeros((4, 4))), DisparityField(values=np.ones((4, 5))), 20.0)


def test_saliency_must_be_positive():
    with pytest.raises(ValueError):
        SaliencyWeights(values=np.zeros((2, 2)))


def _inputs(textured_raster, h=16, w=16, seed=0):
    frame = textured_raster(h, w, seed)
    rng = np.random.default_rng(seed)
    w0 = DisparityField(values=rng.uniform(5.0, 15.0, (h, w)))
    return frame, w0, saliency_weights(frame, w0, 20.0)


def test_optimize_without_smoothing_returns_target(textured_raster):
    frame, w0, sal = _inputs(textured_raster)
    out = optimize_disparity([w0], [sal], [frame], lam=0.0, mu=0.0)
    np.testing.assert_allclose(out[0].values, w0.values, atol=1e-10)


def test_optimize_keeps_constant_disparity(textured_raster):
    frame = textured_raster(16, 16)
    w0 = DisparityField(values=np.full((16, 16), 7.5))
    sal = saliency_weights(frame, w0, 20.0)
    out = optimize_disparity([w0], [sal], [frame], lam=10.0, mu=10.0)
    np.testing.assert_allclose(out[0].values, 7.5, rtol=1e-9)


def test_optimize_matches_dense_solve(textured_raster):
    h = w = 16
    lam = 10.0
    frame, w0, sal = _inputs(textured_raster, h, w, seed=3)
    smooth = smoothness_weights(frame)

    l = sal.values.ravel()
    gx = grad_x(h, w).matrix
    gy = grad_y(h, w).matrix
    lhs = (
        sp.diags(l)
        + lam * (gx.T @ sp.diags(smooth.s_x.ravel()) @ gx)
        + lam * (gy.T @ sp.diags(smooth.s_y.ravel()) @ gy)
    ).toarray()
    expected = np.linalg.solve(lhs, l * w0.values.ravel())

    out = optimize_disparity([w0], [sal], [frame], lam=lam, mu=0.0, solver=SolverConfig(pcg_tol=1e-12))
    np.testing.assert_allclose(out[0].values.ravel(), expected, rtol=1e-8)


def test_salient_pixels_move_less():
    h = w = 16
    rng = np.random.default_rng(2)
    w0 = DisparityField(values=rng.uniform(5.0, 15.0, (h, w)))
    salient = rng.random((h, w)) < 0.5
    sal = SaliencyWeights(values=np.where(salient, 5.0, 0.1))
    frame = Raster(data=np.full((h, w), 0.5))

    out = optimize_disparity([w0], [sal], [frame], lam=1.0, mu=0.0)
    moved = np.abs(out[0].values - w0.values)
    assert moved[salient].mean() < 0.7 * moved[~salient].mean()


def test_optimize_count_mismatch(textured_raster):
    frame, w0, sal = _inputs(textured_raster)
    with pytest.raises(DimensionMismatchError):
        optimize_disparity([w0, w0], [sal], [frame])


def test_optimize_video_needs_flows(textured_raster):
    frame, w0, sal = _inputs(textured_raster)
    with pytest.raises(DimensionMismatchError):
        optimize_disparity([w0, w0], [sal, sal], [frame, frame], mu=10.0)


def test_zero_disparity_renders_input(textured_raster):
    frame = textured_raster(12, 20)
    pair = render_stereo(frame, DisparityField(values=np.zeros((12, 20))))
    np.testing.assert_allclose(pair.left.data, frame.data, atol=1e-12)
    np.testing.assert_allclose(pair.right.data, frame.data, atol=1e-12)
    assert pair.shift == 0.0


def test_uniform_disparity_shifts_views(textured_raster):
    frame = textured_raster(12, 24)
    pair = render_stereo(frame, DisparityField(values=np.full((12, 24), 4.0)), window_shift=False)
    # right view samples 2px to the right, left view 2px to the left
    np.testing.assert_allclose(pair.right.data[:, :-2], frame.data[:, 2:], atol=1e-12)
    np.testing.assert_allclose(pair.left.data[:, 2:], frame.data[:, :-2], atol=1e-12)
    core = Raster(data=pair.right.data[:, 2:-4])
    assert psnr(core, Raster(data=frame.data[:, 4:-2])) >= 40.0


def test_window_shift_keeps_nearest_plane_fixed(textured_raster):
    frame = textured_raster(12, 24)
    pair = render_stereo(frame, DisparityField(values=np.full((12, 24), 4.0)), window_shift=True)
    assert pair.shift == pytest.approx(2.0)
    np.testing.assert_allclose(pair.left.data, frame.data, atol=1e-12)
    np.testing.assert_allclose(pair.right.data, frame.data, atol=1e-12)


def test_near_strip_moves_more_than_background():
    h, w = 10, 48
    image = np.full((h, w), 0.3)
    image[:, 20:28] = 1.0
    disparity = np.full((h, w), 1.0)
    disparity[:, 20:28] = 8.0

    pair = render_stereo(Raster(data=image), DisparityField(values=disparity), window_shift=False)
    right = pair.right.plane()
    assert np.all(np.isfinite(right))
    assert right.min() >= 0.3 - 1e-9 and right.max() <= 1.0 + 1e-9

    bright = np.flatnonzero(right.mean(axis=0) > 0.9)
    assert bright.size > 0
    assert bright.mean() < 23.5 - 3.0


def test_wide_disparity_range_keeps_far_pixels():
    h, w = 6, 64
    disparity = np.repeat(np.linspace(0.0, 400.0, w)[None, :], h, axis=0)
    pair = render_stereo(Raster(data=np.full((h, w), 0.6)), DisparityField(values=disparity), window_shift=False)
    np.testing.assert_allclose(pair.left.plane(), 0.6, atol=1e-12)
    np.testing.assert_allclose(pair.right.plane(), 0.6, atol=1e-12)


def test_render_shape_mismatch(textured_raster):
    with pytest.raises(DimensionMismatchError):
        render_stereo(textured_raster(8, 8), DisparityField(values=np.zeros((8, 9))))


def _pair(h=4, w=6):
    left = np.zeros((h, w, 3))
    left[:, :, 0] = 1.0
    right = np.zeros((h, w, 3))
    right[:, :, 1:] = 1.0
    return StereoPair(left=Raster(data=left), right=Raster(data=right))


def test_anaglyph_channels():
    out = compose_anaglyph(_pair())
    np.testing.assert_array_equal(out.data, np.ones((4, 6, 3)))

    same = Raster(data=np.random.default_rng(0).random((4, 6, 3)))
    out = compose_anaglyph(StereoPair(left=same, right=same))
    np.testing.assert_array_equal(out.data, same.data)


def test_side_by_side_and_interlaced():
    pair = _pair()
    sbs = compose_side_by_side(pair)
    assert sbs.data.shape == (4, 12, 3)
    np.testing.assert_array_equal(sbs.data[:, :6], pair.left.data)
    np.testing.assert_array_equal(sbs.data[:, 6:], pair.right.data)

    inter = compose_interlaced(pair)
    np.testing.assert_array_equal(inter.data[0::2], pair.left.data[0::2])
    np.testing.assert_array_equal(inter.data[1::2], pair.right.data[1::2])


def test_pair_views_must_match():
    with pytest.raises(ValueError):
        StereoPair(left=Raster(data=np.zeros((4, 4))), right=Raster(data=np.zeros((4, 5))))
