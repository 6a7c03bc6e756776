import csv

import numpy as np
import pytest
from skimage.transform import ProjectiveTransform, warp

from stereolift.harness import psnr
from stereolift.imaging.raster import DepthMap, FlowField, Raster
from stereolift.models import MotionConfig
from stereolift.motion import (
    Homography,
    HomographyEstimate,
    contact_depth,
    equalize_to_darkest,
    estimate_homographies,
    fit_homography_ransac,
    median_background,
    motion_masks,
    motion_statistic,
    segment_clip,
    stabilize,
    unwarp_plane,
    write_homographies_csv,
)

from .conftest import smooth_texture

PLANTED = np.array([
    [1.02, 0.01, 3.0],
    [-0.01, 0.98, -2.0],
    [1e-4, 5e-5, 1.0],
])


def _gray(value, shape=(4, 4)):
    return Raster(data=np.full(shape, float(value)))


def _rotated_view(scene, degrees, shape):
    """Crop of ``scene`` seen by a camera rolled by ``degrees`` about the view centre; also returns the view→scene map."""
    h, w = shape
    th = np.deg2rad(degrees)
    rotation = np.array([[np.cos(th), -np.sin(th), 0.0], [np.sin(th), np.cos(th), 0.0], [0.0, 0.0, 1.0]])
    to_centre = np.array([[1.0, 0.0, -(w - 1) / 2], [0.0, 1.0, -(h - 1) / 2], [0.0, 0.0, 1.0]])
    to_scene = np.array([[1.0, 0.0, (scene.shape[1] - 1) / 2], [0.0, 1.0, (scene.shape[0] - 1) / 2], [0.0, 0.0, 1.0]])
    view_to_scene = to_scene @ rotation @ to_centre
    view = warp(scene, ProjectiveTransform(matrix=view_to_scene), output_shape=shape, order=1, preserve_range=True)
    return view, view_to_scene


def _rgb(plane):
    return Raster(data=np.stack([plane] * 3, axis=2))


def _iou(mask, truth):
    return (mask & truth).sum() / max((mask | truth).sum(), 1)


class TestHomography:
    def test_normalizes_scale(self):
        h = Homography(matrix=2 * np.eye(3))
        np.testing.assert_allclose(h.matrix, np.eye(3))

    def test_rejects_singular(self):
        with pytest.raises(ValueError):
            Homography(matrix=np.zeros((3, 3)))

    def test_inverse_round_trips_points(self):
        h = Homography(matrix=PLANTED)
        pts = np.array([[0.0, 0.0], [50.0, 20.0], [10.0, 90.0]])
        np.testing.assert_allclose(h.inverse().apply(h.apply(pts)), pts, atol=1e-9)


class TestEqualize:
    def test_identical_and_single_frames_unchanged(self):
        f = Raster(data=smooth_texture(16, 16))
        assert equalize_to_darkest([f])[0] is f
        out = equalize_to_darkest([f, f])
        assert all(o is f for o in out)

    def test_brightness_offset_is_removed(self):
        base = smooth_texture(32, 32, lo=0.2, hi=0.5)
        dark = Raster(data=np.stack([base] * 3, axis=2))
        bright = Raster(data=dark.data + 0.2)
        out = equalize_to_darkest([bright, dark])
        assert out[1] is dark
        np.testing.assert_allclose(np.sort(out[0].data.ravel()), np.sort(dark.data.ravel()), atol=1 / 255)


class TestHomographyEstimation:
    def test_ransac_recovers_planted_transform_with_outliers(self):
        rng = np.random.default_rng(0)
        src = rng.uniform(0, 100, size=(80, 2))
        dst = Homography(matrix=PLANTED).apply(src)
        dst[40:] = rng.uniform(0, 100, size=(40, 2))
        est = fit_homography_ransac(src, dst, MotionConfig(seed=1))
        assert est.confident
        assert est.inliers >= 40
        corners = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0]])
        err = np.linalg.norm(est.homography.apply(corners) - Homography(matrix=PLANTED).apply(corners), axis=1)
        assert err.max() <= 0.5

    def test_too_few_points_flagged(self):
        est = fit_homography_ransac(np.zeros((3, 2)), np.zeros((3, 2)))
        assert not est.confident
        np.testing.assert_allclose(est.homography.matrix, np.eye(3))

    def test_identical_frames_get_identity(self):
        f = Raster(data=smooth_texture(48, 48))
        for est in estimate_homographies([f, f, f]):
            assert np.abs(est.homography.matrix - np.eye(3)).max() <= 1e-3

    def test_textureless_frames_fall_back(self):
        ests = estimate_homographies([_gray(0.3, (32, 32)), _gray(0.5, (32, 32))])
        assert not ests[0].confident
        np.testing.assert_allclose(ests[0].homography.matrix, np.eye(3))

    def test_recovers_planted_roll_on_textured_frames(self):
        scene = smooth_texture(176, 176, seed=5)
        views = [_rotated_view(scene, degrees, (96, 128)) for degrees in (-2.0, 0.0, 2.0)]
        ests = estimate_homographies([_rgb(v) for v, _ in views], MotionConfig(seed=0))

        ref_to_scene = views[1][1]
        yy, xx = np.mgrid[8:88:4, 8:120:4]
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(float)
        for est, (_, view_to_scene) in zip(ests, views):
            assert est.confident
            planted = Homography(matrix=np.linalg.inv(ref_to_scene) @ view_to_scene)
            err = np.linalg.norm(est.homography.apply(pts) - planted.apply(pts), axis=1)
            assert err.max() <= 0.5


class TestStabilize:
    def test_unwarp_inverts_stabilization(self):
        h = Homography(matrix=np.array([
            [np.cos(0.05), -np.sin(0.05), 2.5],
            [np.sin(0.05), np.cos(0.05), -1.5],
            [0.0, 0.0, 1.0],
        ]))
        frame = Raster(data=np.stack([smooth_texture(64, 80, s) for s in (1, 2, 3)], axis=2))
        (stable,), (covered,) = stabilize([frame], [h])
        assert covered.mean() > 0.75

        back = np.stack([unwarp_plane(stable.data[..., c], h) for c in range(3)], axis=2)
        inner = (slice(12, -12), slice(12, -12))
        assert psnr(Raster(data=back[inner]), Raster(data=frame.data[inner])) >= 35.0


class TestBackground:
    def test_static_clip(self):
        f = Raster(data=smooth_texture(8, 8))
        bg, valid = median_background([f, f, f])
        np.testing.assert_allclose(bg.data, f.data)
        assert valid.all()

    def test_transient_object_is_removed(self):
        frames = [_gray(0.4) for _ in range(5)]
        occluded = frames[1].data.copy()
        occluded[1, 1] = 0.9
        frames[1] = Raster(data=occluded)
        frames[3] = Raster(data=occluded)
        bg, _ = median_background(frames)
        assert bg.data[1, 1, 0] == pytest.approx(0.4)

    def test_two_frames_average(self):
        bg, _ = median_background([_gray(0.2), _gray(0.6)])
        np.testing.assert_allclose(bg.data, 0.4)

    def test_uncovered_pixels_invalid(self):
        cov = np.ones((4, 4), dtype=bool)
        cov[0, 0] = False
        _, valid = median_background([_gray(0.2), _gray(0.6)], [cov, cov])
        assert not valid[0, 0] and valid[1, 1]


class TestMotionStatistic:
    def test_threshold_crossing(self):
        stat = motion_statistic(_gray(0.6), _gray(0.5), np.ones((4, 4)))
        np.testing.assert_allclose(stat, 0.02)
        mask = motion_masks([_gray(0.6)], _gray(0.5), [FlowField(u=np.ones((4, 4)), v=np.zeros((4, 4)))],
                            cfg=MotionConfig(open_radius=0))[0]
        assert mask.all()

    def test_zero_flow_gates_the_statistic(self):
        assert not motion_statistic(_gray(0.6), _gray(0.5), np.zeros((4, 4))).any()


class TestSegmentClip:
    def test_static_clip_has_no_motion(self):
        f = Raster(data=smooth_texture(40, 48))
        result = segment_clip([f] * 4)
        assert np.mean([m.mean() for m in result.masks]) <= 0.01
        assert result.reference == 2

    def test_single_frame_is_empty(self):
        result = segment_clip([Raster(data=smooth_texture(20, 20))])
        assert not result.masks[0].any()

    def test_moving_square_under_rolling_camera(self):
        h, w, side, step = 96, 128, 16, 8
        scene = smooth_texture(176, 176, seed=11, lo=0.3, hi=0.5)
        frames, truth = [], []
        for t in range(9):
            img, _ = _rotated_view(scene, t - 4.0, (h, w))
            x0 = 12 + step * t
            img[40:40 + side, x0:x0 + side] = 0.95
            gt = np.zeros((h, w), dtype=bool)
            gt[40:40 + side, x0:x0 + side] = True
            frames.append(_rgb(img))
            truth.append(gt)

        result = segment_clip(frames, MotionConfig(seed=0))
        assert all(e.confident for i, e in enumerate(result.homographies) if i != result.reference)
        ious = [_iou(m, g) for m, g in zip(result.masks, truth)]
        assert min(ious) >= 0.9


class TestContactDepth:
    def test_constant_ground(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[5:11, 5:11] = True
        (out,) = contact_depth([mask], [DepthMap.from_array(np.full((20, 20), 5.0))])
        np.testing.assert_allclose(out.values[mask], 5.0)
        assert np.array_equal(out.mask, mask)

    def test_bottom_edge_uses_own_row(self):
        values = np.full((12, 12), 9.0)
        values[-1, 2:8] = np.arange(1.0, 7.0)
        mask = np.zeros((12, 12), dtype=bool)
        mask[6:, 2:8] = True
        (out,) = contact_depth([mask], [DepthMap.from_array(values)])
        np.testing.assert_allclose(out.values[mask], 3.5)

    def test_components_get_their_own_ground(self):
        values = np.full((20, 30), 1.0)
        values[12:, :15] = 3.0
        values[12:, 15:] = 7.0
        mask = np.zeros((20, 30), dtype=bool)
        mask[4:12, 2:10] = True
        mask[4:12, 18:26] = True
        (out,) = contact_depth([mask], [DepthMap.from_array(values)])
        assert out.values[6, 5] == pytest.approx(3.0)
        assert out.values[6, 20] == pytest.approx(7.0)

    def test_small_components_dropped(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[2:4, 2:4] = True
        (out,) = contact_depth([mask], [DepthMap.from_array(np.full((10, 10), 2.0))])
        assert not out.mask.any()


def test_homography_csv(tmp_path):
    ests = [HomographyEstimate(homography=Homography.identity()), HomographyEstimate(homography=Homography(matrix=PLANTED), confident=False)]
    rows = list(csv.reader(write_homographies_csv(tmp_path / "h.csv", ests).open()))
    assert rows[0][:2] == ["frame", "h11"] and rows[0][-1] == "confident"
    assert rows[1][1] == "1" and rows[2][-1] == "0"
    assert float(rows[2][3]) == pytest.approx(3.0)
