import numpy as np
import pytest

from stereolift.engine.errors import DataError, DimensionMismatchError
from stereolift.features import (
    FlowBlockFeatures,
    GistDescriptor,
    clip_flows,
    compute_dense_descriptors,
    compute_flow_features,
    compute_gist,
    compute_optical_flow,
    matching_score,
)
from stereolift.imaging.raster import FlowField, Raster


def _shifted(r: Raster, dx: int) -> Raster:
    return Raster(data=np.roll(r.data, dx, axis=1))


class TestGist:
    def test_layout_and_identity(self, textured_raster):
        img = textured_raster()
        g1, g2 = compute_gist(img), compute_gist(img)
        assert g1.dim == 4 * 8 * 16
        assert np.array_equal(g1.values, g2.values)

    def test_constant_image_has_no_energy(self):
        g = compute_gist(Raster(data=np.full((32, 32, 3), 0.4)))
        assert g.values.max() <= 1e-6

    def test_small_shift_is_closer_than_noise(self, textured_raster):
        img = textured_raster(64, 64)
        noise = Raster(data=np.random.default_rng(9).random((64, 64, 3)))
        g = compute_gist(img)
        near = np.linalg.norm(g.values - compute_gist(_shifted(img, 2)).values)
        far = np.linalg.norm(g.values - compute_gist(noise).values)
        assert near < far

    def test_tiny_image_rejected(self):
        with pytest.raises(DataError):
            compute_gist(Raster(data=np.zeros((4, 4))))


class TestOpticalFlow:
    def test_identical_frames_have_zero_flow(self, textured_raster):
        img = textured_raster()
        f = compute_optical_flow(img, img)
        assert np.abs(f.u).max() <= 1e-3 and np.abs(f.v).max() <= 1e-3

    def test_recovers_planted_horizontal_shift(self, textured_raster):
        a = textured_raster(64, 64, seed=2)
        f = compute_optical_flow(a, _shifted(a, 2))
        assert 1.75 <= np.median(f.u) <= 2.25
        assert -0.25 <= np.median(f.v) <= 0.25

    def test_last_frame_gets_identity_warp(self, textured_raster):
        frames = [textured_raster(seed=s) for s in range(3)]
        flows = clip_flows(frames)
        assert len(flows) == 3
        assert not flows[-1].magnitude().any()

    def test_size_mismatch(self, textured_raster):
        with pytest.raises(DimensionMismatchError):
            compute_optical_flow(textured_raster(32, 32), textured_raster(32, 40))


class TestFlowFeatures:
    def test_zero_flow(self):
        feats = compute_flow_features(FlowField.zeros(16, 16), 4)
        assert feats.values.shape == (128,)
        assert not feats.values.any()

    def test_constant_flow_block_moments(self):
        f = FlowField(u=np.ones((8, 8)), v=np.zeros((8, 8)))
        feats = compute_flow_features(f, 4).values.reshape(16, 8)
        np.testing.assert_allclose(feats, np.tile([1, 0, 0, 0, 1, 0, 0, 0], (16, 1)))

    def test_single_frame_matches_zero_flow(self, textured_raster):
        (flow,) = clip_flows([textured_raster()])
        assert np.array_equal(compute_flow_features(flow).values, np.zeros(128))

    def test_field_smaller_than_grid(self):
        with pytest.raises(DataError):
            compute_flow_features(FlowField.zeros(3, 3), 4)


class TestDenseDescriptors:
    def test_constant_image_takes_zero_guard(self):
        d = compute_dense_descriptors(Raster(data=np.full((20, 20, 3), 0.3)))
        assert d.dim == 128
        assert not d.data.any()

    def test_unit_norm_where_textured(self, textured_raster):
        d = compute_dense_descriptors(textured_raster())
        norms = np.linalg.norm(d.data, axis=2)
        np.testing.assert_allclose(norms[norms > 0], 1.0, atol=1e-9)

    def test_translation_moves_descriptors(self, textured_raster):
        a = textured_raster(48, 64, seed=4)
        da = compute_dense_descriptors(a).data
        db = compute_dense_descriptors(_shifted(a, 3)).data
        margin = 16
        interior_a = da[margin:-margin, margin:-margin - 3]
        interior_b = db[margin:-margin, margin + 3:-margin]
        dist = np.linalg.norm(interior_a - interior_b, axis=2)
        assert dist.max() <= 0.05

    def test_image_below_support(self):
        with pytest.raises(DataError):
            compute_dense_descriptors(Raster(data=np.zeros((10, 30))))


class TestMatchingScore:
    def _pair(self):
        g1 = GistDescriptor(values=np.zeros(4))
        g2 = GistDescriptor(values=np.array([2.0, 0, 0, 0]))
        f1 = FlowBlockFeatures(values=np.zeros(8), b=1)
        f2 = FlowBlockFeatures(values=np.array([4.0, 0, 0, 0, 0, 0, 0, 0]), b=1)
        return g1, f1, g2, f2

    def test_identical_pairs_score_zero(self):
        g1, f1, _, _ = self._pair()
        assert matching_score(g1, f1, g1, f1) == 0.0

    def test_weighted_sum(self):
        assert matching_score(*self._pair(), omega=0.5) == pytest.approx(3.0)

    def test_omega_zero_is_gist_distance(self):
        assert matching_score(*self._pair(), omega=0.0) == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        g1, f1, _, f2 = self._pair()
        with pytest.raises(DimensionMismatchError):
            matching_score(g1, f1, GistDescriptor(values=np.zeros(5)), f2)

    def test_omega_out_of_range(self):
        with pytest.raises(ValueError):
            matching_score(*self._pair(), omega=1.5)
