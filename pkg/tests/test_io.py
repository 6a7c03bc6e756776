import numpy as np
import pytest

from stereolift.engine.errors import IngestionError
from stereolift.imaging.io import (
    depth_visualization,
    read_depth,
    read_image,
    read_mask,
    read_pfm,
    write_depth,
    write_image,
    write_mask,
    write_pfm,
)
from stereolift.imaging.raster import DepthMap, Raster


def test_png_image_quantizes_to_8_bit(tmp_path):
    data = np.random.default_rng(3).random((5, 7, 3))
    path = write_image(tmp_path / "frame.png", Raster(data=data))
    back = read_image(path)
    assert back.shape == (5, 7)
    assert np.abs(back.data - data).max() <= 0.5 / 255 + 1e-9


def test_grayscale_png_reads_as_rgb(tmp_path):
    path = write_image(tmp_path / "gray.png", Raster(data=np.full((3, 3), 0.5)))
    assert read_image(path).channels == 3


def test_pfm_keeps_float32_and_row_order(tmp_path):
    values = np.arange(12, dtype=np.float64).reshape(3, 4) / 7.0
    back = read_pfm(write_pfm(tmp_path / "d.pfm", values))
    np.testing.assert_array_equal(back, values.astype(np.float32))


def test_depth_png_is_millimetres_with_zero_holes(tmp_path):
    values = np.array([[1.2344, 0.0], [3.0, 65.0]])
    pfm, png = write_depth(tmp_path / "depth", DepthMap.from_array(values))
    from_png = read_depth(png)
    from_pfm = read_depth(pfm)
    assert from_png.valid.tolist() == [[True, False], [True, True]]
    np.testing.assert_allclose(from_png.values[0, 0], 1.234, atol=1e-9)
    np.testing.assert_allclose(from_pfm.values, values.astype(np.float32), rtol=1e-6)


def test_missing_image_names_path(tmp_path):
    with pytest.raises(IngestionError) as info:
        read_image(tmp_path / "absent.png")
    assert "absent.png" in str(info.value)


def test_corrupt_depth_names_path(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not a png at all")
    with pytest.raises(IngestionError) as info:
        read_depth(bad)
    assert info.value.path.endswith("broken.png")


def test_truncated_pfm_is_rejected(tmp_path):
    bad = tmp_path / "short.pfm"
    bad.write_bytes(b"Pf\n4 4\n-1.0\n\x00\x00")
    with pytest.raises(IngestionError):
        read_pfm(bad)


def test_mask_round_trip(tmp_path):
    mask = np.zeros((6, 5), dtype=bool)
    mask[2:4, 1:3] = True
    back = read_mask(write_mask(tmp_path / "m.png", mask))
    assert back.shape == (6, 5)
    assert np.array_equal(back, mask)


def test_visualization_blacks_out_holes():
    d = DepthMap.from_array(np.array([[1.0, 80.0, 0.0]]))
    vis = depth_visualization(d)
    assert vis.tolist() == [[0, 255, 0]]
