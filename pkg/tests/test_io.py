import json

import numpy as np
import pytest

from conftest import epi_dataset
from reactmc.data import ImageVolume
from reactmc.exceptions import ValidationError
from reactmc.io import load_acquisition, load_image, save_acquisition, save_image, window


def test_acquisition_dump_round_trip(tmp_path):
    ds = epi_dataset(32, 4, coils=3)
    side = save_acquisition(ds.acq, tmp_path, seed={"phantom": 3})
    meta = json.loads(side.read_text())
    assert meta["dims"] == [1, 32, 32] and meta["n_coils"] == 3 and meta["dtype"] == "float32"
    assert meta["segment_boundaries"] == list(np.cumsum([0] + [s.n_samples for s in ds.acq.segments]))
    back = load_acquisition(tmp_path)
    assert back.n_segments == 4 and back.matrix == ds.acq.matrix
    for a, b in zip(ds.acq.segments, back.segments):
        np.testing.assert_array_equal(b.k, a.k.astype(np.float32))
        np.testing.assert_allclose(b.data, a.data, rtol=1e-6, atol=1e-6 * np.abs(a.data).max())


def test_acquisition_dump_errors(tmp_path):
    with pytest.raises(ValidationError):
        load_acquisition(tmp_path)
    ds = epi_dataset(32, 4, coils=2)
    save_acquisition(ds.acq, tmp_path)
    (tmp_path / "acquisition_k.f32").write_bytes(b"\0" * 12)
    with pytest.raises(ValidationError, match="expected"):
        load_acquisition(tmp_path)


def test_image_round_trip_and_png(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(0)
    data = rng.random((1, 12, 10))
    save_image(ImageVolume(data, (1.0, 0.5, 0.5)), tmp_path / "img", extra={"note": 1})
    back = load_image(tmp_path / "img.f32")
    np.testing.assert_array_equal(back.data, data.astype(np.float32))
    assert back.spacing == (1.0, 0.5, 0.5)
    side = json.loads((tmp_path / "img.json").read_text())
    assert side["note"] == 1 and side["png_percentile"] == 99.5
    png = np.asarray(Image.open(tmp_path / "img.png"))
    assert png.shape == (12, 10) and png.dtype == np.uint8


def test_window_maps_percentile_to_white():
    data = np.linspace(0, 1, 1001)
    img, (lo, hi) = window(data, 99.5)
    assert lo == 0.0 and hi == pytest.approx(np.percentile(data, 99.5))
    assert img.max() == 255 and img[0] == 0
    flat, _ = window(np.zeros(5))
    assert not flat.any()


def test_load_image_missing(tmp_path):
    with pytest.raises(ValidationError):
        load_image(tmp_path / "none")
