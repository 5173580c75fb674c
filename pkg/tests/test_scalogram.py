import hashlib

import numpy as np
import pytest

from ismd import scalogram, wavelet


def test_constant_matrix_normalizes_to_zero():
    assert not scalogram.normalize(np.full((4, 5), 3.3)).any()


def test_linear_mode():
    np.testing.assert_allclose(scalogram.normalize(np.array([[0.0, 5.0, 10.0]]), "linear"), [[0, 0.5, 1]])


def test_log_mode():
    v = scalogram.normalize(np.array([[1.0, 10.0, 100.0]]), "log", 1e-12)
    np.testing.assert_allclose(v, [[0, 0.5, 1]], atol=1e-12)


def test_same_shape_resize_is_copy():
    m = np.random.default_rng(0).random((7, 9))
    r = scalogram.resize(m, 7, 9)
    assert np.array_equal(r, m) and r is not m


def test_bilinear_midpoint():
    r = scalogram.resize(np.array([[0.0, 1.0], [0.0, 1.0]]), 2, 3)
    np.testing.assert_array_equal(r[:, 1], [0.5, 0.5])


def bilinear_oracle(m, h, w):
    """Scalar loop; corners of source and target coincide."""
    sh, sw = m.shape
    out = np.empty((h, w))
    for i in range(h):
        y = i * (sh - 1) / (h - 1)
        y0 = min(int(y), sh - 2)
        fy = y - y0
        for j in range(w):
            x = j * (sw - 1) / (w - 1)
            x0 = min(int(x), sw - 2)
            fx = x - x0
            top = m[y0, x0] * (1 - fx) + m[y0, x0 + 1] * fx
            bot = m[y0 + 1, x0] * (1 - fx) + m[y0 + 1, x0 + 1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def test_resize_matches_scalar_oracle():
    m = np.random.default_rng(4).random((50, 300))
    np.testing.assert_allclose(scalogram.resize(m, 224, 224), bilinear_oracle(m, 224, 224), atol=1e-12, rtol=0)


def test_resize_rejects_degenerate_shapes():
    with pytest.raises(ValueError):
        scalogram.resize(np.ones((1, 5)), 3, 3)
    with pytest.raises(ValueError):
        scalogram.resize(np.ones((4, 5)), 0, 3)


def test_grey_endpoints_and_rounding():
    px = scalogram.render(np.array([[0.0, 1.0, 0.5]])).pixels
    assert px.dtype == np.uint8
    assert px.tolist() == [[0, 255, 128]]


def test_render_rejects_out_of_range():
    with pytest.raises(ValueError):
        scalogram.render(np.array([1.2]))
    with pytest.raises(ValueError):
        scalogram.render(np.array([np.nan]))


def test_rgb_lookup_endpoints():
    table = scalogram.load_colormap()
    px = scalogram.render(np.array([[0.0, 1.0]]), "rgb").pixels
    assert px.shape == (1, 2, 3)
    assert px[0, 0].tolist() == table[0].tolist() == [0, 0, 128]
    assert px[0, 1].tolist() == table[-1].tolist() == [128, 0, 0]


def test_colormap_checksum_is_stable():
    from importlib import resources
    raw = resources.files("ismd").joinpath("assets", "jet256.txt").read_bytes()
    assert hashlib.sha256(raw).hexdigest() == scalogram.COLORMAP_SHA256


def _scalogram():
    fs = 1000.0
    t = np.arange(1000) / fs
    x = np.sin(2 * np.pi * 40 * t) * (1 + 0.5 * np.sin(2 * np.pi * 3 * t))
    return wavelet.cwt(x, fs, wavelet.scale_grid(fs, 5.0, 400.0, 32), n_times=200)


def test_png_round_trip(tmp_path):
    img = scalogram.to_image(_scalogram())
    scalogram.write_png(img, tmp_path / "a.png")
    back = scalogram.read_png(tmp_path / "a.png")
    assert back.shape == (224, 224)
    assert np.array_equal(back, img.pixels)


def test_rgb_png_round_trip(tmp_path):
    img = scalogram.to_image(_scalogram(), 64, style="rgb")
    scalogram.write_png(img, tmp_path / "c.png")
    assert np.array_equal(scalogram.read_png(tmp_path / "c.png"), img.pixels)


def test_renders_are_byte_identical(tmp_path):
    sc = _scalogram()
    scalogram.write_png(scalogram.to_image(sc), tmp_path / "a.png")
    scalogram.write_png(scalogram.to_image(sc), tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_low_frequency_row_on_top():
    sc = _scalogram()
    top = scalogram.to_image(sc, (32, 200), low_frequency_top=True).pixels
    bottom = scalogram.to_image(sc, (32, 200), low_frequency_top=False).pixels
    assert np.array_equal(top, bottom[::-1])
    # the 40 Hz ridge sits in the lower-frequency half of the band
    f = sc.frequencies
    ridge = np.argmin(np.abs(np.sort(f) - 40.0))
    assert abs(int(np.argmax(top.mean(axis=1))) - ridge) <= 1


def test_read_png_missing_file(tmp_path):
    with pytest.raises(OSError):
        scalogram.read_png(tmp_path / "none.png")
