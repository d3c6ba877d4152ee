import numpy as np
import pytest

from tvic.io import ImageIOError, read_image, write_image


@pytest.mark.parametrize("ext", ["pgm", "png"])
@pytest.mark.parametrize("bits", [8, 16])
def test_round_trip(tmp_path, rng, ext, bits):
    levels = 255 if bits == 8 else 65535
    img = np.rint(rng.random((9, 13)) * levels) / levels
    p = tmp_path / f"a.{ext}"
    write_image(p, img, bits)
    back = read_image(p)
    assert back.shape == (9, 13)
    np.testing.assert_allclose(back, img, atol=1e-12)


def test_clamped_on_save(tmp_path):
    img = np.array([[-0.5, 0.5], [1.5, 1.0]])
    p = tmp_path / "c.png"
    write_image(p, img)
    np.testing.assert_allclose(read_image(p), [[0.0, 128 / 255], [1.0, 1.0]])


def test_pgm_with_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 2\n# max\n255\n" + bytes([0, 51, 255, 102, 204, 153]))
    np.testing.assert_allclose(read_image(p), np.array([[0, 51, 255], [102, 204, 153]]) / 255)


def test_byte_reproducible(tmp_path, rng):
    img = rng.random((16, 16))
    for ext in ("png", "pgm"):
        write_image(tmp_path / f"a.{ext}", img)
        write_image(tmp_path / f"b.{ext}", img)
        assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()


def test_errors(tmp_path):
    with pytest.raises(ImageIOError):
        read_image(tmp_path / "missing.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"hello")
    with pytest.raises(ImageIOError):
        read_image(bad)
    trunc = tmp_path / "t.pgm"
    trunc.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ImageIOError):
        read_image(trunc)
    with pytest.raises(ImageIOError):
        write_image(tmp_path / "x.tif", np.zeros((2, 2)))
    with pytest.raises(ImageIOError):
        write_image(tmp_path / "nodir" / "x.png", np.zeros((2, 2)))
