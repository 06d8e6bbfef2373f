import struct
import zlib

import numpy as np
import pytest

from tcd.errors import CompositionError, FormatError, ParameterError
from tcd.image import (
    ImageBuffer,
    WatermarkSpec,
    embed_watermark,
    load_image,
    overlay_geometry,
    resize_nearest,
    save_image,
)


def flat(width, height, value, channels=3):
    return ImageBuffer.from_array(np.full((height, width, channels), value, dtype=np.uint8))


def make_png_bytes(pixels):
    """Hand-assembled PNG (independent of the Pillow load path).

    pixels: HxWx3 uint8 array. 8-bit truecolor, no interlace, one IDAT.
    """
    arr = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = arr.shape

    def chunk(tag, payload):
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload))
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + arr[y].tobytes() for y in range(h))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


class TestImageBuffer:
    def test_shape_validation(self):
        with pytest.raises(FormatError):
            ImageBuffer(width=2, height=2, channels=3, data=np.zeros((2, 2, 4), dtype=np.uint8))
        with pytest.raises(FormatError):
            ImageBuffer(width=0, height=2, channels=3, data=np.zeros((2, 0, 3), dtype=np.uint8))

    def test_immutable(self):
        img = flat(2, 2, 7)
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1


class TestCodecs:
    def test_ppm_roundtrip_bitexact(self, tmp_path, rng):
        img = ImageBuffer.from_array(rng.integers(0, 256, size=(2, 2, 3), dtype=np.uint8))
        path = tmp_path / "two.ppm"
        save_image(img, path)
        back = load_image(path)
        assert back.tobytes() == img.tobytes()
        assert (back.width, back.height, back.channels) == (2, 2, 3)

    def test_png_roundtrip_bitexact(self, tmp_path, rng):
        img = ImageBuffer.from_array(rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8))
        path = tmp_path / "img.png"
        save_image(img, path)
        back = load_image(path)
        assert back.tobytes() == img.tobytes()

    def test_png_rgba_roundtrip(self, tmp_path, rng):
        img = ImageBuffer.from_array(rng.integers(0, 256, size=(4, 6, 4), dtype=np.uint8))
        path = tmp_path / "img.png"
        save_image(img, path)
        assert load_image(path).tobytes() == img.tobytes()

    def test_png_corner_fixture(self, tmp_path):
        # Fixture bytes assembled by hand (struct + zlib), not by the codec
        # under test; the four corner colors are the oracle.
        px = np.zeros((5, 4, 3), dtype=np.uint8)
        px[0, 0] = (255, 0, 0)
        px[0, 3] = (0, 255, 0)
        px[4, 0] = (0, 0, 255)
        px[4, 3] = (250, 251, 252)
        path = tmp_path / "corners.png"
        path.write_bytes(make_png_bytes(px))
        img = load_image(path)
        assert tuple(img.data[0, 0]) == (255, 0, 0)
        assert tuple(img.data[0, 3]) == (0, 255, 0)
        assert tuple(img.data[4, 0]) == (0, 0, 255)
        assert tuple(img.data[4, 3]) == (250, 251, 252)

    def test_zero_byte_file(self, tmp_path):
        path = tmp_path / "empty.ppm"
        path.write_bytes(b"")
        with pytest.raises(FormatError, match="truncated"):
            load_image(path)

    def test_truncated_ppm_payload(self, tmp_path):
        path = tmp_path / "trunc.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + b"\x00" * 10)
        with pytest.raises(FormatError, match="truncated"):
            load_image(path)

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "noise.bin"
        path.write_bytes(b"GIF89a whatever")
        with pytest.raises(FormatError, match="unsupported"):
            load_image(path)

    def test_broken_png(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"\x89PNG\r\n\x1a\n" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_image(path)

    def test_dimension_overflow_header(self, tmp_path):
        path = tmp_path / "huge.ppm"
        path.write_bytes(b"P6\n100000 100000\n255\n")
        with pytest.raises(FormatError, match="unreasonable"):
            load_image(path)

    def test_ppm_comment_header(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n1 1\n255\n\x01\x02\x03")
        img = load_image(path)
        assert tuple(img.data[0, 0]) == (1, 2, 3)


class TestOverlayGeometry:
    def test_fits_without_shrink(self):
        w, h, rect, origin = overlay_geometry(100, 100, 10, 10)
        assert (w, h) == (10, 10)
        assert rect == (85, 85, 95, 95)
        assert origin == (85, 85)

    def test_shrinks_overhanging_dimension(self):
        # Center (90, 90); a 40-wide mark overhangs: 90 + 20 > 100.
        w, h, rect, _ = overlay_geometry(100, 100, 40, 10)
        assert w == 20 and h == 10
        assert rect[2] <= 100 and rect[3] <= 100

    def test_halving_repeats_until_fit(self):
        # d=60 on a 100-wide base: 60 -> min(30, 40) = 30 (still overhangs
        # at center 90) -> min(15, 70) = 15, which fits.
        w, _, _, _ = overlay_geometry(100, 100, 60, 10)
        assert w == 15

    def test_shrink_uses_remaining_border_budget(self):
        # When base - d < d/2 the border budget wins: d=90 on a 100-wide
        # base gives min(45, 10) = 10.
        w, _, _, _ = overlay_geometry(100, 100, 90, 10)
        assert w == 10

    def test_anchor_on_border_cannot_settle(self):
        with pytest.raises(CompositionError):
            overlay_geometry(50, 50, 10, 10, anchor=(1.0, 1.0))

    def test_oversized_mark_shrinks_to_floor(self):
        w, h, rect, _ = overlay_geometry(4, 4, 300, 300, anchor=(0.9, 0.9))
        assert (w, h) == (1, 1)
        assert rect == (3, 3, 4, 4)


class TestEmbedWatermark:
    def test_golden_hand_pixel_oracle(self):
        # 100x100 black base, 10x10 constant-100 mark, alpha 0.8: the
        # centered rectangle [85, 95) in both axes becomes 80, rest stays 0.
        base = flat(100, 100, 0)
        spec = WatermarkSpec(image=flat(10, 10, 100), alpha=0.8)
        out = embed_watermark(base, spec)
        expected = np.zeros((100, 100, 3), dtype=np.uint8)
        expected[85:95, 85:95, :] = 80
        assert out.tobytes() == expected.tobytes()

    def test_zero_alpha_identity(self, rng):
        for _ in range(10):
            base = ImageBuffer.from_array(rng.integers(0, 256, size=(23, 31, 3), dtype=np.uint8))
            mark = ImageBuffer.from_array(rng.integers(0, 256, size=(6, 9, 3), dtype=np.uint8))
            out = embed_watermark(base, WatermarkSpec(image=mark, alpha=0.0))
            assert out.tobytes() == base.tobytes()

    def test_locality_outside_rectangle(self, rng):
        for _ in range(50):
            bw, bh = int(rng.integers(8, 64)), int(rng.integers(8, 64))
            ww, wh = int(rng.integers(1, 20)), int(rng.integers(1, 20))
            anchor = (float(rng.uniform(0.2, 0.99)), float(rng.uniform(0.2, 0.99)))
            base = ImageBuffer.from_array(rng.integers(0, 256, size=(bh, bw, 3), dtype=np.uint8))
            mark = ImageBuffer.from_array(rng.integers(0, 256, size=(wh, ww, 3), dtype=np.uint8))
            spec = WatermarkSpec(image=mark, alpha=0.9, anchor=anchor)
            out = embed_watermark(base, spec)
            _, _, (x0, y0, x1, y1), _ = overlay_geometry(bw, bh, ww, wh, anchor)
            masked_out = np.array(out.data, copy=True)
            masked_in = np.array(base.data, copy=True)
            masked_out[y0:y1, x0:x1] = 0
            masked_in[y0:y1, x0:x1] = 0
            assert masked_out.tobytes() == masked_in.tobytes()

    def test_additive_blend_clamps(self):
        base = flat(20, 20, 200)
        out = embed_watermark(base, WatermarkSpec(image=flat(4, 4, 255), alpha=1.0))
        assert out.data.max() == 255

    def test_monotone_in_alpha(self):
        base = flat(30, 30, 10)
        mark = flat(5, 5, 255)
        previous = None
        for alpha in (0.0, 0.2, 0.5, 0.8, 1.0):
            out = embed_watermark(base, WatermarkSpec(image=mark, alpha=alpha))
            region = out.data[
                overlay_geometry(30, 30, 5, 5)[2][1] : overlay_geometry(30, 30, 5, 5)[2][3]
            ]
            if previous is not None:
                assert np.all(out.data.astype(int) >= previous.astype(int))
            previous = np.array(out.data)

    def test_deterministic(self, rng):
        base = ImageBuffer.from_array(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
        mark = ImageBuffer.from_array(rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8))
        spec = WatermarkSpec(image=mark, alpha=0.8)
        assert embed_watermark(base, spec).tobytes() == embed_watermark(base, spec).tobytes()

    def test_rgba_mark_over_rgb_base(self):
        mark_px = np.zeros((2, 2, 4), dtype=np.uint8)
        mark_px[..., :3] = 100
        mark_px[0, 0, 3] = 255  # fully opaque corner
        mark_px[1, 1, 3] = 0  # fully transparent corner
        base = flat(40, 40, 0)
        spec = WatermarkSpec(image=ImageBuffer.from_array(mark_px), alpha=0.5)
        out = embed_watermark(base, spec)
        _, _, (x0, y0, _, _), _ = overlay_geometry(40, 40, 2, 2)
        assert tuple(out.data[y0, x0]) == (50, 50, 50)
        assert tuple(out.data[y0 + 1, x0 + 1]) == (0, 0, 0)

    def test_rgb_mark_over_rgba_base_rejected(self):
        base = flat(20, 20, 0, channels=4)
        with pytest.raises(FormatError):
            embed_watermark(base, WatermarkSpec(image=flat(2, 2, 5), alpha=0.5))

    def test_convex_blend_mode(self):
        base = flat(20, 20, 100)
        spec = WatermarkSpec(image=flat(4, 4, 200), alpha=0.5, blend="convex")
        out = embed_watermark(base, spec)
        _, _, (x0, y0, _, _), _ = overlay_geometry(20, 20, 4, 4)
        assert tuple(out.data[y0, x0]) == (150, 150, 150)

    def test_scale_applies_before_fit(self):
        base = flat(100, 100, 0)
        spec = WatermarkSpec(image=flat(10, 10, 100), alpha=1.0, scale=2.0)
        out = embed_watermark(base, spec)
        changed = np.argwhere(out.data[:, :, 0] > 0)
        ys, xs = changed[:, 0], changed[:, 1]
        assert xs.max() - xs.min() + 1 == 20
        assert ys.max() - ys.min() + 1 == 20

    def test_shipped_defaults(self):
        spec = WatermarkSpec(image=flat(2, 2, 1))
        assert spec.alpha == 0.8
        assert spec.anchor == (0.9, 0.9)
        assert spec.scale == 1.0
        assert spec.blend == "additive"
        assert spec.probe_question == "What is the last captcha number in the image?"
        assert spec.expected_answer == "8"

    def test_spec_validation(self):
        mark = flat(2, 2, 1)
        with pytest.raises(ParameterError):
            WatermarkSpec(image=mark, alpha=1.5)
        with pytest.raises(ParameterError):
            WatermarkSpec(image=mark, anchor=(0.0, 0.5))
        with pytest.raises(ParameterError):
            WatermarkSpec(image=mark, scale=0.0)
        with pytest.raises(ParameterError):
            WatermarkSpec(image=mark, expected_answer="")


class TestResize:
    def test_identity(self):
        img = flat(3, 3, 9)
        assert resize_nearest(img, 3, 3) is img

    def test_downsample_picks_nearest(self):
        px = np.arange(16, dtype=np.uint8).reshape(4, 4, 1)
        img = ImageBuffer.from_array(np.repeat(px, 3, axis=2))
        small = resize_nearest(img, 2, 2)
        assert small.data[0, 0, 0] == 0
        assert small.data[1, 1, 0] == 10
