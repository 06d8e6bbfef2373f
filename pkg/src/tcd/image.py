"""Pixel-space image buffers, codecs, and the visible-identifier compositor.

Images are immutable 8-bit RGB/RGBA buffers with (0, 0) at the top-left
corner, x growing rightward and y downward. Compositing is deterministic:
float64 blending, half-up rounding, clamp to [0, 255].
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image as _PILImage

from .errors import CompositionError, FormatError, ParameterError

# Probe defaults used when a spec does not override them.
DEFAULT_PROBE_QUESTION = "What is the last captcha number in the image?"
DEFAULT_EXPECTED_ANSWER = "8"
DEFAULT_ALPHA = 0.8
DEFAULT_ANCHOR = (0.9, 0.9)

_MAX_PIXELS = 1 << 28  # refuse absurd headers before allocating

_SHRINK_LIMIT = 32  # iterations before the border-fit loop is declared stuck


@dataclass(frozen=True)
class ImageBuffer:
    """Immutable raster: height x width x channels uint8 array."""

    width: int
    height: int
    channels: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise FormatError(f"image dimensions must be >= 1, got {self.width}x{self.height}")
        if self.channels not in (3, 4):
            raise FormatError(f"channels must be 3 or 4, got {self.channels}")
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.shape != (self.height, self.width, self.channels):
            raise FormatError(
                f"data shape {arr.shape} does not match "
                f"{self.height}x{self.width}x{self.channels}"
            )
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr) -> "ImageBuffer":
        a = np.asarray(arr, dtype=np.uint8)
        if a.ndim != 3:
            raise FormatError(f"expected HxWxC array, got shape {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], channels=a.shape[2], data=a)

    @classmethod
    def filled(cls, width: int, height: int, color) -> "ImageBuffer":
        col = np.asarray(color, dtype=np.uint8)
        a = np.broadcast_to(col, (height, width, col.size)).copy()
        return cls.from_array(a)

    def tobytes(self) -> bytes:
        return self.data.tobytes()


@dataclass(frozen=True)
class WatermarkSpec:
    """Watermark asset plus placement, opacity, and probe metadata.

    anchor is the (x, y) fraction of the base image where the watermark
    center lands; blend "additive" adds alpha * watermark to the base while
    "convex" mixes the two (exposed for sensitivity runs).
    """

    image: ImageBuffer
    alpha: float = DEFAULT_ALPHA
    anchor: tuple[float, float] = DEFAULT_ANCHOR
    scale: float = 1.0
    probe_question: str = DEFAULT_PROBE_QUESTION
    expected_answer: str = DEFAULT_EXPECTED_ANSWER
    blend: str = "additive"

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha!r}")
        fx, fy = self.anchor
        if not (0.0 < fx <= 1.0) or not (0.0 < fy <= 1.0):
            raise ParameterError(f"anchor fractions must be in (0, 1], got {self.anchor!r}")
        if not (self.scale > 0):
            raise ParameterError(f"scale must be positive, got {self.scale!r}")
        if not self.expected_answer:
            raise ParameterError("expected_answer must be non-empty")
        if self.blend not in ("additive", "convex"):
            raise ParameterError(f"blend must be 'additive' or 'convex', got {self.blend!r}")


def resize_nearest(img: ImageBuffer, width: int, height: int) -> ImageBuffer:
    """Nearest-neighbor resample; deterministic on every platform."""
    if width < 1 or height < 1:
        raise ParameterError(f"target size must be >= 1, got {width}x{height}")
    if width == img.width and height == img.height:
        return img
    xs = (np.arange(width, dtype=np.int64) * img.width) // width
    ys = (np.arange(height, dtype=np.int64) * img.height) // height
    return ImageBuffer.from_array(img.data[np.ix_(ys, xs)])


def overlay_geometry(
    base_w: int,
    base_h: int,
    wm_w: int,
    wm_h: int,
    anchor: tuple[float, float] = DEFAULT_ANCHOR,
) -> tuple[int, int, tuple[int, int, int, int], tuple[int, int]]:
    """Resolve the watermark footprint against the base image borders.

    The watermark center is pinned to (floor(fx*W), floor(fy*H)). While the
    centered extent crosses the right or bottom border, the offending
    dimension shrinks to min(d/2, base - d), floored at one pixel. Returns
    the final watermark size, the destination rectangle (x0, y0, x1, y1)
    clipped to the base image, and the unclipped top-left origin.

    Raises CompositionError if the loop cannot settle within 32 iterations
    (the center sits on or past a border, so no size ever fits).
    """
    cx = int(base_w * anchor[0])
    cy = int(base_h * anchor[1])
    w, h = wm_w, wm_h
    for _ in range(_SHRINK_LIMIT):
        over_x = 2 * cx + w > 2 * base_w
        over_y = 2 * cy + h > 2 * base_h
        if not over_x and not over_y:
            break
        if over_x:
            w = max(1, min(w // 2, base_w - w))
        if over_y:
            h = max(1, min(h // 2, base_h - h))
    else:
        raise CompositionError(
            f"watermark cannot fit: center ({cx},{cy}) against {base_w}x{base_h} base"
        )
    x0, y0 = cx - w // 2, cy - h // 2
    x1, y1 = x0 + w, y0 + h
    rect = (max(0, x0), max(0, y0), min(base_w, x1), min(base_h, y1))
    return w, h, rect, (x0, y0)


def embed_watermark(original: ImageBuffer, spec: WatermarkSpec) -> ImageBuffer:
    """Composite the watermark onto the base image.

    Pixels inside the resolved rectangle become
    clamp(round(base + alpha * wm)) per channel ("additive" blend) or the
    convex mix when the spec selects it; every pixel outside the rectangle
    is returned bit-identical to the input.
    """
    wm = spec.image
    fold_wm_alpha = wm.channels == 4 and original.channels == 3
    if not fold_wm_alpha and wm.channels != original.channels:
        raise FormatError(
            f"cannot composite {wm.channels}-channel watermark over "
            f"{original.channels}-channel base"
        )

    sw = max(1, int(round(wm.width * spec.scale)))
    sh = max(1, int(round(wm.height * spec.scale)))
    w, h, rect, origin = overlay_geometry(original.width, original.height, sw, sh, spec.anchor)
    x0, y0, x1, y1 = rect
    scaled = resize_nearest(wm, w, h)

    # Portion of the watermark that survived clipping at the borders.
    sx0, sy0 = x0 - origin[0], y0 - origin[1]
    sub = scaled.data[sy0 : sy0 + (y1 - y0), sx0 : sx0 + (x1 - x0)]

    if fold_wm_alpha:
        a = spec.alpha * (sub[:, :, 3:4].astype(np.float64) / 255.0)
        overlay = sub[:, :, :3].astype(np.float64)
    else:
        a = spec.alpha
        overlay = sub.astype(np.float64)

    base_region = original.data[y0:y1, x0:x1].astype(np.float64)
    if spec.blend == "additive":
        blended = base_region + a * overlay
    else:
        blended = (1.0 - a) * base_region + a * overlay
    out_region = np.clip(np.floor(blended + 0.5), 0.0, 255.0).astype(np.uint8)

    out = original.data.copy()
    out[y0:y1, x0:x1] = out_region
    return ImageBuffer.from_array(out)


def strip_watermark_spec(spec: WatermarkSpec) -> WatermarkSpec:
    """Spec with opacity zero; compositing with it is the identity."""
    return replace(spec, alpha=0.0)


# ---------------------------------------------------------------------------
# Codecs: PNG (via Pillow) and binary PPM (P6, hand-rolled).
# ---------------------------------------------------------------------------


def _load_ppm(raw: bytes) -> ImageBuffer:
    pos = 2  # past the "P6" magic
    fields = []

    def _next_token(pos):
        while pos < len(raw):
            c = raw[pos : pos + 1]
            if c == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        return raw[start:pos], pos

    for _ in range(3):
        tok, pos = _next_token(pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"bad PPM header token {tok!r}") from None
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 PPM supported, got {maxval}")
    if width < 1 or height < 1 or width * height > _MAX_PIXELS:
        raise FormatError(f"unreasonable PPM dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    payload = raw[pos : pos + width * height * 3]
    if len(payload) < width * height * 3:
        raise FormatError("truncated PPM payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return ImageBuffer.from_array(arr)


def _save_ppm(img: ImageBuffer) -> bytes:
    if img.channels != 3:
        raise FormatError("PPM P6 stores RGB only; convert the image first")
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.tobytes()


def load_image(path) -> ImageBuffer:
    """Read a PNG or binary PPM (P6) file into an ImageBuffer."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0:
        raise FormatError(f"truncated file (zero bytes): {path}")
    if raw[:2] == b"P6":
        return _load_ppm(raw)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with _PILImage.open(io.BytesIO(raw)) as im:
                if im.mode not in ("RGB", "RGBA"):
                    im = im.convert("RGBA" if "A" in im.mode or "transparency" in im.info else "RGB")
                if im.width * im.height > _MAX_PIXELS:
                    raise FormatError(f"unreasonable PNG dimensions {im.width}x{im.height}")
                arr = np.asarray(im, dtype=np.uint8)
        except FormatError:
            raise
        except Exception as exc:
            raise FormatError(f"broken PNG file {path}: {exc}") from exc
        return ImageBuffer.from_array(arr)
    raise FormatError(f"unsupported image format in {path} (need PNG or PPM P6)")


def save_image(img: ImageBuffer, path) -> None:
    """Write PNG or binary PPM based on the file extension."""
    name = str(path).lower()
    if name.endswith((".ppm", ".pnm")):
        data = _save_ppm(img)
        with open(path, "wb") as fh:
            fh.write(data)
        return
    if name.endswith(".png"):
        mode = "RGB" if img.channels == 3 else "RGBA"
        _PILImage.fromarray(np.asarray(img.data), mode).save(path, format="PNG")
        return
    raise FormatError(f"unsupported output extension for {path} (use .png or .ppm)")
