#!/usr/bin/env python3
# Composite a small bright mark onto a base image and inspect the pixels:
# the overlay lands centered on the bottom-right anchor, everything outside
# the resolved rectangle is untouched, and opacity scales the addition.

import tempfile
from pathlib import Path

import numpy as np

from tcd import ImageBuffer, WatermarkSpec, embed_watermark, overlay_geometry, save_image

base = ImageBuffer.from_array(np.full((60, 80, 3), 30, dtype=np.uint8))
mark = ImageBuffer.from_array(np.full((8, 12, 3), 200, dtype=np.uint8))

w, h, rect, _ = overlay_geometry(base.width, base.height, mark.width, mark.height)
print(f"mark lands as {w}x{h} at rectangle {rect} (x0, y0, x1, y1)")

for alpha in (0.0, 0.4, 0.8):
    out = embed_watermark(base, WatermarkSpec(image=mark, alpha=alpha))
    inside = out.data[rect[1], rect[0], 0]
    outside = out.data[0, 0, 0]
    print(f"alpha={alpha}: pixel inside={inside:>3}  outside={outside} (base was 30)")

# An oversized mark shrinks per the border-fit loop instead of overflowing.
big = ImageBuffer.from_array(np.full((50, 90, 3), 255, dtype=np.uint8))
w, h, rect, _ = overlay_geometry(base.width, base.height, big.width, big.height)
print(f"\n90x50 mark on an 80x60 base fits as {w}x{h} at {rect}")

out_dir = Path(tempfile.mkdtemp(prefix="tcd-demo-"))
save_image(embed_watermark(base, WatermarkSpec(image=mark)), out_dir / "composited.png")
save_image(embed_watermark(base, WatermarkSpec(image=mark)), out_dir / "composited.ppm")
print(f"\nwrote {out_dir}/composited.png and .ppm")
