"""Image file helpers: ASCII PPM (P3) and PNG via Pillow.

PPM is kept dependency-free and diff-friendly; PNG writing goes through
Pillow with no metadata so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def to_uint(img: np.ndarray, maxval: int) -> np.ndarray:
    """Quantize a [0, 1] float image to integers in [0, maxval]."""
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    return q.astype(np.uint16 if maxval > 255 else np.uint8)


def write_ppm(path, img: np.ndarray, maxval: int = 255) -> None:
    """Write an (H, W, 3) float image in [0, 1] as ASCII PPM (P3)."""
    q = to_uint(img, maxval).astype(np.int64)
    h, w, _ = q.shape
    lines = [f"P3\n{w} {h}\n{maxval}\n"]
    flat = q.reshape(-1, 3)
    lines.extend(f"{r} {g} {b}\n" for r, g, b in flat)
    with open(path, "w") as f:
        f.writelines(lines)


def read_ppm(path) -> np.ndarray:
    """Read an ASCII PPM (P3) back to an (H, W, 3) float image in [0, 1]."""
    with open(path) as f:
        tokens = []
        for line in f:
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
    if tokens[0] != "P3":
        raise ValueError(f"not an ASCII PPM file: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array(tokens[4 : 4 + 3 * w * h], dtype=np.float64)
    return data.reshape(h, w, 3) / maxval


def write_png(path, img: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit PNG."""
    Image.fromarray(to_uint(img, 255), mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_depth_png(path, depth: np.ndarray, depth_max: float) -> None:
    """Write a depth map as 16-bit grayscale PNG, scaled by ``depth_max``."""
    q = np.rint(np.clip(depth / depth_max, 0.0, 1.0) * 65535).astype(np.uint16)
    Image.fromarray(q, mode="I;16").save(path)
