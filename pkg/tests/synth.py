"""Synthetic multi-object photographs for detector-driven tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLORS = {
    "red": (230, 25, 25),
    "green": (25, 230, 25),
    "blue": (25, 25, 230),
}


@dataclass(frozen=True)
class Blob:
    color: str
    cx: int
    cy: int
    size: int
    texture: float = 60.0  # checkerboard amplitude, intensity units
    brightness: float = 1.0


def make_photo(blobs: list[Blob], seed: int = 0, side: int = 640,
               background_texture: float = 40.0) -> np.ndarray:
    """Gray textured background with saturated, textured squares on top."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, background_texture, size=(side, side, 1))
    canvas = np.clip(114.0 + noise, 0, 255).repeat(3, axis=2)

    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    checker = ((xx // 8 + yy // 8) % 2).astype(np.float64) * 2.0 - 1.0
    for blob in blobs:
        h = blob.size // 2
        x1, x2 = blob.cx - h, blob.cx + h
        y1, y2 = blob.cy - h, blob.cy + h
        base = np.array(COLORS[blob.color], dtype=np.float64) * blob.brightness
        patch = base[None, None, :] + \
            checker[y1:y2, x1:x2, None] * blob.texture
        canvas[y1:y2, x1:x2] = np.clip(patch, 0, 255)
    return canvas.astype(np.uint8)
