"""Deterministic built-in stylizers.

A stylizer is any callable mapping an H x W x 3 [0, 1] array to another array
of the same shape, deterministically. The neural feed-forward stylizers used
to build full-scale datasets are pluggable inputs; the built-ins below are
fast stand-ins with visually distinct statistics so pipelines and tests can
run self-contained.
"""

import numpy as np
from scipy import ndimage

from .images import rgb_to_luma


class PosterizeSketch:
    """Posterized tones with darkened edges; reads as a rough sketch."""

    style_id = "sketch"

    def __init__(self, levels: int = 4, edge_strength: float = 0.8):
        self.levels = levels
        self.edge_strength = edge_strength

    def __call__(self, image: np.ndarray) -> np.ndarray:
        q = np.floor(image * self.levels) / (self.levels - 1)
        q = np.clip(q, 0.0, 1.0)
        luma = rgb_to_luma(image)
        gx = ndimage.sobel(luma, axis=1, mode="nearest")
        gy = ndimage.sobel(luma, axis=0, mode="nearest")
        edges = np.clip(np.hypot(gx, gy), 0.0, 1.0)
        out = q * (1.0 - self.edge_strength * edges[..., None])
        return np.clip(out, 0.0, 1.0)


class ColorMapCandy:
    """Remaps luma through a saturated sinusoidal palette."""

    style_id = "candy"

    def __init__(self, blend: float = 0.6):
        self.blend = blend

    def __call__(self, image: np.ndarray) -> np.ndarray:
        t = rgb_to_luma(image)
        palette = np.stack(
            [
                0.5 + 0.5 * np.sin(2.0 * np.pi * (t + 0.00)),
                0.5 + 0.5 * np.sin(2.0 * np.pi * (t + 0.33)),
                0.5 + 0.5 * np.sin(2.0 * np.pi * (t + 0.67)),
            ],
            axis=-1,
        )
        out = self.blend * palette + (1.0 - self.blend) * image
        return np.clip(out, 0.0, 1.0)


class BlockMosaic:
    """Averages over square tiles; a crude mosaic."""

    style_id = "mosaic"

    def __init__(self, block: int = 4):
        self.block = block

    def __call__(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        b = self.block
        out = image.copy()
        for y0 in range(0, h, b):
            for x0 in range(0, w, b):
                tile = image[y0:y0 + b, x0:x0 + b]
                out[y0:y0 + b, x0:x0 + b] = tile.mean(axis=(0, 1))
        return np.clip(out, 0.0, 1.0)


def built_in_stylizers() -> list:
    """The three bundled stylizers, in their canonical order."""
    return [PosterizeSketch(), ColorMapCandy(), BlockMosaic()]


def stylizer_by_id(style_id: str):
    for s in built_in_stylizers():
        if s.style_id == style_id:
            return s
    raise KeyError(f"unknown built-in stylizer {style_id!r}")
