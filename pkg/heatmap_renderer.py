#!/usr/bin/env python3
"""
Heatmap Renderer

Draws per-sample normalised attributions as red-white-blue heatmaps:
-1 is pure red, 0 is white, +1 is pure blue, linear in between. The raw
sample is drawn in grayscale next to it. Output is a binary portable
pixmap (P6) written through Pillow.
"""

from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from errors import DataIOError

DEFAULT_SCALE = 16
PANEL_GAP = 1  # gap between heatmap and sample, in source pixels
WHITE = (255, 255, 255)


def score_to_rgb(value: float) -> Tuple[int, int, int]:
    """Colour for one normalised score in [-1, 1]."""
    value = float(np.clip(value, -1.0, 1.0))
    if value < 0.0:
        fade = int(round(255 * (1.0 + value)))
        return (255, fade, fade)
    fade = int(round(255 * (1.0 - value)))
    return (fade, fade, 255)


def colorize(values: Sequence[float]) -> np.ndarray:
    """(..., 3) uint8 colours for an array of normalised scores."""
    values = np.clip(np.asarray(values, dtype=float), -1.0, 1.0)
    fade = np.rint(255 * (1.0 - np.abs(values))).astype(np.uint8)
    full = np.full(values.shape, 255, dtype=np.uint8)
    red = np.where(values < 0, full, fade)
    blue = np.where(values < 0, fade, full)
    return np.stack([red, fade, blue], axis=-1)


def grid_shape(feature_count: int, image_side: Optional[int] = None) -> Tuple[int, int]:
    """Rows and columns used to lay out `feature_count` features."""
    if image_side:
        return image_side, image_side
    side = int(round(np.sqrt(feature_count)))
    if side * side == feature_count:
        return side, side
    return 1, feature_count


def to_grid(values: Sequence[float], shape: Tuple[int, int]) -> np.ndarray:
    """Values laid out row-major on `shape`, zero-padded or cut to fit."""
    values = np.asarray(values, dtype=float).reshape(-1)
    size = shape[0] * shape[1]
    grid = np.zeros(size)
    grid[: min(size, len(values))] = values[:size]
    return grid.reshape(shape)


def _upscale(rgb: np.ndarray, scale: int) -> np.ndarray:
    return np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)


def render_heatmap(normalized: Sequence[float], sample: Optional[Sequence[float]] = None,
                   image_side: Optional[int] = None, scale: int = DEFAULT_SCALE) -> Image.Image:
    """Heatmap of normalised scores, with the raw sample in grayscale on the right."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    shape = grid_shape(len(np.asarray(normalized).reshape(-1)), image_side)
    panels = [colorize(to_grid(normalized, shape))]
    if sample is not None:
        gray = np.rint(255 * np.clip(to_grid(sample, shape), 0.0, 1.0)).astype(np.uint8)
        panels.append(np.full((shape[0], PANEL_GAP, 3), 255, dtype=np.uint8))
        panels.append(np.repeat(gray[:, :, None], 3, axis=2))
    canvas = _upscale(np.concatenate(panels, axis=1), scale)
    return Image.fromarray(np.ascontiguousarray(canvas))


def save_ppm(image: Image.Image, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image.convert("RGB").save(path, format="PPM")
    except OSError as e:
        raise DataIOError(f"cannot write heatmap {path}: {e}", path=str(path))
    return path
