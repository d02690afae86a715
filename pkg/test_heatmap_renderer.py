#!/usr/bin/env python3
"""Tests for the red-white-blue heatmap renderer."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatmap_renderer import colorize, grid_shape, render_heatmap, save_ppm, score_to_rgb, to_grid


def test_colour_endpoints():
    assert score_to_rgb(-1.0) == (255, 0, 0)
    assert score_to_rgb(0.0) == (255, 255, 255)
    assert score_to_rgb(1.0) == (0, 0, 255)
    assert score_to_rgb(5.0) == (0, 0, 255)


def test_colour_is_linear():
    assert score_to_rgb(-0.5) == (255, 128, 128)
    assert score_to_rgb(0.2) == (204, 204, 255)


@given(st.floats(-2.0, 2.0, allow_nan=False))
def test_colour_keeps_one_saturated_channel(value):
    red, green, blue = score_to_rgb(value)
    assert green == min(red, blue)
    assert (blue == 255) if value >= 0 else (red == 255)
    assert abs(green - 255 * (1.0 - min(abs(value), 1.0))) <= 0.5 + 1e-9


def test_colorize_agrees_with_scalar_rule():
    values = [-1.0, -0.3, 0.0, 0.6, 1.0]
    rgb = colorize(values)
    assert [tuple(int(c) for c in pixel) for pixel in rgb] == [score_to_rgb(v) for v in values]


def test_grid_shapes():
    assert grid_shape(64) == (8, 8)
    assert grid_shape(10) == (1, 10)
    assert grid_shape(7, image_side=4) == (4, 4)


def test_to_grid_pads_with_zeros():
    grid = to_grid([1.0, 2.0, 3.0], (2, 2))
    np.testing.assert_array_equal(grid, [[1.0, 2.0], [3.0, 0.0]])


def test_all_zero_map_renders_white():
    image = render_heatmap(np.zeros(16), scale=2)
    assert image.size == (8, 8)
    assert np.all(np.asarray(image) == 255)


def test_panel_layout_with_sample():
    image = render_heatmap([1.0, -1.0, 0.0, 0.5], sample=[0.0, 1.0, 0.5, 0.0], scale=3)
    assert image.size == (15, 6)
    pixels = np.asarray(image)
    assert tuple(pixels[0, 0]) == (0, 0, 255)
    assert tuple(pixels[0, 3]) == (255, 0, 0)
    assert tuple(pixels[0, 6]) == (255, 255, 255)
    assert tuple(pixels[0, 9]) == (0, 0, 0)
    assert tuple(pixels[0, 12]) == (255, 255, 255)


def test_bad_scale():
    with pytest.raises(ValueError):
        render_heatmap([0.0], scale=0)


def test_save_ppm_writes_binary_pixmap(tmp_path):
    path = save_ppm(render_heatmap([0.5, -0.5, 0.0, 1.0], scale=1), tmp_path / "sub" / "map.ppm")
    data = path.read_bytes()
    assert data.startswith(b"P6")
    assert data.endswith(bytes([0, 0, 255]))
