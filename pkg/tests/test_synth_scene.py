from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from craneguide import synth_scene
from craneguide.imgproc import read_image
from craneguide.synth_scene import SceneError, SceneSpec

SPEC = SceneSpec()


@pytest.mark.parametrize("distance, offset", [(1.0, 8.5), (5.0, 1.7)])
def test_laser_offset_from_principal_point(distance, offset):
    truth = synth_scene.ground_truth(replace(SPEC, ground_distance=distance))
    assert truth.laser_pixel[0] == SPEC.cx
    assert truth.laser_pixel[1] - SPEC.cy == pytest.approx(offset, abs=1e-9)


def test_laser_offset_follows_inverse_distance():
    products = []
    for d in np.linspace(1, 5, 17):
        t = synth_scene.ground_truth(replace(SPEC, ground_distance=float(d)))
        products.append(math.dist(t.laser_pixel, (SPEC.cx, SPEC.cy)) * d)
    assert max(products) - min(products) < 1e-9


def test_truth_inside_frame_over_range():
    for d in np.linspace(1, 5, 41):
        t = synth_scene.ground_truth(replace(SPEC, ground_distance=float(d)))
        for x, y in (t.landing_pixel, t.laser_pixel):
            assert 0 <= x <= SPEC.width - 1 and 0 <= y <= SPEC.height - 1


def test_render_is_deterministic():
    a = synth_scene.render(SPEC, 5)
    b = synth_scene.render(SPEC, 5)
    assert a[0] == b[0] and a[1] == b[1]
    assert synth_scene.render(SPEC, 6)[0] != a[0]


def test_rendered_edge_matches_truth_theta():
    for theta in (25.0, 40.0, 65.0):
        spec = replace(SPEC, edge_theta=theta, noise=0.0, grid_contrast=0.0, ground_distance=2.0)
        img, truth = synth_scene.render(spec, 0)
        px = img.pixels[:, :, 0].astype(np.float64)
        ground, obj = spec.ground_rgb[0], spec.object_rgb[0]
        cover = (ground - px) / (ground - obj)
        rows, xs = [], []
        first_full = int(math.ceil(truth.horizon_row)) + 2
        for v in range(first_full, spec.height):
            x0 = spec.width - 0.5 - cover[v].sum()
            if 2 < x0 < spec.width - 3:
                rows.append(v)
                xs.append(x0)
        slope, _ = np.polyfit(rows, xs, 1)  # dx/dv
        fitted = math.degrees(math.atan2(1.0, slope))
        fitted = fitted - 180 if fitted > 90 else fitted
        assert abs(fitted - truth.edge_theta) <= 0.5
        assert abs(truth.edge_theta) == pytest.approx(theta)


def test_landing_pixel_is_where_edges_meet():
    spec = replace(SPEC, ground_distance=2.0)
    t = synth_scene.ground_truth(spec)
    # the corner edge passes through the principal point at angle edge_theta
    dx, dy = t.landing_pixel[0] - spec.cx, t.landing_pixel[1] - spec.cy
    assert math.degrees(math.atan2(dy, dx)) - 180 == pytest.approx(t.edge_theta)


def test_sweep():
    frames = synth_scene.sweep([1, 2, 3, 4, 5], seed=0)
    assert len(frames) == 5
    offs = [f[1].laser_pixel[1] - SPEC.cy for f in frames]
    assert all(a > b for a, b in zip(offs, offs[1:]))
    with pytest.raises(SceneError):
        synth_scene.sweep([])


def test_equal_seed_same_distance_identical():
    s = synth_scene.derive_seed(3, 0)
    spec = replace(SPEC, ground_distance=3.0)
    assert synth_scene.render(spec, s)[0] == synth_scene.render(spec, s)[0]
    pair = synth_scene.sweep([3, 3], seed=3)
    assert pair[0][1].landing_pixel == pair[1][1].landing_pixel
    assert synth_scene.derive_seed(3, 0) != synth_scene.derive_seed(3, 1)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"ground_distance": 0.0},
        {"focal": -1.0},
        {"edge_theta": 70.0},
        {"laser_radius": 5.0},
        {"mount_height": 3.0},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(SceneError):
        SceneSpec(**kwargs)


def test_landing_outside_frame_is_an_error():
    with pytest.raises(SceneError):
        synth_scene.render(replace(SPEC, focal=20000.0), 0)


def test_write_scene(tmp_path):
    img, truth = synth_scene.render(SPEC, 1)
    png, side = synth_scene.write_scene(tmp_path, "s", img, truth)
    assert read_image(png) == img
    data = json.loads(side.read_text())
    assert set(data) == {"landing", "laser", "theta", "distance_m", "seed"}
    assert data["laser"] == list(truth.laser_pixel)
