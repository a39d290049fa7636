"""Synthetic frames from a downward-looking camera mounted on a box face.

Camera frame: X along the face (image x), Y toward the face (image y),
Z straight down to the ground. The mounting face is the plane
``Y = camera_axis_offset``; the box occupies ``Y >= camera_axis_offset``,
``X >= -corner_x`` and ``0 < Z <= mount_height``. Its vertical corner edge
projects to a ray from the principal point (the diagonal in the image) and
the bottom edge of the mounting face to a horizontal line. The laser beam
runs parallel to the optical axis, ``camera_axis_offset - laser_axis_offset``
closer to the face than the lens.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .guidance import ModuleGeometry
from .imgproc import Image, Point, normalize_theta, write_image


class SceneError(ValueError):
    """Raised for scene parameters that cannot produce a usable frame."""


@dataclass(frozen=True)
class SceneSpec:
    width: int = 640
    height: int = 480
    focal: float = 500.0
    ground_distance: float = 3.0  # lens to ground, metres
    edge_theta: float = 65.0  # |angle| of the corner edge in the image, degrees
    mount_height: float = 0.3  # lens above the bottom of the box, metres
    geometry: ModuleGeometry = field(default_factory=ModuleGeometry)
    laser_radius: float = 3.0
    ground_rgb: tuple[int, int, int] = (172, 160, 142)
    object_rgb: tuple[int, int, int] = (68, 68, 74)
    laser_core_rgb: tuple[int, int, int] = (30, 220, 60)
    laser_bright_rgb: tuple[int, int, int] = (210, 255, 210)
    noise: float = 10.0
    grid_pitch: float = 0.25  # metres on the ground
    grid_contrast: float = 6.0
    supersample: int = 4

    def __post_init__(self) -> None:
        if self.width < 16 or self.height < 16:
            raise SceneError("frame too small")
        if not self.focal > 0 or not self.ground_distance > 0:
            raise SceneError("focal and ground_distance must be positive")
        if not 25.0 <= self.edge_theta <= 65.0:
            raise SceneError("edge_theta must lie in [25, 65] degrees")
        if not 0 < self.mount_height < self.ground_distance:
            raise SceneError("mount_height must be positive and below the ground distance")
        if not 2.0 <= self.laser_radius <= 4.0:
            raise SceneError("laser_radius must lie in [2, 4] px")
        if self.supersample < 1:
            raise SceneError("supersample must be >= 1")

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    @property
    def face_offset(self) -> float:
        return self.geometry.camera_axis_offset / 1000.0

    @property
    def laser_offset(self) -> float:
        return self.geometry.camera_laser_offset / 1000.0

    @property
    def corner_x(self) -> float:
        """Distance along the face from the lens axis to the box corner, metres."""
        return self.face_offset / math.tan(math.radians(self.edge_theta))


@dataclass(frozen=True)
class GroundTruth:
    landing_pixel: Point
    edge_theta: float
    laser_pixel: Point
    horizon_row: float  # image row of the face's bottom edge
    distance_m: float
    seed: int


def project(spec: SceneSpec, x: float, y: float, z: float) -> Point:
    return (spec.focal * x / z + spec.cx, spec.focal * y / z + spec.cy)


def ground_truth(spec: SceneSpec, seed: int = 0) -> GroundTruth:
    d = spec.ground_distance
    landing = project(spec, -spec.corner_x, spec.face_offset, d)
    laser = project(spec, 0.0, spec.laser_offset, d)
    edge_row = project(spec, 0.0, spec.face_offset, spec.mount_height)[1]
    # the corner edge runs from the principal point toward (-corner_x, face_offset)
    theta = normalize_theta(math.degrees(math.atan2(spec.face_offset, -spec.corner_x)))
    for name, (u, v) in (("landing", landing), ("laser", laser)):
        if not (0 <= u <= spec.width - 1 and 0 <= v <= spec.height - 1):
            raise SceneError(f"{name} pixel {u:.1f},{v:.1f} falls outside the frame")
    if not edge_row < spec.height - 1:
        raise SceneError("box bottom edge falls outside the frame; raise mount_height")
    return GroundTruth(landing, theta, laser, edge_row, d, seed)


def _subsample_grid(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    n = spec.supersample
    offs = (np.arange(n) + 0.5) / n - 0.5
    us = (np.arange(spec.width)[:, None] + offs[None, :]).ravel()
    vs = (np.arange(spec.height)[:, None] + offs[None, :]).ravel()
    return np.meshgrid(us, vs)


def _coverage(inside: np.ndarray, spec: SceneSpec) -> np.ndarray:
    n = spec.supersample
    return inside.reshape(spec.height, n, spec.width, n).mean(axis=(1, 3))


def _object_coverage(spec: SceneSpec) -> np.ndarray:
    u, v = _subsample_grid(spec)
    edge_row = spec.cy + spec.focal * spec.face_offset / spec.mount_height
    inside = (v >= edge_row) & ((u - spec.cx) * spec.face_offset + spec.corner_x * (v - spec.cy) >= 0)
    return _coverage(inside, spec)


def _disc_coverage(
    spec: SceneSpec, center: Point, radius: float, pad: int
) -> tuple[np.ndarray, tuple[slice, slice]]:
    n = spec.supersample
    x0 = max(int(math.floor(center[0])) - pad, 0)
    x1 = min(int(math.floor(center[0])) + pad + 1, spec.width)
    y0 = max(int(math.floor(center[1])) - pad, 0)
    y1 = min(int(math.floor(center[1])) + pad + 1, spec.height)
    offs = (np.arange(n) + 0.5) / n - 0.5
    us = (np.arange(x0, x1)[:, None] + offs[None, :]).ravel()
    vs = (np.arange(y0, y1)[:, None] + offs[None, :]).ravel()
    uu, vv = np.meshgrid(us, vs)
    inside = (uu - center[0]) ** 2 + (vv - center[1]) ** 2 <= radius * radius
    cov = inside.reshape(y1 - y0, n, x1 - x0, n).mean(axis=(1, 3))
    return cov, (slice(y0, y1), slice(x0, x1))


def _ground(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    base = np.array(spec.ground_rgb, dtype=np.float64)
    # metric ground coordinates of every pixel centre
    gx = (np.arange(w) - spec.cx) * spec.ground_distance / spec.focal
    gy = (np.arange(h) - spec.cy) * spec.ground_distance / spec.focal
    phase_x = rng.uniform(0, spec.grid_pitch)
    phase_y = rng.uniform(0, spec.grid_pitch)
    line_w = 0.01
    on_x = (np.abs(((gx + phase_x) % spec.grid_pitch) - spec.grid_pitch / 2) > spec.grid_pitch / 2 - line_w)
    on_y = (np.abs(((gy + phase_y) % spec.grid_pitch) - spec.grid_pitch / 2) > spec.grid_pitch / 2 - line_w)
    grid = (on_x[None, :] | on_y[:, None]).astype(np.float64) * spec.grid_contrast
    noise = rng.uniform(-spec.noise, spec.noise, size=(h, w))
    shade = -grid + noise
    return base[None, None, :] + shade[:, :, None]


def render(spec: SceneSpec, seed: int = 0) -> tuple[Image, GroundTruth]:
    """Render one frame and its ground truth. Same ``(spec, seed)``, same bytes."""
    truth = ground_truth(spec, seed)
    rng = np.random.default_rng(seed)
    frame = _ground(spec, rng)
    obj = _object_coverage(spec)[:, :, None]
    obj_shade = np.array(spec.object_rgb, dtype=np.float64)[None, None, :] + rng.uniform(
        -spec.noise / 4, spec.noise / 4, size=(spec.height, spec.width, 1)
    )
    frame = frame * (1 - obj) + obj_shade * obj
    frame = paint_laser(frame, spec, truth.laser_pixel)
    pixels = np.clip(np.floor(frame + 0.5), 0, 255).astype(np.uint8)
    return Image(pixels), truth


def paint_laser(frame: np.ndarray, spec: SceneSpec, center: Point) -> np.ndarray:
    """Blend an antialiased laser disc (core ring, bright centre) into a float RGB frame."""
    frame = np.array(frame, dtype=np.float64, copy=True)
    pad = int(math.ceil(spec.laser_radius)) + 2
    core, win = _disc_coverage(spec, center, spec.laser_radius, pad)
    bright, _ = _disc_coverage(spec, center, spec.laser_radius / 2.0, pad)
    patch = frame[win]
    patch = patch * (1 - core[:, :, None]) + np.array(spec.laser_core_rgb, dtype=np.float64) * core[:, :, None]
    patch = patch * (1 - bright[:, :, None]) + np.array(spec.laser_bright_rgb, dtype=np.float64) * bright[:, :, None]
    frame[win] = patch
    return frame


def derive_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def sweep(distances, seed: int = 0, spec: SceneSpec | None = None) -> list[tuple[Image, GroundTruth]]:
    """One frame per ground distance; frame ``i`` uses ``derive_seed(seed, i)``."""
    distances = list(distances)
    if not distances:
        raise SceneError("distance list is empty")
    base = spec or SceneSpec()
    out = []
    for i, d in enumerate(distances):
        frame_spec = _with_distance(base, float(d))
        out.append(render(frame_spec, derive_seed(seed, i)))
    return out


def _with_distance(spec: SceneSpec, distance: float) -> SceneSpec:
    return replace(spec, ground_distance=distance)


def truth_dict(truth: GroundTruth) -> dict:
    return {
        "landing": [truth.landing_pixel[0], truth.landing_pixel[1]],
        "laser": [truth.laser_pixel[0], truth.laser_pixel[1]],
        "theta": truth.edge_theta,
        "distance_m": truth.distance_m,
        "seed": truth.seed,
    }


def write_scene(out_dir: str | Path, stem: str, img: Image, truth: GroundTruth) -> tuple[Path, Path]:
    """Write ``stem.png`` and the ``stem.json`` ground-truth sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png = out_dir / f"{stem}.png"
    side = out_dir / f"{stem}.json"
    write_image(png, img)
    side.write_text(json.dumps(truth_dict(truth), sort_keys=True) + "\n", encoding="utf-8")
    return png, side


def spec_summary(spec: SceneSpec) -> dict:
    return asdict(spec)
