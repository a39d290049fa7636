"""Landing-corner construction and overlay drawing.

The edge seen at an angle (the diagonal) is extended; a line through the
laser spot parallel to the object's horizontal edge cuts it at the point
where the object corner will touch down. Everything is in pixel space.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .imgproc import Image, ImageFormatError, Point, Channels
from .laser_detect import LaserSpot
from .line_detect import InfiniteLine, LineSelection

MIN_CROSSING_DEG = 1.0
_MIN_CROSS = math.sin(math.radians(MIN_CROSSING_DEG))


@dataclass(frozen=True)
class ModuleGeometry:
    """Camera module body and standoffs from the object face, millimetres."""

    body: tuple[float, float, float] = (50.0, 150.0, 127.0)
    suction_tip_offset: float = 7.8
    laser_axis_offset: float = 19.8
    camera_axis_offset: float = 36.8

    def __post_init__(self) -> None:
        if not (0 < self.suction_tip_offset < self.laser_axis_offset < self.camera_axis_offset):
            raise ValueError("need 0 < suction tip < laser axis < camera axis offsets")

    @property
    def camera_laser_offset(self) -> float:
        return self.camera_axis_offset - self.laser_axis_offset


class Status(str, enum.Enum):
    FULL = "Full"
    NO_LASER = "NoLaser"
    NO_DIAGONAL = "NoDiagonal"
    NO_HORIZONTAL = "NoHorizontal"
    DEGENERATE = "Degenerate"
    EMPTY = "Empty"


@dataclass(frozen=True)
class GuidanceResult:
    selection: LineSelection
    laser: LaserSpot | None
    corner: Point | None
    guidance_line: InfiniteLine | None
    status: Status


def intersect(a: InfiniteLine, b: InfiniteLine) -> Point | None:
    """Crossing point of two lines, None if they meet at under one degree."""
    ax, ay = a.direction
    bx, by = b.direction
    cross = ax * by - ay * bx
    if abs(cross) < _MIN_CROSS:
        return None
    wx, wy = b.point[0] - a.point[0], b.point[1] - a.point[1]
    t = (wx * by - wy * bx) / cross
    return (a.point[0] + t * ax, a.point[1] + t * ay)


def status_for(has_horizontal: bool, has_diagonal: bool, has_laser: bool, has_corner: bool) -> Status:
    if has_corner:
        return Status.FULL
    if not has_horizontal and not has_diagonal:
        return Status.EMPTY
    if not has_diagonal:
        return Status.NO_DIAGONAL
    if not has_horizontal:
        return Status.NO_HORIZONTAL
    if not has_laser:
        return Status.NO_LASER
    return Status.DEGENERATE


def construct_guidance(
    selection: LineSelection, laser: LaserSpot | None, dims: tuple[int, int]
) -> GuidanceResult:
    width, height = dims
    corner = None
    guide = None
    if selection.horizontal is not None and selection.diagonal is not None and laser is not None:
        laser_line = InfiniteLine(laser.center, selection.horizontal.direction)
        corner = intersect(selection.diagonal, laser_line)
        if corner is not None:
            guide = InfiniteLine(corner, selection.horizontal.direction).clip(width, height)
    status = status_for(
        selection.horizontal is not None, selection.diagonal is not None, laser is not None, corner is not None
    )
    return GuidanceResult(selection=selection, laser=laser, corner=corner, guidance_line=guide, status=status)


def _pair(p: Point | None):
    return None if p is None else [round(float(p[0]), 3), round(float(p[1]), 3)]


def _span(line: InfiniteLine | None):
    if line is None or line.clipped is None:
        return None
    return [_pair(line.clipped[0]), _pair(line.clipped[1])]


def report(result: GuidanceResult) -> dict:
    return {
        "status": result.status.value,
        "corner": _pair(result.corner),
        "laser": _pair(result.laser.center if result.laser is not None else None),
        "horiz": _span(result.selection.horizontal),
        "diag": _span(result.selection.diagonal),
    }


def report_json(result: GuidanceResult) -> str:
    """Single-line JSON guidance report."""
    return json.dumps(report(result), separators=(",", ":"))


# --------------------------------------------------------------------------
# Drawing
# --------------------------------------------------------------------------

BLACK = (0, 0, 0)
RED = (255, 0, 0)
GREEN = (0, 255, 0)
BLUE = (0, 0, 255)
DASH_ON = 8
DASH_OFF = 8
CROSS_ARM = 2
CIRCLE_RADII = (4, 7)


def _put(canvas: np.ndarray, x: int, y: int, color) -> None:
    h, w = canvas.shape[:2]
    if 0 <= x < w and 0 <= y < h:
        canvas[y, x] = color


def line_pixels(p0: Point, p1: Point) -> list[tuple[int, int, float]]:
    """Rasterised ``(x, y, arclength)`` samples from p0 to p1, one per major-axis step."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    steps = int(math.ceil(max(abs(dx), abs(dy))))
    length = math.hypot(dx, dy)
    out = []
    seen = set()
    for i in range(steps + 1):
        t = i / steps if steps else 0.0
        x = int(math.floor(p0[0] + t * dx + 0.5))
        y = int(math.floor(p0[1] + t * dy + 0.5))
        if (x, y) not in seen:
            seen.add((x, y))
            out.append((x, y, t * length))
    return out


def draw_line(canvas: np.ndarray, p0: Point, p1: Point, color, dashed: bool = False) -> None:
    period = DASH_ON + DASH_OFF
    for x, y, s in line_pixels(p0, p1):
        if dashed and (s % period) >= DASH_ON:
            continue
        _put(canvas, x, y, color)


def circle_pixels(center: Point, radius: int) -> set[tuple[int, int]]:
    cx = int(math.floor(center[0] + 0.5))
    cy = int(math.floor(center[1] + 0.5))
    pts = set()
    n = max(16, int(8 * radius * math.pi))
    for i in range(n):
        a = 2 * math.pi * i / n
        pts.add((cx + int(round(radius * math.cos(a))), cy + int(round(radius * math.sin(a)))))
    return pts


def cross_pixels(center: Point, arm: int = CROSS_ARM) -> set[tuple[int, int]]:
    cx = int(math.floor(center[0] + 0.5))
    cy = int(math.floor(center[1] + 0.5))
    pts = {(cx + k, cy) for k in range(-arm, arm + 1)}
    pts |= {(cx, cy + k) for k in range(-arm, arm + 1)}
    return pts


def annotate(img: Image, result: GuidanceResult) -> Image:
    """Overlay the detected lines, laser mark, corner and guidance line.

    Diagonal extension black, horizontal extension red, laser cross green,
    corner double circle blue, guidance line blue dashed.
    """
    if img.channels is not Channels.RGB8:
        raise ImageFormatError("annotate needs an RGB8 image")
    canvas = img.pixels.copy()
    sel = result.selection
    if sel.diagonal is not None and sel.diagonal.clipped is not None:
        draw_line(canvas, *sel.diagonal.clipped, BLACK)
    if sel.horizontal is not None and sel.horizontal.clipped is not None:
        draw_line(canvas, *sel.horizontal.clipped, RED)
    if result.guidance_line is not None and result.guidance_line.clipped is not None:
        draw_line(canvas, *result.guidance_line.clipped, BLUE, dashed=True)
    if result.laser is not None:
        for x, y in cross_pixels(result.laser.center):
            _put(canvas, x, y, GREEN)
    if result.corner is not None:
        for r in CIRCLE_RADII:
            for x, y in circle_pixels(result.corner, r):
                _put(canvas, x, y, BLUE)
    return Image(canvas)
