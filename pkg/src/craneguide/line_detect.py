"""Horizontal/diagonal edge-line detection and selection.

The frame is reduced to Hough segments, the segments are split into a
horizontal band and a diagonal band by angle, each band elects one
representative by score, and the pair is checked and extended to the image
border.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import imgproc
from .imgproc import Image, LineSegment, Point

HORIZONTAL = "horizontal"
DIAGONAL = "diagonal"


@dataclass(frozen=True)
class BlurParams:
    sigma: float = 1.4
    ksize: int = 5

    def __post_init__(self) -> None:
        imgproc.gaussian_kernel(self.sigma, self.ksize)


@dataclass(frozen=True)
class CannyParams:
    low: float = 50.0
    high: float = 150.0

    def __post_init__(self) -> None:
        if self.low > self.high:
            raise imgproc.ParameterError("canny low threshold exceeds high threshold")


@dataclass(frozen=True)
class HoughParams:
    rho_res: float = 1.0
    theta_res: float = 1.0
    votes_min: int = 50
    min_len: float = 30.0
    max_gap: float = 10.0

    def __post_init__(self) -> None:
        if not (self.rho_res > 0 and self.theta_res > 0 and self.votes_min >= 1):
            raise imgproc.ParameterError("invalid Hough parameters")


@dataclass(frozen=True)
class LineParams:
    theta_horiz_max: float = 10.0
    theta_diag_lo: float = 20.0
    theta_diag_hi: float = 70.0
    score_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    diag_side: str = "left"
    horiz_side: str = "bottom"
    min_separation: float = 10.0
    margin: float = 0.5

    def __post_init__(self) -> None:
        if not (0 < self.theta_horiz_max < self.theta_diag_lo < self.theta_diag_hi < 90):
            raise imgproc.ParameterError("need 0 < horiz_max < diag_lo < diag_hi < 90")
        weights = tuple(float(w) for w in self.score_weights)
        if len(weights) != 3 or min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-9:
            raise imgproc.ParameterError("score weights must be three non-negative reals summing to 1")
        object.__setattr__(self, "score_weights", weights)
        if self.diag_side not in ("left", "right"):
            raise imgproc.ParameterError("diag_side must be left or right")
        if self.horiz_side not in ("bottom", "top"):
            raise imgproc.ParameterError("horiz_side must be bottom or top")


@dataclass(frozen=True)
class DetectorParams:
    """Everything the line detector needs, grouped by stage."""

    blur: BlurParams = field(default_factory=BlurParams)
    canny: CannyParams = field(default_factory=CannyParams)
    hough: HoughParams = field(default_factory=HoughParams)
    line: LineParams = field(default_factory=LineParams)


@dataclass(frozen=True)
class InfiniteLine:
    point: Point
    direction: Point
    clipped: tuple[Point, Point] | None = None

    def __post_init__(self) -> None:
        dx, dy = float(self.direction[0]), float(self.direction[1])
        n = math.hypot(dx, dy)
        if n == 0:
            raise imgproc.ParameterError("line direction must be non-zero")
        object.__setattr__(self, "direction", (dx / n, dy / n))
        object.__setattr__(self, "point", (float(self.point[0]), float(self.point[1])))

    @classmethod
    def through(cls, seg: LineSegment) -> "InfiniteLine":
        return cls(seg.p0, seg.direction)

    def distance_to(self, p: Point) -> float:
        dx, dy = p[0] - self.point[0], p[1] - self.point[1]
        return abs(dx * self.direction[1] - dy * self.direction[0])

    def clip(self, width: int, height: int) -> "InfiniteLine":
        return InfiniteLine(self.point, self.direction, clip_to_rect(self.point, self.direction, width, height))


def clip_to_rect(point: Point, direction: Point, width: int, height: int) -> tuple[Point, Point] | None:
    """Where the line meets the rectangle [0, width-1] x [0, height-1], or None."""
    t_lo, t_hi = -math.inf, math.inf
    for p, d, hi in ((point[0], direction[0], width - 1), (point[1], direction[1], height - 1)):
        if abs(d) < 1e-12:
            if p < 0 or p > hi:
                return None
            continue
        a, b = (0 - p) / d, (hi - p) / d
        if a > b:
            a, b = b, a
        t_lo, t_hi = max(t_lo, a), min(t_hi, b)
    if t_lo > t_hi:
        return None

    def at(t: float) -> Point:
        x = min(max(point[0] + t * direction[0], 0.0), float(width - 1))
        y = min(max(point[1] + t * direction[1], 0.0), float(height - 1))
        return (x, y)

    return (at(t_lo), at(t_hi))


@dataclass(frozen=True)
class LineSelection:
    horizontal: InfiniteLine | None = None
    diagonal: InfiniteLine | None = None
    horizontal_source: LineSegment | None = None
    diagonal_source: LineSegment | None = None
    candidates_h: int = 0
    candidates_d: int = 0


def classify(segments, params: LineParams) -> tuple[list[LineSegment], list[LineSegment]]:
    horiz, diag = [], []
    for seg in segments:
        a = abs(seg.theta)
        if a <= params.theta_horiz_max:
            horiz.append(seg)
        elif params.theta_diag_lo < a < params.theta_diag_hi:
            diag.append(seg)
    return horiz, diag


def _band_geometry(band: str, params: LineParams) -> tuple[float, float]:
    if band == HORIZONTAL:
        return 0.0, params.theta_horiz_max
    if band == DIAGONAL:
        return (
            (params.theta_diag_lo + params.theta_diag_hi) / 2.0,
            (params.theta_diag_hi - params.theta_diag_lo) / 2.0,
        )
    raise imgproc.ParameterError(f"unknown band {band!r}")


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def score(seg: LineSegment, band: str, dims: tuple[int, int], params: LineParams) -> float:
    """Weighted length / angle-conformity / border-proximity score in [0, 1].

    ``dims`` is ``(width, height)``.
    """
    width, height = dims
    alpha, beta, gamma = params.score_weights
    centre, half = _band_geometry(band, params)
    length_term = _clamp01(seg.length / math.hypot(width - 1, height - 1))
    angle_term = _clamp01(1.0 - abs(abs(seg.theta) - centre) / half)
    mx, my = seg.midpoint
    if band == DIAGONAL:
        frac = mx / max(width - 1, 1)
        position = 1.0 - frac if params.diag_side == "left" else frac
    else:
        frac = my / max(height - 1, 1)
        position = frac if params.horiz_side == "bottom" else 1.0 - frac
    return alpha * length_term + beta * angle_term + gamma * _clamp01(position)


def select_representative(candidates, band: str, dims: tuple[int, int], params: LineParams) -> LineSegment | None:
    """Highest score wins; ties go to the longer, then better-aligned, then
    leftmost-then-topmost segment."""
    if not candidates:
        return None
    centre, _ = _band_geometry(band, params)

    def key(seg: LineSegment):
        mx, my = seg.midpoint
        return (
            round(score(seg, band, dims, params), 12),
            round(seg.length, 9),
            -round(abs(abs(seg.theta) - centre), 9),
            -mx,
            -my,
        )

    return max(candidates, key=key)


def _angle_between(a: LineSegment, b: LineSegment) -> float:
    d = abs(a.theta - b.theta) % 180.0
    return min(d, 180.0 - d)


def validate_and_extend(
    h: LineSegment | None,
    d: LineSegment | None,
    dims: tuple[int, int],
    params: LineParams,
    *,
    candidates_h: int = 0,
    candidates_d: int = 0,
) -> LineSelection:
    """Check the pair and extend the surviving lines to the image border.

    An invalid pair (crossing too far outside the frame, or lines closer
    than ``min_separation`` degrees) keeps the horizontal and drops the
    diagonal.
    """
    width, height = dims
    if h is not None and d is not None:
        ok = _angle_between(h, d) >= params.min_separation
        if ok:
            from .guidance import intersect

            cross = intersect(InfiniteLine.through(h), InfiniteLine.through(d))
            mx, my = params.margin * (width - 1), params.margin * (height - 1)
            ok = cross is not None and (-mx <= cross[0] <= width - 1 + mx) and (-my <= cross[1] <= height - 1 + my)
        if not ok:
            d = None
    horizontal = InfiniteLine.through(h).clip(width, height) if h is not None else None
    diagonal = InfiniteLine.through(d).clip(width, height) if d is not None else None
    return LineSelection(
        horizontal=horizontal,
        diagonal=diagonal,
        horizontal_source=h if horizontal is not None else None,
        diagonal_source=d if diagonal is not None else None,
        candidates_h=candidates_h,
        candidates_d=candidates_d,
    )


def edge_map(img: Image, params: DetectorParams) -> np.ndarray:
    gray = imgproc.to_grayscale(img) if img.channels is imgproc.Channels.RGB8 else img
    smooth = imgproc.gaussian_blur(gray, params.blur.sigma, params.blur.ksize)
    return imgproc.canny(smooth, params.canny.low, params.canny.high)


def select_lines(segments, dims: tuple[int, int], params: LineParams) -> LineSelection:
    """classify -> select per band -> validate/extend, for ready-made segments."""
    horiz, diag = classify(segments, params)
    h = select_representative(horiz, HORIZONTAL, dims, params)
    d = select_representative(diag, DIAGONAL, dims, params)
    return validate_and_extend(h, d, dims, params, candidates_h=len(horiz), candidates_d=len(diag))


def hough_candidates(img: Image, params: DetectorParams) -> list[LineSegment]:
    hp = params.hough
    return imgproc.hough_segments(edge_map(img, params), hp.rho_res, hp.theta_res, hp.votes_min, hp.min_len, hp.max_gap)


def detect_lines(img: Image, params: DetectorParams | None = None) -> LineSelection:
    """grayscale -> blur -> Canny -> Hough -> classify -> select -> validate/extend."""
    params = params or DetectorParams()
    return select_lines(hough_candidates(img, params), (img.width, img.height), params.line)
