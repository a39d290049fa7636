"""Green laser spot detection.

Two HSV boxes (a saturated core and a washed-out bright centre) are OR-ed,
opened, smoothed and re-thresholded; the largest contour inside the area
limits gives the spot centre.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imgproc
from .imgproc import Image, Point


@dataclass(frozen=True)
class HsvRange:
    h_lo: float
    h_hi: float
    s_lo: float
    s_hi: float
    v_lo: float
    v_hi: float

    def __post_init__(self) -> None:
        if not (0 <= self.h_lo <= self.h_hi < 360):
            raise imgproc.ParameterError("hue range must be ordered inside [0, 360) without wraparound")
        if not (0 <= self.s_lo <= self.s_hi <= 1 and 0 <= self.v_lo <= self.v_hi <= 1):
            raise imgproc.ParameterError("s/v ranges must be ordered inside [0, 1]")

    def mask(self, hsv: np.ndarray) -> np.ndarray:
        return imgproc.hsv_in_range(hsv, self.h_lo, self.h_hi, self.s_lo, self.s_hi, self.v_lo, self.v_hi)


@dataclass(frozen=True)
class LaserParams:
    core_green: HsvRange = field(default_factory=lambda: HsvRange(100, 140, 0.40, 1.0, 0.40, 1.0))
    bright_green: HsvRange = field(default_factory=lambda: HsvRange(90, 150, 0.05, 0.40, 0.85, 1.0))
    area_min: int = 3
    area_max: int = 2000
    blur_sigma: float = 1.0
    blur_ksize: int = 3

    def __post_init__(self) -> None:
        if self.area_min < 1 or self.area_min >= self.area_max:
            raise imgproc.ParameterError("need 1 <= area_min < area_max")
        imgproc.gaussian_kernel(self.blur_sigma, self.blur_ksize)


@dataclass(frozen=True)
class LaserSpot:
    center: Point
    area: int
    mask_pixels: int


def laser_mask(img: Image, params: LaserParams | None = None) -> np.ndarray:
    """Cleaned candidate mask, before contouring and area filtering."""
    params = params or LaserParams()
    hsv = imgproc.rgb_to_hsv(img)
    combined = imgproc.mask_or(params.core_green.mask(hsv), params.bright_green.mask(hsv))
    opened = imgproc.morphology(combined, "open")
    smooth = imgproc.gaussian_blur(
        Image(opened.astype(np.uint8) * 255), params.blur_sigma, params.blur_ksize
    )
    return smooth.pixels >= 128


def detect_laser(img: Image, params: LaserParams | None = None) -> LaserSpot | None:
    """Centre of the largest in-range green blob, or None when there is none."""
    params = params or LaserParams()
    mask = laser_mask(img, params)
    best = None
    best_key = None
    for contour in imgproc.find_contours(mask):
        if not params.area_min <= contour.area <= params.area_max:
            continue
        cx, cy = imgproc.centroid(contour)
        key = (-contour.area, cy, cx)
        if best_key is None or key < best_key:
            best, best_key = (contour, (cx, cy)), key
    if best is None:
        return None
    contour, center = best
    return LaserSpot(center=center, area=contour.area, mask_pixels=int(mask.sum()))
