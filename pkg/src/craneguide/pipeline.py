"""Single-frame guidance: lines, laser, corner, overlay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .guidance import GuidanceResult, annotate, construct_guidance
from .imgproc import Channels, Image
from .laser_detect import LaserParams, detect_laser
from .line_detect import DetectorParams, detect_lines


@dataclass(frozen=True)
class PipelineParams:
    detector: DetectorParams = field(default_factory=DetectorParams)
    laser: LaserParams = field(default_factory=LaserParams)


def as_rgb(img: Image) -> Image:
    if img.channels is Channels.RGB8:
        return img
    return Image(np.repeat(img.pixels[:, :, None], 3, axis=2))


def guide(img: Image, params: PipelineParams | None = None) -> GuidanceResult:
    params = params or PipelineParams()
    img = as_rgb(img)
    selection = detect_lines(img, params.detector)
    spot = detect_laser(img, params.laser)
    return construct_guidance(selection, spot, (img.width, img.height))


def process_frame(img: Image, params: PipelineParams | None = None) -> tuple[GuidanceResult, Image]:
    img = as_rgb(img)
    result = guide(img, params)
    return result, annotate(img, result)
