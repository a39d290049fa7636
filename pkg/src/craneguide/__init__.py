"""Landing-corner guidance for crane loads from a side-mounted camera and laser."""
from __future__ import annotations

from .guidance import GuidanceResult, ModuleGeometry, Status, construct_guidance
from .imgproc import Channels, Image, read_image, write_image
from .pipeline import PipelineParams, guide, process_frame

__all__ = [
    "Channels",
    "GuidanceResult",
    "Image",
    "ModuleGeometry",
    "PipelineParams",
    "Status",
    "construct_guidance",
    "guide",
    "process_frame",
    "read_image",
    "write_image",
]

__version__ = "0.1.0"
