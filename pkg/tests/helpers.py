"""Shared fixtures-by-function for the test modules."""
from __future__ import annotations

import numpy as np

from craneguide.imgproc import Image


def random_gray(rng: np.random.Generator, max_side: int = 32) -> np.ndarray:
    """Small grey image with a few flat blocks and a little noise."""
    h, w = rng.integers(3, max_side + 1, size=2)
    img = np.full((h, w), rng.integers(0, 256), dtype=np.int64)
    for _ in range(rng.integers(1, 5)):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = rng.integers(y0, h + 1), rng.integers(x0, w + 1)
        img[y0:y1, x0:x1] = rng.integers(0, 256)
    img += rng.integers(-12, 13, size=(h, w))
    return np.clip(img, 0, 255).astype(np.uint8)


def random_mask(rng: np.random.Generator, max_side: int = 32) -> np.ndarray:
    h, w = rng.integers(1, max_side + 1, size=2)
    density = rng.uniform(0.05, 0.7)
    return rng.random((h, w)) < density


def blank(width: int, height: int, rgb=(128, 128, 128)) -> Image:
    return Image(np.tile(np.array(rgb, dtype=np.uint8), (height, width, 1)))


def paint_segment(edges: np.ndarray, p0, p1) -> None:
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    for t in np.linspace(0.0, 1.0, n):
        x = int(round(p0[0] + t * (p1[0] - p0[0])))
        y = int(round(p0[1] + t * (p1[1] - p0[1])))
        edges[y, x] = True


ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str) -> None:
    """Note one acceptance criterion outcome; the terminal summary lists them all."""
    ACCEPTANCE.append((name, ok, detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
