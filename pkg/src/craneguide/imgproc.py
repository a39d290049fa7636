"""Image primitives used by the line and laser detectors.

Everything here works on numpy arrays. Colour and grey rasters travel
inside :class:`Image`; edge maps and binary masks are plain 2-D ``bool``
arrays with the same height and width as the image they came from.
Coordinates are ``(x, y)`` with x to the right and y down; pixel centres
sit on integers.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

Point = tuple[float, float]

_EIGHT = np.ones((3, 3), dtype=bool)


class ImageFormatError(ValueError):
    """Raised when an image has the wrong channel layout for an operation."""


class ParameterError(ValueError):
    """Raised for out-of-range operation parameters."""


class DimensionError(ValueError):
    """Raised when two rasters that must agree in size do not."""


class DegenerateContourError(ValueError):
    """Raised when a contour has no area."""


class Channels(enum.Enum):
    GRAY8 = 1
    RGB8 = 3


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable 8-bit raster, either ``(h, w)`` grey or ``(h, w, 3)`` RGB."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, dtype=np.uint8, copy=True)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ImageFormatError(f"unsupported pixel array shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageFormatError("image must be at least 1x1")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_bytes(cls, width: int, height: int, channels: Channels, data: bytes) -> "Image":
        expected = width * height * channels.value
        if width < 1 or height < 1 or len(data) != expected:
            raise ImageFormatError(
                f"expected {expected} bytes for {width}x{height} {channels.name}, got {len(data)}"
            )
        arr = np.frombuffer(data, dtype=np.uint8)
        shape = (height, width) if channels is Channels.GRAY8 else (height, width, 3)
        return cls(arr.reshape(shape))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> Channels:
        return Channels.GRAY8 if self.pixels.ndim == 2 else Channels.RGB8

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self) -> int:
        return hash((self.pixels.shape, self.data))


def _require(img: Image, channels: Channels, op: str) -> None:
    if img.channels is not channels:
        raise ImageFormatError(f"{op} needs a {channels.name} image, got {img.channels.name}")


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------

def read_image(path: str | Path) -> Image:
    """Load a PNG, PGM (P5) or PPM (P6) file. Grey files stay grey."""
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode in ("L", "1", "I;16", "I"):
            arr = np.asarray(im.convert("L"))
        else:
            arr = np.asarray(im.convert("RGB"))
    return Image(arr)


def encode_png(img: Image) -> bytes:
    import io

    from PIL import Image as PILImage

    buf = io.BytesIO()
    PILImage.fromarray(img.pixels).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> Image:
    import io

    return read_image(io.BytesIO(data))


def write_image(path: str | Path, img: Image) -> None:
    """Write ``img``; the suffix picks PNG, or binary PGM/PPM for .pgm/.ppm/.pnm."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        magic = b"P5" if img.channels is Channels.GRAY8 else b"P6"
        header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + img.data)
    else:
        path.write_bytes(encode_png(img))


# --------------------------------------------------------------------------
# Filtering
# --------------------------------------------------------------------------

def to_grayscale(img: Image) -> Image:
    _require(img, Channels.RGB8, "to_grayscale")
    rgb = img.pixels.astype(np.float64)
    gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return Image(_round_half_up(gray))


def gaussian_kernel(sigma: float, ksize: int) -> np.ndarray:
    """Normalised 1-D Gaussian weights of odd length ``ksize``."""
    if ksize < 1 or ksize % 2 == 0:
        raise ParameterError(f"ksize must be odd and >= 1, got {ksize}")
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    half = ksize // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _blur_float(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    half = len(kernel) // 2
    if half == 0:
        return values.astype(np.float64)
    padded = np.pad(values.astype(np.float64), half, mode="edge")
    h, w = values.shape
    rows = np.zeros((h + 2 * half, w), dtype=np.float64)
    for k, wk in enumerate(kernel):
        rows += wk * padded[:, k:k + w]
    out = np.zeros((h, w), dtype=np.float64)
    for k, wk in enumerate(kernel):
        out += wk * rows[k:k + h, :]
    return out


def gaussian_blur(img: Image, sigma: float, ksize: int) -> Image:
    """Separable Gaussian blur with replicated borders, quantised once at the end."""
    _require(img, Channels.GRAY8, "gaussian_blur")
    kernel = gaussian_kernel(sigma, ksize)
    return Image(_round_half_up(_blur_float(img.pixels, kernel)))


def sobel(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives. The outermost one-pixel ring is left at zero."""
    g = np.asarray(gray, dtype=np.float64)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    if g.shape[0] < 3 or g.shape[1] < 3:
        return gx, gy
    tl, tc, tr = g[:-2, :-2], g[:-2, 1:-1], g[:-2, 2:]
    ml, mr = g[1:-1, :-2], g[1:-1, 2:]
    bl, bc, br = g[2:, :-2], g[2:, 1:-1], g[2:, 2:]
    gx[1:-1, 1:-1] = (tr + 2 * mr + br) - (tl + 2 * ml + bl)
    gy[1:-1, 1:-1] = (bl + 2 * bc + br) - (tl + 2 * tc + tr)
    return gx, gy


# Quantised gradient directions as (dx, dy) steps: 0, 45, 90 and 135 degrees.
_NMS_STEPS = ((1, 0), (1, 1), (0, 1), (-1, 1))


def _direction_bins(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    return (np.floor((angle + 22.5) / 45.0).astype(np.int64)) % 4


def non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that beat the backward neighbour and tie-or-beat the forward one.

    The asymmetric comparison thins a symmetric ridge (an ideal step) to a
    single pixel.
    """
    h, w = mag.shape
    keep = np.zeros((h, w), dtype=bool)
    if h < 3 or w < 3:
        return keep
    bins = _direction_bins(gx, gy)
    centre = mag[1:-1, 1:-1]
    inner_bins = bins[1:-1, 1:-1]
    for b, (dx, dy) in enumerate(_NMS_STEPS):
        forward = mag[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        backward = mag[1 - dy:h - 1 - dy, 1 - dx:w - 1 - dx]
        sel = (inner_bins == b) & (centre > backward) & (centre >= forward)
        keep[1:-1, 1:-1] |= sel
    return keep & (mag > 0)


def canny_gradients(img: Image) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sobel ``(gx, gy, magnitude)`` for a grey image."""
    _require(img, Channels.GRAY8, "canny")
    gx, gy = sobel(img.pixels)
    return gx, gy, np.hypot(gx, gy)


def canny(img: Image, low: float = 50, high: float = 150) -> np.ndarray:
    """Canny edge map of an already-smoothed grey image.

    Hysteresis keeps weak pixels (``low <= m < high``) only when they are
    8-connected, possibly through other weak pixels, to a strong one.
    """
    if low > high:
        raise ParameterError(f"low threshold {low} exceeds high threshold {high}")
    gx, gy, mag = canny_gradients(img)
    thin = non_max_suppression(mag, gx, gy)
    candidates = thin & (mag >= low)
    strong = thin & (mag >= high)
    if not strong.any():
        return np.zeros(mag.shape, dtype=bool)
    labels, _ = ndimage.label(candidates, structure=_EIGHT)
    keep = np.unique(labels[strong])
    keep = keep[keep > 0]
    return np.isin(labels, keep)


# --------------------------------------------------------------------------
# Hough segments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LineSegment:
    """Finite segment between two subpixel points."""

    p0: Point
    p1: Point

    def __post_init__(self) -> None:
        p0 = (float(self.p0[0]), float(self.p0[1]))
        p1 = (float(self.p1[0]), float(self.p1[1]))
        if math.hypot(p1[0] - p0[0], p1[1] - p0[1]) <= 0:
            raise ParameterError("segment endpoints coincide")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    @property
    def theta(self) -> float:
        """Angle to the image x-axis in degrees, normalised into (-90, 90]."""
        return normalize_theta(
            math.degrees(math.atan2(self.p1[1] - self.p0[1], self.p1[0] - self.p0[0]))
        )

    @property
    def midpoint(self) -> Point:
        return ((self.p0[0] + self.p1[0]) / 2.0, (self.p0[1] + self.p1[1]) / 2.0)

    @property
    def direction(self) -> Point:
        n = self.length
        return ((self.p1[0] - self.p0[0]) / n, (self.p1[1] - self.p0[1]) / n)


def normalize_theta(deg: float) -> float:
    t = math.fmod(deg, 180.0)
    if t <= -90.0:
        t += 180.0
    elif t > 90.0:
        t -= 180.0
    return t


def _fit_segment(xs: np.ndarray, ys: np.ndarray) -> LineSegment | None:
    """Total-least-squares line through the pixels, clipped to their extent."""
    cx, cy = xs.mean(), ys.mean()
    dx, dy = xs - cx, ys - cy
    cov = np.array([[np.dot(dx, dx), np.dot(dx, dy)], [np.dot(dx, dy), np.dot(dy, dy)]])
    evals, evecs = np.linalg.eigh(cov)
    ux, uy = evecs[:, int(np.argmax(evals))]
    t = dx * ux + dy * uy
    t0, t1 = float(t.min()), float(t.max())
    if t1 - t0 <= 0:
        return None
    a = (cx + t0 * ux, cy + t0 * uy)
    b = (cx + t1 * ux, cy + t1 * uy)
    if (b[0], b[1]) < (a[0], a[1]):
        a, b = b, a
    return LineSegment(a, b)


def hough_segments(
    edges: np.ndarray,
    rho_res: float = 1.0,
    theta_res: float = 1.0,
    votes_min: int = 50,
    min_len: float = 30.0,
    max_gap: float = 10.0,
) -> list[LineSegment]:
    """Extract line segments from an edge map.

    A full (rho, theta) accumulator is built once. The strongest cell is
    taken repeatedly; edge pixels within ``rho_res`` of its line are ordered
    along it and split wherever consecutive pixels are more than ``max_gap``
    apart. Runs with at least ``votes_min`` pixels spanning at least
    ``min_len`` become segments, and their pixels are withdrawn from the
    accumulator so they cannot vote again.
    """
    if not rho_res > 0 or not theta_res > 0:
        raise ParameterError("rho_res and theta_res must be positive")
    if votes_min < 1:
        raise ParameterError("votes_min must be >= 1")
    if min_len < 0 or max_gap < 0:
        raise ParameterError("min_len and max_gap must be non-negative")
    edges = np.asarray(edges, dtype=bool)
    ys, xs = np.nonzero(edges)
    if xs.size == 0:
        return []
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)
    h, w = edges.shape
    diag = math.hypot(w, h)
    phis = np.radians(np.arange(0.0, 180.0, theta_res))
    cos_p, sin_p = np.cos(phis), np.sin(phis)
    n_rho = int(math.ceil(2 * diag / rho_res)) + 1
    n_phi = len(phis)

    def cells(px: np.ndarray, py: np.ndarray) -> np.ndarray:
        rho = np.outer(px, cos_p) + np.outer(py, sin_p)
        r_idx = np.floor((rho + diag) / rho_res + 0.5).astype(np.int64)
        return (np.arange(n_phi)[None, :] * n_rho + r_idx).ravel()

    acc = np.bincount(cells(xs, ys), minlength=n_phi * n_rho).astype(np.int64)
    active = np.ones(xs.size, dtype=bool)
    segments: list[LineSegment] = []

    while True:
        peak = int(np.argmax(acc))
        if acc[peak] < votes_min:
            break
        acc[peak] = 0
        phi_i, rho_i = divmod(peak, n_rho)
        rho = rho_i * rho_res - diag
        c, s = cos_p[phi_i], sin_p[phi_i]
        idx = np.flatnonzero(active)
        dist = xs[idx] * c + ys[idx] * s - rho
        band = idx[np.abs(dist) <= rho_res]
        if band.size < votes_min:
            continue
        along = -xs[band] * s + ys[band] * c
        order = np.argsort(along, kind="stable")
        band, along = band[order], along[order]
        breaks = np.flatnonzero(np.diff(along) > max_gap) + 1
        taken = []
        for run in np.split(np.arange(band.size), breaks):
            if run.size < votes_min or along[run[-1]] - along[run[0]] < min_len:
                continue
            members = band[run]
            seg = _fit_segment(xs[members], ys[members])
            if seg is None or seg.length < min_len:
                continue
            segments.append(seg)
            taken.append(members)
        if taken:
            gone = np.concatenate(taken)
            active[gone] = False
            acc -= np.bincount(cells(xs[gone], ys[gone]), minlength=acc.size)
    segments.sort(key=lambda sg: (sg.p0, sg.p1))
    return segments


# --------------------------------------------------------------------------
# Colour and masks
# --------------------------------------------------------------------------

def rgb_to_hsv(img: Image) -> np.ndarray:
    """Hexcone HSV as an ``(h, w, 3)`` float array: hue in degrees [0, 360), s and v in [0, 1].

    Achromatic pixels get hue 0.
    """
    _require(img, Channels.RGB8, "rgb_to_hsv")
    rgb = img.pixels.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=2)
    mn = rgb.min(axis=2)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.where(
        mx == r,
        ((g - b) / safe) % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    hue = np.where(delta > 0, hue * 60.0, 0.0) % 360.0
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([hue, sat, mx], axis=2)


def hsv_in_range(
    hsv: np.ndarray,
    h_lo: float,
    h_hi: float,
    s_lo: float,
    s_hi: float,
    v_lo: float,
    v_hi: float,
) -> np.ndarray:
    """Inclusive box test in HSV space. Hue ranges may not wrap past 360."""
    if not (0 <= h_lo <= h_hi < 360):
        raise ParameterError(f"hue range [{h_lo}, {h_hi}] must be ordered inside [0, 360)")
    if not (0 <= s_lo <= s_hi <= 1) or not (0 <= v_lo <= v_hi <= 1):
        raise ParameterError("saturation/value ranges must be ordered inside [0, 1]")
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    return (h >= h_lo) & (h <= h_hi) & (s >= s_lo) & (s <= s_hi) & (v >= v_lo) & (v <= v_hi)


def mask_or(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return np.logical_or(a, b)


def _neighbourhood(mask: np.ndarray, reduce) -> np.ndarray:
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = padded[1:h + 1, 1:w + 1].copy()
    for dy in range(3):
        for dx in range(3):
            out = reduce(out, padded[dy:dy + h, dx:dx + w])
    return out


def erode(mask: np.ndarray) -> np.ndarray:
    return _neighbourhood(np.asarray(mask, dtype=bool), np.logical_and)


def dilate(mask: np.ndarray) -> np.ndarray:
    return _neighbourhood(np.asarray(mask, dtype=bool), np.logical_or)


def morphology(mask: np.ndarray, op: str) -> np.ndarray:
    """Binary erode/dilate/open/close with a full 3x3 element.

    Pixels outside the raster count as unset for both erosion and dilation.
    """
    if op == "erode":
        return erode(mask)
    if op == "dilate":
        return dilate(mask)
    if op == "open":
        return dilate(erode(mask))
    if op == "close":
        return erode(dilate(mask))
    raise ParameterError(f"unknown morphology op {op!r}")


# --------------------------------------------------------------------------
# Contours and moments
# --------------------------------------------------------------------------

# Clockwise on screen (y down), starting east.
_RING = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


@dataclass(frozen=True)
class Contour:
    """Outer boundary of one 8-connected component plus its raw moments."""

    points: tuple[tuple[int, int], ...]
    m00: int
    m10: int = 0
    m01: int = 0
    bbox: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    @property
    def area(self) -> int:
        return self.m00


def _trace_boundary(comp: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighbour tracing with Jacob's stopping criterion."""
    h, w = comp.shape

    def on(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and bool(comp[y, x])

    sx, sy = start
    points = [start]
    back = 4  # the start is raster-first, so its west neighbour is background
    cx, cy = sx, sy
    first_move = None
    limit = 8 * int(comp.sum()) + 16
    for _ in range(limit):
        found = None
        for k in range(1, 9):
            d = (back + k) % 8
            nx, ny = cx + _RING[d][0], cy + _RING[d][1]
            if on(nx, ny):
                found = d
                break
        if found is None:
            return points  # isolated pixel
        state = ((cx, cy), found)
        if first_move is None:
            first_move = state
        elif state == first_move:
            points.pop()
            return points
        # the background cell checked just before the hit, seen from the new pixel
        prev = (found - 1) % 8
        bx, by = cx + _RING[prev][0], cy + _RING[prev][1]
        cx, cy = cx + _RING[found][0], cy + _RING[found][1]
        back = _RING.index((bx - cx, by - cy))
        points.append((cx, cy))
    return points


def find_contours(mask: np.ndarray) -> list[Contour]:
    """One outer contour per 8-connected component, in raster order of the
    component's first pixel."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    contours = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[sl] == i
        ys, xs = np.nonzero(comp)
        oy, ox = sl[0].start, sl[1].start
        first = int(np.argmin(ys * comp.shape[1] + xs))
        start = (int(xs[first]), int(ys[first]))
        local = _trace_boundary(comp, start)
        points = tuple((x + ox, y + oy) for x, y in local)
        contours.append(
            Contour(
                points=points,
                m00=int(xs.size),
                m10=int(xs.sum()) + ox * int(xs.size),
                m01=int(ys.sum()) + oy * int(ys.size),
                bbox=(ox, oy, sl[1].stop - ox, sl[0].stop - oy),
            )
        )
    return contours


def centroid(contour: Contour) -> Point:
    """First-moment centre of the component's pixels."""
    if contour.m00 <= 0:
        raise DegenerateContourError("contour has zero area")
    return (contour.m10 / contour.m00, contour.m01 / contour.m00)
