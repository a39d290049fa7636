"""``key = value`` configuration with [canny], [hough], [line], [laser], [scene] and [wire] sections.

Example::

    [canny]
    low = 40
    high = 120

    [line]
    score_weights = 0.6, 0.3, 0.1

Unknown sections or keys, bad values and failed validation are rejected
with the offending line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .guidance import ModuleGeometry
from .laser_detect import HsvRange, LaserParams
from .line_detect import BlurParams, CannyParams, DetectorParams, HoughParams, LineParams
from .pipeline import PipelineParams
from .synth_scene import SceneSpec
from .wire import WireSettings


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    scene: SceneSpec = field(default_factory=SceneSpec)
    wire: WireSettings = field(default_factory=WireSettings)


def _float(v: str) -> float:
    return float(v)


def _int(v: str) -> int:
    return int(v)


def _floats(n: int):
    def parse(v: str) -> tuple[float, ...]:
        parts = [p.strip() for p in v.split(",")]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated numbers")
        return tuple(float(p) for p in parts)

    return parse


def _choice(*options: str):
    def parse(v: str) -> str:
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v

    return parse


def _str(v: str) -> str:
    return v


_KEYS: dict[str, dict[str, object]] = {
    "canny": {"blur_sigma": _float, "blur_ksize": _int, "low": _float, "high": _float},
    "hough": {"rho_res": _float, "theta_res": _float, "votes_min": _int, "min_len": _float, "max_gap": _float},
    "line": {
        "theta_horiz_max": _float,
        "theta_diag_lo": _float,
        "theta_diag_hi": _float,
        "score_weights": _floats(3),
        "diag_side": _choice("left", "right"),
        "horiz_side": _choice("bottom", "top"),
        "min_separation": _float,
        "margin": _float,
    },
    "laser": {
        "core_h": _floats(2), "core_s": _floats(2), "core_v": _floats(2),
        "bright_h": _floats(2), "bright_s": _floats(2), "bright_v": _floats(2),
        "area_min": _int, "area_max": _int, "blur_sigma": _float, "blur_ksize": _int,
    },
    "scene": {
        "width": _int, "height": _int, "focal": _float, "ground_distance": _float,
        "edge_theta": _float, "mount_height": _float, "laser_radius": _float,
        "noise": _float, "grid_pitch": _float, "grid_contrast": _float, "supersample": _int,
        "suction_tip_offset": _float, "laser_axis_offset": _float, "camera_axis_offset": _float,
    },
    "wire": {
        "host": _str, "port": _int, "slots": _int, "fps": _float, "retries": _int,
        "retry_delay": _float, "encoding": _choice("png", "raw"), "queue_depth": _int,
    },
}


def _build(values: dict[str, dict[str, object]]) -> Config:
    c = values.get("canny", {})
    det = DetectorParams(
        blur=replace(BlurParams(), **{k[5:]: v for k, v in c.items() if k.startswith("blur_")}),
        canny=replace(CannyParams(), **{k: v for k, v in c.items() if not k.startswith("blur_")}),
        hough=replace(HoughParams(), **values.get("hough", {})),
        line=replace(LineParams(), **values.get("line", {})),
    )
    lz = dict(values.get("laser", {}))
    base = LaserParams()
    ranges = {}
    for name, default in (("core", base.core_green), ("bright", base.bright_green)):
        h = lz.pop(f"{name}_h", (default.h_lo, default.h_hi))
        s = lz.pop(f"{name}_s", (default.s_lo, default.s_hi))
        v = lz.pop(f"{name}_v", (default.v_lo, default.v_hi))
        ranges[f"{name}_green"] = HsvRange(h[0], h[1], s[0], s[1], v[0], v[1])
    laser = replace(base, **ranges, **lz)
    sc = dict(values.get("scene", {}))
    geo_keys = {f.name for f in dataclasses.fields(ModuleGeometry)}
    geo = replace(ModuleGeometry(), **{k: sc.pop(k) for k in list(sc) if k in geo_keys})
    scene = replace(SceneSpec(), geometry=geo, **sc)
    wire = replace(WireSettings(), **values.get("wire", {}))
    return Config(PipelineParams(det, laser), scene, wire)


def parse_config(text: str) -> Config:
    values: dict[str, dict[str, object]] = {}
    last_line: dict[str, int] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {n}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in _KEYS:
                raise ConfigError(f"line {n}: unknown section [{section}]")
            values.setdefault(section, {})
            last_line[section] = n
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        if section is None:
            raise ConfigError(f"line {n}: key outside any section")
        key, _, val = (part.strip() for part in line.partition("="))
        parser = _KEYS[section].get(key)
        if parser is None:
            raise ConfigError(f"line {n}: unknown key {key!r} in [{section}]")
        try:
            values[section][key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {exc}") from None
        last_line[section] = n
    # cross-field checks; a failing section is reported at its last line
    seen: dict[str, dict[str, object]] = {}
    for name in last_line:
        seen[name] = values[name]
        try:
            _build(seen)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {last_line[name]}: [{name}] {exc}") from None
    return _build(values)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
