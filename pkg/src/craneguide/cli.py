"""Command line: ``craneguide {process,scene,module,host,eval}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Settings resolve as flags > environment (``GLG_PORT``) > config file > defaults.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import synth_scene, wire
from .config import Config, ConfigError, load_config
from .guidance import Status, report_json
from .imgproc import read_image, write_image
from .pipeline import guide, process_frame

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_distances(text: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad distance list {text!r}") from None
    if not values or any(not (math.isfinite(v) and v > 0) for v in values):
        raise UsageError(f"distance list must hold positive numbers, got {text!r}")
    return values


def resolve_port(flag: int | None, cfg: Config) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("GLG_PORT")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"GLG_PORT={env!r} is not a port number") from None
    return cfg.wire.port


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_process(args, cfg: Config) -> int:
    try:
        img = read_image(args.input)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    result, annotated = process_frame(img, cfg.pipeline)
    line = report_json(result)
    try:
        if args.output:
            write_image(args.output, annotated)
        if args.report:
            Path(args.report).write_text(line + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(line)
    return EXIT_OK


def cmd_scene(args, cfg: Config) -> int:
    distances = parse_distances(args.distances)
    try:
        frames = synth_scene.sweep(distances, args.seed, cfg.scene)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for i, (img, truth) in enumerate(frames):
        png, _ = synth_scene.write_scene(args.out, f"scene_{i:02d}", img, truth)
        print(png)
    return EXIT_OK


def evaluate(distances, seeds: int, seed: int, cfg: Config):
    """Run the pipeline over the synthetic sweep; one row per rendered frame."""
    rows = []
    for s in range(seeds):
        frames = synth_scene.sweep(distances, seed + s, cfg.scene)
        for (img, truth), d in zip(frames, distances):
            result = guide(img, cfg.pipeline)
            corner_err = laser_err = theta_err = math.nan
            if result.corner is not None:
                corner_err = math.dist(result.corner, truth.landing_pixel)
            if result.laser is not None:
                laser_err = math.dist(result.laser.center, truth.laser_pixel)
            src = result.selection.diagonal_source
            if src is not None:
                diff = abs(src.theta - truth.edge_theta) % 180.0
                theta_err = min(diff, 180.0 - diff)
            rows.append(
                {
                    "distance": d,
                    "seed": truth.seed,
                    "corner_err": corner_err,
                    "laser_err": laser_err,
                    "theta_err": theta_err,
                    "status": result.status.value,
                }
            )
    return rows


def corner_budget(distance: float, cfg: Config, slack: float) -> float:
    return cfg.scene.focal * cfg.scene.geometry.camera_laser_offset / 1000.0 / distance + slack


def check_rows(rows, cfg: Config, corner_slack=3.0, laser_tol=1.0, theta_tol=2.0, min_full=0.95) -> list[str]:
    problems = []
    full = sum(r["status"] == Status.FULL.value for r in rows)
    if rows and full / len(rows) < min_full:
        problems.append(f"Full rate {full}/{len(rows)} below {min_full:.0%}")
    for r in rows:
        tag = f"d={r['distance']:g} seed={r['seed']}"
        if r["status"] == Status.FULL.value and not r["corner_err"] <= corner_budget(r["distance"], cfg, corner_slack):
            problems.append(f"{tag}: corner error {r['corner_err']:.3f} px over budget")
        if not r["laser_err"] <= laser_tol:
            problems.append(f"{tag}: laser error {r['laser_err']:.3f} px")
        if not r["theta_err"] <= theta_tol:
            problems.append(f"{tag}: theta error {r['theta_err']:.3f} deg")
    return problems


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.4f}"


def format_table(rows) -> str:
    lines = ["distance_m\tseed\tcorner_err_px\tlaser_err_px\ttheta_err_deg\tstatus"]
    for r in rows:
        lines.append(
            f"{r['distance']:g}\t{r['seed']}\t{_fmt(r['corner_err'])}\t{_fmt(r['laser_err'])}\t"
            f"{_fmt(r['theta_err'])}\t{r['status']}"
        )
    return "\n".join(lines) + "\n"


def cmd_eval(args, cfg: Config) -> int:
    distances = parse_distances(args.distances)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    try:
        rows = evaluate(distances, args.seeds, args.seed, cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    table = format_table(rows)
    if args.out:
        try:
            Path(args.out).write_text(table, encoding="utf-8")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    sys.stdout.write(table)
    problems = check_rows(rows, cfg, args.corner_slack, args.laser_tol, args.theta_tol, args.min_full)
    for p in problems:
        print(f"FAIL {p}", file=sys.stderr)
    return EXIT_RUNTIME if problems else EXIT_OK


def cmd_module(args, cfg: Config) -> int:
    port = resolve_port(args.port, cfg)
    settings = replace(
        cfg.wire,
        retries=args.retries if args.retries is not None else cfg.wire.retries,
        retry_delay=args.retry_delay if args.retry_delay is not None else cfg.wire.retry_delay,
        encoding=args.encoding or cfg.wire.encoding,
    )
    if args.frames:
        source = wire.directory_source(args.frames)
    else:
        source = wire.synth_source(args.synth, parse_distances(args.distances), args.seed, cfg.scene)
    fps = args.fps if args.fps is not None else cfg.wire.fps
    return wire.run_module_daemon(
        source, cfg.pipeline, args.host or cfg.wire.host, port, args.module_id, fps, settings
    )


def cmd_host(args, cfg: Config) -> int:
    port = resolve_port(args.port, cfg)
    slots = args.slots if args.slots is not None else cfg.wire.slots
    return wire.run_host(args.listen, port, args.out, slots)


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="craneguide", description="Crane lowering guidance from a side-mounted camera.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key=value config file")

    p = sub.add_parser("process", help="run the guidance pipeline on one image")
    p.add_argument("--input", required=True, help="input PNG/PPM")
    p.add_argument("--output", help="annotated PNG to write")
    p.add_argument("--report", help="one-line JSON guidance report to write")
    add_config(p)
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("scene", help="render synthetic frames with ground truth")
    p.add_argument("--distances", default="1,2,3,4,5", help="comma-separated ground distances in metres")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    add_config(p)
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("module", help="camera-module daemon streaming to a host")
    p.add_argument("--host", help="host address (default from config, 127.0.0.1)")
    p.add_argument("--port", type=int, help="host port (default $GLG_PORT or 7420)")
    p.add_argument("--module-id", type=int, default=0, choices=range(wire.MAX_MODULES), help="module slot 0-2")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames", help="directory of frames to stream in name order")
    src.add_argument("--synth", type=int, metavar="N", help="stream N synthetic frames")
    p.add_argument("--distances", default="1,2,3,4,5", help="distances cycled by --synth")
    p.add_argument("--seed", type=int, default=0, help="seed for --synth")
    p.add_argument("--fps", type=float, help="frame rate cap (0 = uncapped)")
    p.add_argument("--encoding", choices=("png", "raw"), help="frame encoding on the wire")
    p.add_argument("--retries", type=int, help="connection attempts before giving up")
    p.add_argument("--retry-delay", type=float, help="seconds between attempts")
    add_config(p)
    p.set_defaults(func=cmd_module)

    p = sub.add_parser("host", help="aggregate up to three module streams")
    p.add_argument("--listen", default="0.0.0.0", help="bind address")
    p.add_argument("--port", type=int, help="listen port (default $GLG_PORT or 7420)")
    p.add_argument("--out", default="host_out", help="output directory for frames and guidance.log")
    p.add_argument("--slots", type=int, help="concurrent module slots (1-3)")
    add_config(p)
    p.set_defaults(func=cmd_host)

    p = sub.add_parser("eval", help="accuracy sweep over synthetic distances")
    p.add_argument("--distances", default="1,2,3,4,5", help="comma-separated ground distances in metres")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--seeds", type=int, default=1, help="seeds per distance")
    p.add_argument("--out", help="tab-separated report to write")
    p.add_argument("--corner-slack", type=float, default=3.0, help="px allowed on top of the laser-offset budget")
    p.add_argument("--laser-tol", type=float, default=1.0, help="max laser centroid error, px")
    p.add_argument("--theta-tol", type=float, default=2.0, help="max diagonal angle error, degrees")
    p.add_argument("--min-full", type=float, default=0.95, help="min fraction of frames with status Full")
    add_config(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
