"""GLG1 framing over TCP: packet codec, module daemon and host aggregator.

Packet layout (all integers big-endian)::

    0   4s  magic "GLG1"
    4   u8  version (1)
    5   u8  module id (0-2)
    6   u16 flags
    8   u32 sequence number
    12  u64 timestamp, ms since the epoch
    20  u32 body length (bytes after this header)
    24  12 x i32  horiz p0, horiz p1, diag p0, diag p1, laser, corner
    72  [frame block when flag bit 0 is set]
        u16 width, u16 height, u8 encoding (0 raw RGB8, 1 PNG), u32 length, data

Absent points are sent as (-1, -1) with their flag cleared. Sequence
number 0 is the HELLO that opens every connection.
"""
from __future__ import annotations

import collections
import json
import logging
import os
import select
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import imgproc
from .guidance import GuidanceResult, Status, status_for
from .imgproc import Image

log = logging.getLogger(__name__)

MAGIC = b"GLG1"
VERSION = 1
DEFAULT_PORT = 7420
MAX_MODULES = 3
MAX_BODY = 64 * 1024 * 1024

FLAG_FRAME = 1 << 0
FLAG_FULL = 1 << 1
FLAG_LASER = 1 << 2
FLAG_HORIZ = 1 << 3
FLAG_DIAG = 1 << 4
_KNOWN_FLAGS = FLAG_FRAME | FLAG_FULL | FLAG_LASER | FLAG_HORIZ | FLAG_DIAG

ENC_RAW = 0
ENC_PNG = 1

HEADER = struct.Struct(">4sBBHIQI")
GEOMETRY = struct.Struct(">12i")
FRAME_HEADER = struct.Struct(">HHBI")
ABSENT = (-1, -1)

IPoint = tuple[int, int]


class ProtocolError(Exception):
    """Stream-level failure; the connection cannot continue."""


class PacketRejected(ProtocolError):
    """A well-framed packet whose contents are inconsistent; the stream can continue."""


class ValidationError(ValueError):
    """A packet that cannot be encoded."""


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    encoding: int
    data: bytes

    @classmethod
    def from_image(cls, img: Image, encoding: int = ENC_PNG) -> "Frame":
        from .pipeline import as_rgb

        rgb = as_rgb(img)
        data = imgproc.encode_png(rgb) if encoding == ENC_PNG else rgb.data
        return cls(rgb.width, rgb.height, encoding, data)

    def to_image(self) -> Image:
        if self.encoding == ENC_PNG:
            return imgproc.decode_png(self.data)
        return Image.from_bytes(self.width, self.height, imgproc.Channels.RGB8, self.data)


@dataclass(frozen=True)
class GuidancePacket:
    module_id: int
    seq: int
    timestamp_ms: int
    horiz: tuple[IPoint, IPoint] | None = None
    diag: tuple[IPoint, IPoint] | None = None
    laser: IPoint | None = None
    corner: IPoint | None = None
    frame: Frame | None = None

    @property
    def flags(self) -> int:
        f = 0
        if self.frame is not None:
            f |= FLAG_FRAME
        if self.corner is not None:
            f |= FLAG_FULL
        if self.laser is not None:
            f |= FLAG_LASER
        if self.horiz is not None:
            f |= FLAG_HORIZ
        if self.diag is not None:
            f |= FLAG_DIAG
        return f

    @property
    def is_hello(self) -> bool:
        return self.seq == 0

    @property
    def status(self) -> Status:
        return status_for(self.horiz is not None, self.diag is not None, self.laser is not None, self.corner is not None)


def hello_packet(module_id: int, timestamp_ms: int | None = None) -> GuidancePacket:
    ts = int(time.time() * 1000) if timestamp_ms is None else timestamp_ms
    return GuidancePacket(module_id=module_id, seq=0, timestamp_ms=ts)


def _ipt(p) -> IPoint:
    return (int(round(p[0])), int(round(p[1])))


def packet_from_result(
    module_id: int, seq: int, timestamp_ms: int, result: GuidanceResult, frame: Frame | None = None
) -> GuidancePacket:
    sel = result.selection

    def span(line):
        if line is None or line.clipped is None:
            return None
        return (_ipt(line.clipped[0]), _ipt(line.clipped[1]))

    return GuidancePacket(
        module_id=module_id,
        seq=seq,
        timestamp_ms=timestamp_ms,
        horiz=span(sel.horizontal),
        diag=span(sel.diagonal),
        laser=_ipt(result.laser.center) if result.laser is not None else None,
        corner=_ipt(result.corner) if result.corner is not None else None,
        frame=frame,
    )


# --------------------------------------------------------------------------
# Codec
# --------------------------------------------------------------------------

def _check_range(name: str, value: int, lo: int, hi: int) -> None:
    if not isinstance(value, int) or not lo <= value <= hi:
        raise ValidationError(f"{name}={value!r} outside [{lo}, {hi}]")


def encode_packet(p: GuidancePacket) -> bytes:
    _check_range("module_id", p.module_id, 0, MAX_MODULES - 1)
    _check_range("seq", p.seq, 0, 2**32 - 1)
    _check_range("timestamp_ms", p.timestamp_ms, 0, 2**64 - 1)
    if p.corner is not None and (p.horiz is None or p.diag is None or p.laser is None):
        raise ValidationError("a corner needs both lines and the laser point")
    coords: list[int] = []
    for pts in (p.horiz or (ABSENT, ABSENT), p.diag or (ABSENT, ABSENT), (p.laser or ABSENT,), (p.corner or ABSENT,)):
        for x, y in pts:
            _check_range("coordinate", x, -(2**31), 2**31 - 1)
            _check_range("coordinate", y, -(2**31), 2**31 - 1)
            coords += [x, y]
    body = GEOMETRY.pack(*coords)
    if p.frame is not None:
        fr = p.frame
        _check_range("frame width", fr.width, 1, 0xFFFF)
        _check_range("frame height", fr.height, 1, 0xFFFF)
        if fr.encoding not in (ENC_RAW, ENC_PNG):
            raise ValidationError(f"unknown frame encoding {fr.encoding}")
        if fr.encoding == ENC_RAW and len(fr.data) != fr.width * fr.height * 3:
            raise ValidationError("raw frame size does not match its dimensions")
        body += FRAME_HEADER.pack(fr.width, fr.height, fr.encoding, len(fr.data)) + bytes(fr.data)
    if len(body) > MAX_BODY:
        raise ValidationError("packet too large")
    return HEADER.pack(MAGIC, VERSION, p.module_id, p.flags, p.seq, p.timestamp_ms, len(body)) + body


def _check_prefix(buf: bytes) -> None:
    n = min(len(buf), 4)
    if buf[:n] != MAGIC[:n]:
        raise ProtocolError(f"bad magic {bytes(buf[:4])!r}")
    if len(buf) > 4 and buf[4] != VERSION:
        raise ProtocolError(f"unsupported version {buf[4]}")


def _decode_body(module_id: int, flags: int, seq: int, ts: int, body: bytes) -> GuidancePacket:
    if module_id >= MAX_MODULES:
        raise PacketRejected(f"module id {module_id} out of range")
    if flags & ~_KNOWN_FLAGS:
        raise PacketRejected(f"unknown flag bits 0x{flags:04x}")
    if len(body) < GEOMETRY.size:
        raise PacketRejected("body shorter than the geometry block")
    c = GEOMETRY.unpack_from(body, 0)
    pts = [(c[i], c[i + 1]) for i in range(0, 12, 2)]

    def present(bit: int, group: list[IPoint]) -> bool:
        if flags & bit:
            return True
        if any(pt != ABSENT for pt in group):
            raise PacketRejected("flag cleared but point is not the (-1, -1) sentinel")
        return False

    horiz = (pts[0], pts[1]) if present(FLAG_HORIZ, pts[0:2]) else None
    diag = (pts[2], pts[3]) if present(FLAG_DIAG, pts[2:4]) else None
    laser = pts[4] if present(FLAG_LASER, pts[4:5]) else None
    corner = pts[5] if present(FLAG_FULL, pts[5:6]) else None
    if corner is not None and (horiz is None or diag is None or laser is None):
        raise PacketRejected("guidance-full flag without lines and laser")

    rest = body[GEOMETRY.size:]
    frame = None
    if flags & FLAG_FRAME:
        if len(rest) < FRAME_HEADER.size:
            raise PacketRejected("frame flag set but no frame header")
        w, h, enc, n = FRAME_HEADER.unpack_from(rest, 0)
        data = rest[FRAME_HEADER.size:]
        if len(data) != n:
            raise PacketRejected("frame data length disagrees with packet length")
        if enc not in (ENC_RAW, ENC_PNG) or w < 1 or h < 1:
            raise PacketRejected("bad frame header")
        if enc == ENC_RAW and n != w * h * 3:
            raise PacketRejected("raw frame size does not match its dimensions")
        frame = Frame(w, h, enc, bytes(data))
    elif rest:
        raise PacketRejected("trailing bytes without the frame flag")
    return GuidancePacket(module_id, seq, ts, horiz, diag, laser, corner, frame)


def decode_packet(data: bytes) -> GuidancePacket:
    """Decode exactly one packet from ``data``."""
    data = bytes(data)
    _check_prefix(data)
    if len(data) < HEADER.size:
        raise ProtocolError("truncated header")
    _, _, module_id, flags, seq, ts, body_len = HEADER.unpack_from(data, 0)
    if len(data) != HEADER.size + body_len:
        raise ProtocolError("buffer length disagrees with declared body length")
    return _decode_body(module_id, flags, seq, ts, data[HEADER.size:])


class PacketDecoder:
    """Incremental decoder: feed arbitrary chunks, get whole packets back.

    Inconsistent packets are skipped and counted in ``rejected``; framing
    errors raise :class:`ProtocolError`.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.rejected = 0
        self.last_rejection: str | None = None

    def feed(self, chunk: bytes) -> list[GuidancePacket]:
        self._buf += chunk
        out = []
        while True:
            _check_prefix(self._buf)
            if len(self._buf) < HEADER.size:
                break
            _, _, module_id, flags, seq, ts, body_len = HEADER.unpack_from(self._buf, 0)
            if body_len > MAX_BODY:
                raise ProtocolError(f"declared body length {body_len} too large")
            total = HEADER.size + body_len
            if len(self._buf) < total:
                break
            body = bytes(self._buf[HEADER.size:total])
            del self._buf[:total]
            try:
                out.append(_decode_body(module_id, flags, seq, ts, body))
            except PacketRejected as exc:
                self.rejected += 1
                self.last_rejection = str(exc)
                log.warning("rejected packet seq=%d: %s", seq, exc)
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)

    def close(self) -> None:
        """Signal end of stream; raises if it ended mid-packet."""
        if self._buf:
            raise ProtocolError(f"stream ended inside a packet ({len(self._buf)} bytes pending)")


# --------------------------------------------------------------------------
# Module daemon
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WireSettings:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    slots: int = MAX_MODULES
    fps: float = 10.0
    retries: int = 5
    retry_delay: float = 1.0
    encoding: str = "png"
    queue_depth: int = 4

    def __post_init__(self) -> None:
        if not 1 <= self.slots <= MAX_MODULES:
            raise ValueError(f"slots must lie in [1, {MAX_MODULES}]")
        if self.encoding not in ("png", "raw"):
            raise ValueError("encoding must be png or raw")
        if self.retries < 1 or self.queue_depth < 1 or self.retry_delay < 0 or self.fps < 0:
            raise ValueError("invalid wire settings")
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError("port out of range")


def directory_source(path: str | Path) -> Iterator[Path]:
    """Image files in ``path`` in name order."""
    exts = {".png", ".ppm", ".pgm", ".pnm"}
    for p in sorted(Path(path).iterdir()):
        if p.is_file() and p.suffix.lower() in exts:
            yield p


def synth_source(count: int, distances=(1, 2, 3, 4, 5), seed: int = 0, spec=None) -> Iterator[Image]:
    """``count`` synthetic frames cycling through ``distances``."""
    from dataclasses import replace

    from . import synth_scene

    base = spec or synth_scene.SceneSpec()
    distances = list(distances)
    for i in range(count):
        frame_spec = replace(base, ground_distance=float(distances[i % len(distances)]))
        img, _ = synth_scene.render(frame_spec, synth_scene.derive_seed(seed, i))
        yield img


class _Sender(threading.Thread):
    """Owns the socket. Sends HELLO on every (re)connect, then drains the queue.

    Connection failures share one budget of ``settings.retries`` attempts; the
    budget refills once a connection has stayed up for a retry interval.
    """

    def __init__(self, address, module_id: int, settings: WireSettings, stop: threading.Event):
        super().__init__(daemon=True, name=f"glg-sender-{module_id}")
        self.address = address
        self.module_id = module_id
        self.settings = settings
        self.stop_event = stop
        self.queue: collections.deque[bytes] = collections.deque()
        self.cond = threading.Condition()
        self.finished = False
        self.failed = False
        self.dropped = 0
        self.sent = 0
        self.failures = 0
        self.sock: socket.socket | None = None
        self._since = 0.0

    def connect(self) -> bool:
        while self.failures < self.settings.retries:
            if self.stop_event.is_set():
                return False
            try:
                sock = socket.create_connection(self.address, timeout=5.0)
                sock.sendall(encode_packet(hello_packet(self.module_id)))
            except OSError as exc:
                self._failed_attempt(f"connect to {self.address[0]}:{self.address[1]} failed: {exc}")
                continue
            self.sock = sock
            self._since = time.monotonic()
            log.info("module %d connected to %s:%d", self.module_id, *self.address)
            return True
        return False

    def _failed_attempt(self, why: str) -> None:
        self.failures += 1
        log.warning("%s (attempt %d/%d)", why, self.failures, self.settings.retries)
        if self.failures < self.settings.retries:
            self.stop_event.wait(self.settings.retry_delay)

    def _peer_closed(self) -> bool:
        # the host never talks back, so a readable socket means EOF or reset
        try:
            readable, _, _ = select.select([self.sock], [], [], 0)
            return bool(readable) and not self.sock.recv(1, socket.MSG_PEEK)
        except OSError:
            return True

    def put(self, data: bytes) -> None:
        with self.cond:
            if len(self.queue) >= self.settings.queue_depth:
                self.queue.popleft()
                self.dropped += 1
                log.warning("send queue full, dropped oldest packet (%d so far)", self.dropped)
            self.queue.append(data)
            self.cond.notify()

    def finish(self) -> None:
        with self.cond:
            self.finished = True
            self.cond.notify()

    def run(self) -> None:
        while True:
            with self.cond:
                while not self.queue and not self.finished:
                    self.cond.wait(0.1)
                if not self.queue:
                    break
                data = self.queue.popleft()
            if not self._send(data):
                with self.cond:
                    self.failed = True
                break
            self.sent += 1
        self._close()

    def _send(self, data: bytes) -> bool:
        while True:
            if self.sock is None and not self.connect():
                return False
            if self._peer_closed():
                self._close()
                self._failed_attempt("host closed the connection")
                continue
            try:
                self.sock.sendall(data)
            except OSError as exc:
                self._close()
                self._failed_attempt(f"connection lost: {exc}")
                continue
            if time.monotonic() - self._since >= max(self.settings.retry_delay, 0.5):
                self.failures = 0
            return True

    def _close(self) -> None:
        if self.sock is not None:
            try:
                self.sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            self.sock.close()
            self.sock = None


def run_module_daemon(
    source: Iterable,
    params=None,
    host: str = "127.0.0.1",
    port: int = DEFAULT_PORT,
    module_id: int = 0,
    fps: float | None = None,
    settings: WireSettings | None = None,
    stop: threading.Event | None = None,
) -> int:
    """Process every frame from ``source`` and stream it to the host.

    ``source`` yields :class:`Image` objects or image paths. Returns the
    process exit code: 0 when the source ran dry, 1 when the host could not
    be reached within the retry budget.
    """
    from .pipeline import process_frame

    settings = settings or WireSettings()
    fps = settings.fps if fps is None else fps
    _check_range("module_id", module_id, 0, MAX_MODULES - 1)
    stop = stop or threading.Event()
    sender = _Sender((host, port), module_id, settings, stop)
    if not sender.connect():
        log.error("host %s:%d unreachable after %d attempts", host, port, settings.retries)
        return 1
    sender.start()
    encoding = ENC_PNG if settings.encoding == "png" else ENC_RAW
    period = 1.0 / fps if fps and fps > 0 else 0.0
    seq = 0
    for item in source:
        started = time.monotonic()
        if stop.is_set() or sender.failed:
            break
        if isinstance(item, Image):
            img = item
        else:
            try:
                img = imgproc.read_image(item)
            except Exception as exc:  # noqa: BLE001 - any unreadable file is skipped
                log.warning("skipping unreadable frame %s: %s", item, exc)
                continue
        result, annotated = process_frame(img, params)
        seq += 1
        pkt = packet_from_result(module_id, seq, int(time.time() * 1000), result, Frame.from_image(annotated, encoding))
        sender.put(encode_packet(pkt))
        if period:
            remaining = period - (time.monotonic() - started)
            if remaining > 0 and stop.wait(remaining):
                break
    sender.finish()
    sender.join()
    if sender.failed:
        log.error("giving up: host %s:%d unreachable", host, port)
        return 1
    log.info("module %d done: %d packets sent, %d dropped", module_id, sender.sent, sender.dropped)
    return 0


# --------------------------------------------------------------------------
# Host aggregator
# --------------------------------------------------------------------------

@dataclass
class ModuleStats:
    connected: bool = False
    packets: int = 0
    gaps: int = 0
    rejected: int = 0
    last_seq: int = 0
    latest: GuidancePacket | None = None


@dataclass
class HostState:
    slots: int = MAX_MODULES
    modules: dict[int, ModuleStats] = field(default_factory=lambda: {i: ModuleStats() for i in range(MAX_MODULES)})
    refused: int = 0

    def active(self) -> int:
        return sum(1 for m in self.modules.values() if m.connected)


class Host:
    """Accepts module streams, writes frames and a JSON-lines log."""

    def __init__(self, host: str, port: int, out_dir: str | Path, slots: int = MAX_MODULES):
        self.bind = (host, port)
        self.out_dir = Path(out_dir)
        self.state = HostState(slots=slots)
        self._lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener: socket.socket | None = None
        self._log_file = None

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None
        return self._listener.getsockname()[:2]

    def start(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._log_file = open(self.out_dir / "guidance.log", "a", encoding="utf-8")
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(self.bind)
        sock.listen(8)
        sock.settimeout(0.2)
        self._listener = sock
        t = threading.Thread(target=self._accept_loop, name="glg-accept", daemon=True)
        t.start()
        self._threads.append(t)
        log.info("host listening on %s:%d", *self.address)

    def stop(self) -> None:
        self._stop.set()
        for t in list(self._threads):
            t.join(timeout=5.0)
        if self._listener is not None:
            self._listener.close()
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def __enter__(self) -> "Host":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def summary(self) -> dict[int, dict]:
        with self._lock:
            return {
                mid: {"connected": m.connected, "packets": m.packets, "gaps": m.gaps, "rejected": m.rejected}
                for mid, m in self.state.modules.items()
            }

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve, args=(conn, peer), daemon=True, name=f"glg-conn-{peer[1]}")
            t.start()
            self._threads.append(t)

    def _claim(self, module_id: int) -> bool:
        with self._lock:
            stats = self.state.modules[module_id]
            if stats.connected or self.state.active() >= self.state.slots:
                self.state.refused += 1
                return False
            stats.connected = True
            stats.last_seq = 0
            return True

    def _release(self, module_id: int) -> None:
        with self._lock:
            self.state.modules[module_id].connected = False

    def _serve(self, conn: socket.socket, peer) -> None:
        conn.settimeout(0.2)
        decoder = PacketDecoder()
        module_id: int | None = None
        try:
            while not self._stop.is_set():
                try:
                    chunk = conn.recv(65536)
                except socket.timeout:
                    continue
                if not chunk:
                    decoder.close()
                    log.info("module %s closed its stream", module_id)
                    break
                for pkt in decoder.feed(chunk):
                    if module_id is None:
                        if not pkt.is_hello or pkt.flags != 0:
                            raise ProtocolError("first packet is not a HELLO")
                        if not self._claim(pkt.module_id):
                            raise ProtocolError(f"module id {pkt.module_id} refused (duplicate or no free slot)")
                        module_id = pkt.module_id
                        log.info("module %d connected from %s", module_id, peer)
                        continue
                    self._handle(module_id, pkt)
                if module_id is not None and decoder.rejected:
                    with self._lock:
                        self.state.modules[module_id].rejected = decoder.rejected
        except ProtocolError as exc:
            log.warning("connection %s (module %s) dropped: %s", peer, module_id, exc)
        except OSError as exc:
            log.warning("connection %s (module %s) failed: %s", peer, module_id, exc)
        finally:
            conn.close()
            if module_id is not None:
                self._release(module_id)

    def _handle(self, module_id: int, pkt: GuidancePacket) -> None:
        if pkt.module_id != module_id:
            raise ProtocolError(f"module id changed from {module_id} to {pkt.module_id}")
        with self._lock:
            stats = self.state.modules[module_id]
            if pkt.seq <= stats.last_seq:
                raise ProtocolError(f"sequence went backwards: {pkt.seq} after {stats.last_seq}")
            if pkt.seq != stats.last_seq + 1:
                stats.gaps += 1
            stats.last_seq = pkt.seq
            stats.packets += 1
            stats.latest = pkt
        if pkt.frame is not None:
            self._write_frame(module_id, pkt)
        entry = {
            "module_id": module_id,
            "seq": pkt.seq,
            "timestamp_ms": pkt.timestamp_ms,
            "status": pkt.status.value,
            "corner": list(pkt.corner) if pkt.corner is not None else None,
        }
        with self._log_lock:
            if self._log_file is not None:
                self._log_file.write(json.dumps(entry) + "\n")
                self._log_file.flush()

    def _write_frame(self, module_id: int, pkt: GuidancePacket) -> None:
        folder = self.out_dir / str(module_id)
        folder.mkdir(parents=True, exist_ok=True)
        data = pkt.frame.data if pkt.frame.encoding == ENC_PNG else imgproc.encode_png(pkt.frame.to_image())
        final = folder / f"{pkt.seq}.png"
        tmp = folder / f".{pkt.seq}.png.part"
        tmp.write_bytes(data)
        os.replace(tmp, final)


def run_host(
    host: str = "0.0.0.0",
    port: int = DEFAULT_PORT,
    out_dir: str | Path = "host_out",
    slots: int = MAX_MODULES,
    stop: threading.Event | None = None,
) -> int:
    """Serve until SIGINT/SIGTERM (or ``stop`` is set), then print per-module counters."""
    import signal

    stop = stop or threading.Event()
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
    server = Host(host, port, out_dir, slots)
    try:
        server.start()
    except OSError as exc:
        log.error("cannot listen on %s:%d: %s", host, port, exc)
        return 1
    print(f"listening on {server.address[0]}:{server.address[1]}", flush=True)
    try:
        while not stop.wait(0.2):
            pass
    finally:
        server.stop()
        for mid, s in server.summary().items():
            print(f"module {mid}: packets={s['packets']} gaps={s['gaps']} rejected={s['rejected']}", flush=True)
    return 0
