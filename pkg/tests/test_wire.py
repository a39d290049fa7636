from __future__ import annotations

import json
import logging
import socket
import struct
import threading
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import blank
from craneguide import imgproc, synth_scene
from craneguide.wire import (
    ENC_PNG,
    ENC_RAW,
    FLAG_LASER,
    Frame,
    GuidancePacket,
    Host,
    PacketDecoder,
    PacketRejected,
    ProtocolError,
    ValidationError,
    WireSettings,
    _Sender,
    decode_packet,
    directory_source,
    encode_packet,
    hello_packet,
    run_module_daemon,
    synth_source,
)

GOLDEN = GuidancePacket(
    module_id=1,
    seq=7,
    timestamp_ms=1_700_000_000_123,
    horiz=((0, 300), (639, 301)),
    diag=((208, 479), (431, 0)),
    laser=(320, 243),
    corner=(319, 243),
    frame=Frame(2, 2, ENC_RAW, bytes(range(12))),
)

GOLDEN_HEX = (
    "474c4731" "01" "01" "001f" "00000007" "0000018bcfe5687b" "00000045"
    "00000000" "0000012c" "0000027f" "0000012d"
    "000000d0" "000001df" "000001af" "00000000"
    "00000140" "000000f3" "0000013f" "000000f3"
    "0002" "0002" "00" "0000000c" "000102030405060708090a0b"
)


def random_packet(rng: np.random.Generator) -> GuidancePacket:
    def pt():
        return (int(rng.integers(-(2**31), 2**31)), int(rng.integers(-(2**31), 2**31)))

    horiz = (pt(), pt()) if rng.random() < 0.7 else None
    diag = (pt(), pt()) if rng.random() < 0.7 else None
    laser = pt() if rng.random() < 0.7 else None
    corner = pt() if horiz and diag and laser and rng.random() < 0.7 else None
    frame = None
    if rng.random() < 0.5:
        w, h = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        if rng.random() < 0.5:
            frame = Frame(w, h, ENC_RAW, rng.integers(0, 256, size=w * h * 3, dtype=np.uint8).tobytes())
        else:
            frame = Frame(w, h, ENC_PNG, rng.integers(0, 256, size=int(rng.integers(0, 40)), dtype=np.uint8).tobytes())
    return GuidancePacket(
        module_id=int(rng.integers(0, 3)),
        seq=int(rng.integers(0, 2**32)),
        timestamp_ms=int(rng.integers(0, 2**63)),
        horiz=horiz,
        diag=diag,
        laser=laser,
        corner=corner,
        frame=frame,
    )


# ---- codec -------------------------------------------------------------

def test_golden_hex_dump():
    assert encode_packet(GOLDEN).hex() == GOLDEN_HEX
    assert decode_packet(bytes.fromhex(GOLDEN_HEX)) == GOLDEN


def test_golden_layout_by_hand():
    coords = [0, 300, 639, 301, 208, 479, 431, 0, 320, 243, 319, 243]
    body = b"".join(struct.pack(">i", c) for c in coords)
    body += struct.pack(">H", 2) + struct.pack(">H", 2) + b"\x00" + struct.pack(">I", 12) + bytes(range(12))
    head = b"GLG1" + bytes([1, 1]) + struct.pack(">H", 0x1F) + struct.pack(">I", 7)
    head += struct.pack(">Q", 1_700_000_000_123) + struct.pack(">I", len(body))
    assert encode_packet(GOLDEN) == head + body


def test_minimal_packet_is_72_bytes():
    data = encode_packet(GuidancePacket(module_id=0, seq=0, timestamp_ms=0))
    assert len(data) == 72
    assert data[:4] == bytes([0x47, 0x4C, 0x47, 0x31])
    assert data[24:] == struct.pack(">12i", *([-1] * 12))


def test_raw_frame_size():
    p = GuidancePacket(0, 1, 0, frame=Frame(2, 2, ENC_RAW, bytes(12)))
    assert len(encode_packet(p)) == 72 + 9 + 12


def test_encode_rejects_bad_module_id():
    with pytest.raises(ValidationError):
        encode_packet(GuidancePacket(module_id=3, seq=1, timestamp_ms=0))


def test_encode_rejects_corner_without_lines():
    with pytest.raises(ValidationError):
        encode_packet(GuidancePacket(module_id=0, seq=1, timestamp_ms=0, corner=(1, 1)))


def test_round_trip_random():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        p = random_packet(rng)
        assert decode_packet(encode_packet(p)) == p


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2), st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1),
       st.one_of(st.none(), st.tuples(st.integers(-(2**31), 2**31 - 1), st.integers(-(2**31), 2**31 - 1))))
def test_round_trip_property(module_id, seq, ts, laser):
    p = GuidancePacket(module_id, seq, ts, laser=laser)
    assert decode_packet(encode_packet(p)) == p


def test_decode_bad_magic_and_version():
    data = bytearray(encode_packet(GOLDEN))
    with pytest.raises(ProtocolError):
        decode_packet(b"XXXX" + bytes(data[4:]))
    data[4] = 2
    with pytest.raises(ProtocolError):
        PacketDecoder().feed(bytes(data))


def test_decoder_split_header():
    data = encode_packet(GOLDEN)
    dec = PacketDecoder()
    assert dec.feed(data[:10]) == []
    assert dec.feed(data[10:]) == [GOLDEN]
    dec.close()


def test_decoder_byte_at_a_time():
    rng = np.random.default_rng(1)
    packets = [random_packet(rng) for _ in range(5)]
    stream = b"".join(encode_packet(p) for p in packets)
    dec = PacketDecoder()
    got = []
    for i in range(len(stream)):
        got += dec.feed(stream[i:i + 1])
    assert got == packets


def test_decoder_inconsistent_flags_is_not_fatal():
    bad = bytearray(encode_packet(GuidancePacket(0, 1, 0, laser=(5, 5))))
    bad[7] &= ~FLAG_LASER & 0xFF  # clear the laser bit, keep the point
    with pytest.raises(PacketRejected):
        decode_packet(bytes(bad))
    good = GuidancePacket(0, 2, 0)
    dec = PacketDecoder()
    assert dec.feed(bytes(bad) + encode_packet(good)) == [good]
    assert dec.rejected == 1


def test_decoder_truncated_stream():
    data = encode_packet(GOLDEN)
    dec = PacketDecoder()
    dec.feed(data[:-3])
    with pytest.raises(ProtocolError):
        dec.close()
    dec = PacketDecoder()
    dec.feed(data)
    dec.close()  # clean end at a packet boundary


def test_frame_round_trip_png():
    img = blank(5, 4, (10, 200, 30))
    fr = Frame.from_image(img, ENC_PNG)
    assert fr.to_image() == img
    assert Frame.from_image(img, ENC_RAW).to_image() == img


# ---- daemon pieces -------------------------------------------------------

def test_send_queue_drops_oldest():
    s = _Sender(("127.0.0.1", 9), 0, WireSettings(queue_depth=2), threading.Event())
    for i in range(5):
        s.put(bytes([i]))
    assert list(s.queue) == [b"\x03", b"\x04"]
    assert s.dropped == 3


def test_directory_source_order(tmp_path):
    for name in ["b.png", "a.png", "c.txt", "d.ppm"]:
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in directory_source(tmp_path)] == ["a.png", "b.png", "d.ppm"]


class Capture:
    """Raw TCP sink recording every byte of one connection."""

    def __init__(self):
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(1)
        self.port = self.sock.getsockname()[1]
        self.data = bytearray()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        conn, _ = self.sock.accept()
        with conn:
            while chunk := conn.recv(65536):
                self.data += chunk
        self.sock.close()


def test_directory_daemon_sends_hello_then_frames(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    for i in range(10):
        imgproc.write_image(frames / f"f{i:02d}.png", blank(48, 32, (i * 20, 90, 90)))
    (frames / "zz_broken.png").write_bytes(b"not an image")
    cap = Capture()
    rc = run_module_daemon(directory_source(frames), host="127.0.0.1", port=cap.port, module_id=2, fps=0)
    cap.thread.join(5)
    assert rc == 0
    packets = PacketDecoder().feed(bytes(cap.data))
    assert packets[0].is_hello and packets[0].flags == 0 and packets[0].module_id == 2
    assert [p.seq for p in packets[1:]] == list(range(1, 11))
    assert all(p.frame is not None and p.frame.encoding == ENC_PNG for p in packets[1:])


def test_unreachable_host_exits_nonzero(caplog):
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    settings = WireSettings(retry_delay=0.05)
    with caplog.at_level(logging.WARNING, logger="craneguide.wire"):
        rc = run_module_daemon(iter([blank(8, 8)]), port=port, settings=settings)
    assert rc == 1
    assert sum("(attempt " in r.getMessage() for r in caplog.records) == 5


def test_fps_cap():
    cap = Capture()
    start = time.monotonic()
    rc = run_module_daemon((blank(32, 24) for _ in range(10)), port=cap.port, fps=5)
    elapsed = time.monotonic() - start
    cap.thread.join(5)
    assert rc == 0
    assert elapsed >= 2.0
    assert len(PacketDecoder().feed(bytes(cap.data))) == 11


# ---- host ----------------------------------------------------------------

def read_log(out: Path) -> list[dict]:
    return [json.loads(line) for line in (out / "guidance.log").read_text().splitlines()]


def wait_for(pred, timeout=5.0):
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if pred():
            return True
        time.sleep(0.02)
    return pred()


def raw_client(port: int):
    return socket.create_connection(("127.0.0.1", port), timeout=5)


def test_loopback_three_modules(tmp_path):
    out = tmp_path / "out"
    start = time.monotonic()
    with Host("127.0.0.1", 0, out) as host:
        port = host.address[1]
        codes = {}

        def run(mid):
            src = synth_source(10, seed=mid)
            codes[mid] = run_module_daemon(src, port=port, module_id=mid, fps=0)

        threads = [threading.Thread(target=run, args=(m,)) for m in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(60)
        assert wait_for(lambda: sum(s["packets"] for s in host.summary().values()) == 30)
        summary = host.summary()
    elapsed = time.monotonic() - start
    assert codes == {0: 0, 1: 0, 2: 0}
    assert elapsed <= 30
    assert all(summary[m]["gaps"] == 0 and summary[m]["packets"] == 10 for m in range(3))
    files = sorted(out.glob("*/*.png"))
    assert len(files) == 30
    assert not list(out.glob("*/.*.part"))
    for f in files:
        assert imgproc.read_image(f).width == 640
    entries = read_log(out)
    assert len(entries) == 30
    for m in range(3):
        seqs = [e["seq"] for e in entries if e["module_id"] == m]
        assert seqs == list(range(1, 11))


def test_duplicate_module_refused(tmp_path):
    with Host("127.0.0.1", 0, tmp_path) as host:
        port = host.address[1]
        first = raw_client(port)
        first.sendall(encode_packet(hello_packet(1)))
        assert wait_for(lambda: host.summary()[1]["connected"])
        second = raw_client(port)
        second.sendall(encode_packet(hello_packet(1)))
        assert second.recv(1) == b""  # closed by the host
        second.close()
        first.sendall(encode_packet(GuidancePacket(1, 1, 0)))
        assert wait_for(lambda: host.summary()[1]["packets"] == 1)
        assert host.state.refused == 1
        first.close()


def test_slot_limit(tmp_path):
    with Host("127.0.0.1", 0, tmp_path, slots=2) as host:
        port = host.address[1]
        socks = []
        for mid in (0, 1):
            s = raw_client(port)
            s.sendall(encode_packet(hello_packet(mid)))
            socks.append(s)
        assert wait_for(lambda: host.state.active() == 2)
        third = raw_client(port)
        third.sendall(encode_packet(hello_packet(2)))
        assert third.recv(1) == b""
        for s in socks + [third]:
            s.close()


def test_first_packet_must_be_hello(tmp_path):
    with Host("127.0.0.1", 0, tmp_path) as host:
        s = raw_client(host.address[1])
        s.sendall(encode_packet(GuidancePacket(0, 1, 0)))
        assert s.recv(1) == b""
        s.close()
        assert host.summary()[0]["packets"] == 0


def test_killed_module_leaves_gap_and_others_continue(tmp_path):
    with Host("127.0.0.1", 0, tmp_path) as host:
        port = host.address[1]
        a = raw_client(port)
        b = raw_client(port)
        a.sendall(encode_packet(hello_packet(0)))
        b.sendall(encode_packet(hello_packet(1)))
        a.sendall(encode_packet(GuidancePacket(0, 1, 0)) + encode_packet(GuidancePacket(0, 3, 0)))
        half = encode_packet(GuidancePacket(0, 4, 0))[:30]
        a.sendall(half)
        a.close()  # dies mid-packet
        assert wait_for(lambda: not host.summary()[0]["connected"])
        b.sendall(encode_packet(GuidancePacket(1, 1, 0)))
        assert wait_for(lambda: host.summary()[1]["packets"] == 1)
        s = host.summary()
        assert s[0]["packets"] == 2 and s[0]["gaps"] == 1
        assert s[1]["connected"]
        b.close()


def test_rejected_packet_keeps_connection(tmp_path):
    with Host("127.0.0.1", 0, tmp_path) as host:
        s = raw_client(host.address[1])
        s.sendall(encode_packet(hello_packet(0)))
        bad = bytearray(encode_packet(GuidancePacket(0, 1, 0, laser=(5, 5))))
        bad[7] &= ~FLAG_LASER & 0xFF
        s.sendall(bytes(bad) + encode_packet(GuidancePacket(0, 2, 0)))
        assert wait_for(lambda: host.summary()[0]["packets"] == 1)
        assert host.summary()[0]["rejected"] == 1
        s.close()


def test_backwards_sequence_drops_connection(tmp_path):
    with Host("127.0.0.1", 0, tmp_path) as host:
        s = raw_client(host.address[1])
        s.sendall(encode_packet(hello_packet(0)))
        s.sendall(encode_packet(GuidancePacket(0, 5, 0)) + encode_packet(GuidancePacket(0, 5, 0)))
        assert s.recv(1) == b""
        s.close()


def test_synth_source_is_deterministic():
    a = list(synth_source(2, distances=(2, 4), seed=9))
    b = list(synth_source(2, distances=(2, 4), seed=9))
    assert a == b
    spec = synth_scene.SceneSpec(ground_distance=4.0)
    assert a[1] == synth_scene.render(spec, synth_scene.derive_seed(9, 1))[0]
