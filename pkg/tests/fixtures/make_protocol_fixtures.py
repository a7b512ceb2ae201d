"""Regenerate the protocol golden files.

The bytes are assembled field by field with ``struct`` from the documented
layout, independently of the codec under test.  Run from this directory:
``python3 make_protocol_fixtures.py``.
"""
import struct
from pathlib import Path

HERE = Path(__file__).parent / "protocol"


def frame(tag: int, payload: bytes) -> bytes:
    return struct.pack("<I", len(payload) + 1) + bytes([tag]) + payload


def obs_frame_bytes() -> bytes:
    # 2x3 frame, pixel (r, c) = (10r + c, 100 + c, 200 - r)
    return bytes(v for r in range(2) for c in range(3) for v in (10 * r + c, 100 + c, 200 - r))


FIXTURES = {
    "hello": frame(1, struct.pack("<HHHHf", 48, 64, 1, 10, 2000.0)),
    "reset": frame(2, struct.pack("<H", 7)),
    "obs": frame(3, struct.pack("<II", 3, 41) + obs_frame_bytes()
                 + struct.pack("<fffffB", 12.5, -0.25, 1.5, 8.0, 0.375, 0x01 | 0x02 | (3 << 3))),
    "act": frame(4, struct.pack("<B", 13)),
    "get_params": frame(5, b""),
    "params": frame(6, struct.pack("<QI", 42, 4) + struct.pack("<4f", 1.0, -2.0, 0.5, 0.0)),
    "push_grads": frame(7, struct.pack("<QI", 41, 3) + struct.pack("<3f", 0.25, -0.125, 3.0)),
    "ack": frame(8, struct.pack("<Q", 43)),
    "bye": frame(9, b""),
    "nack": frame(10, "gradient has 3 values".encode("utf-8")),
}

if __name__ == "__main__":
    HERE.mkdir(exist_ok=True)
    for name, data in FIXTURES.items():
        (HERE / f"{name}.bin").write_bytes(data)
        print(f"{name}.bin  {data.hex(' ')[:60]}")
