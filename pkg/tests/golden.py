"""Messages whose encodings are pinned by the files in fixtures/protocol."""
from pathlib import Path

import numpy as np

from ra3c.distributed.protocol import (Ack, Act, Bye, GetParams, Hello, Nack, ObsPayload, Params, PushGrads,
                                       Reset)

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "protocol"

_frame = np.array([[[10 * r + c, 100 + c, 200 - r] for c in range(3)] for r in range(2)], dtype=np.uint8)

GOLDEN = {
    "hello": Hello(48, 64, 1, 10, 2000.0),
    "reset": Reset(7),
    "obs": ObsPayload(3, 41, _frame, 12.5, -0.25, 1.5, 8.0, 0.375, 0x01 | 0x02 | (3 << 3)),
    "act": Act(13),
    "get_params": GetParams(),
    "params": Params(42, np.array([1.0, -2.0, 0.5, 0.0], np.float32)),
    "push_grads": PushGrads(41, np.array([0.25, -0.125, 3.0], np.float32)),
    "ack": Ack(43),
    "bye": Bye(),
    "nack": Nack("gradient has 3 values"),
}
OBS_SHAPE = (2, 3)


def fixture_bytes(name: str) -> bytes:
    return (FIXTURE_DIR / f"{name}.bin").read_bytes()
