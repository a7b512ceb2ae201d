"""Simulator sessions behind the lockstep HELLO / RESET / ACT protocol."""
from __future__ import annotations

import logging
import socketserver
import threading
from typing import Sequence

from ..sim.env import Env, Observation
from ..sim.physics import CRASH_CODES
from ..sim.render import RenderConfig
from ..sim.track import Track
from .protocol import (CRASH_SHIFT, FLAG_CHECKPOINT, FLAG_CRASH, FLAG_FINISHED, FLAG_HIT, Act, Bye, Hello,
                       Nack, ObsPayload, ProtocolError, Reset, _f32, read_message, write_message)

log = logging.getLogger(__name__)

MIN_FRAME, MAX_FRAME = 8, 512


def obs_to_payload(obs: Observation) -> ObsPayload:
    ev = obs.events
    flags = (FLAG_HIT if ev.hit else 0) | (FLAG_CRASH if ev.crash else 0)
    flags |= (FLAG_CHECKPOINT if ev.checkpoint is not None else 0) | (FLAG_FINISHED if ev.finished else 0)
    flags |= CRASH_CODES[ev.crash_reason] << CRASH_SHIFT
    sig = obs.signal
    return ObsPayload(obs.episode, obs.step, obs.frame_u8, _f32(sig.v), _f32(sig.alpha), _f32(sig.d),
                      _f32(sig.road_width), _f32(obs.progress), flags)


class EnvSession:
    """Per-connection state machine.

    new --HELLO--> ready --RESET--> running --ACT--> running ... and a
    terminal OBS drops back to ready.  RESET is also accepted while running.
    Anything else raises :class:`ProtocolError`.
    """

    def __init__(self, tracks: Sequence[Track], jitter_seed: int | None = None):
        if not tracks:
            raise ValueError("env server needs at least one track")
        self.tracks = list(tracks)
        self.jitter_seed = jitter_seed
        self.env: Env | None = None
        self.state = "new"
        self.frame_shape: tuple[int, int] | None = None

    def handle(self, msg):
        if isinstance(msg, Hello):
            if self.state != "new":
                raise ProtocolError("HELLO after session start")
            if not 0 <= msg.track < len(self.tracks):
                raise ProtocolError(f"unknown track {msg.track}; server has {len(self.tracks)}")
            if not (MIN_FRAME <= msg.height <= MAX_FRAME and MIN_FRAME <= msg.width <= MAX_FRAME):
                raise ProtocolError(f"frame size {msg.height}x{msg.width} outside {MIN_FRAME}..{MAX_FRAME}")
            track = self.tracks[msg.track]
            seed = None if self.jitter_seed is None else self.jitter_seed + msg.track
            self.env = Env(track, RenderConfig(msg.height, msg.width), jitter_seed=seed)
            self.frame_shape = (msg.height, msg.width)
            self.state = "ready"
            return Hello(msg.height, msg.width, msg.track, self.env.num_checkpoints, _f32(track.length))
        if isinstance(msg, Reset):
            if self.state == "new":
                raise ProtocolError("RESET before HELLO")
            if not 0 <= msg.checkpoint < self.env.num_checkpoints:
                raise ProtocolError(f"checkpoint {msg.checkpoint} outside 0..{self.env.num_checkpoints - 1}")
            obs = self.env.reset(msg.checkpoint)
            self.state = "running"
            return obs_to_payload(obs)
        if isinstance(msg, Act):
            if self.state != "running":
                raise ProtocolError("ACT without a running episode (send RESET first)")
            if not 0 <= msg.action < 32:
                raise ProtocolError(f"action class {msg.action} outside 0..31")
            obs = self.env.step(msg.action)
            if obs.events.terminal:
                self.state = "ready"
            return obs_to_payload(obs)
        raise ProtocolError(f"env server cannot handle {type(msg).__name__}")

    def close(self) -> None:
        self.env = None
        self.state = "closed"


class _EnvHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: EnvServer = self.server  # type: ignore[assignment]
        session = EnvSession(server.tracks, server.jitter_seed)
        sock = self.request
        try:
            while True:
                msg = read_message(sock)
                if isinstance(msg, Bye):
                    return
                write_message(sock, session.handle(msg))
        except ProtocolError as exc:
            server.protocol_errors += 1
            log.warning("env server protocol error: %s", exc)
            try:
                write_message(sock, Nack(f"protocol error: {exc}"))
            except OSError:
                pass
        except (ConnectionError, OSError):
            pass
        finally:
            session.close()


class EnvServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, tracks: Sequence[Track], address: tuple[str, int], jitter_seed: int | None = None):
        if not tracks:
            raise ValueError("env server needs at least one track")
        self.tracks = list(tracks)
        self.jitter_seed = jitter_seed
        self.protocol_errors = 0
        super().__init__(address, _EnvHandler)

    def serve_in_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="env-server", daemon=True)
        t.start()
        return t

