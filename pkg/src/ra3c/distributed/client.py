"""Env and parameter clients over TCP or in-process.

Both transports exchange the same message objects; the in-process variant
just skips the socket and hands messages straight to the server-side handler.
"""
from __future__ import annotations

import logging
import os
import socket
import time
from typing import Sequence

import numpy as np

from ..sim.track import Track
from .env_server import EnvSession
from .param_server import ParameterStore
from .protocol import (Ack, Act, Bye, GetParams, Hello, Nack, ObsPayload, Params, ProtocolError, PushGrads,
                       Reset, read_message, write_message)

log = logging.getLogger(__name__)

DEFAULT_ENV_PORT = 7801
DEFAULT_PARAMS_PORT = 7802


def bind_address(port: int) -> tuple[str, int]:
    return os.environ.get("RA3C_BIND", "127.0.0.1"), port


def parse_address(text: str, default_port: int) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        return text or "127.0.0.1", default_port
    return host, int(port)


class _TcpChannel:
    def __init__(self, address: tuple[str, int], retries: int = 5, backoff: float = 0.2, timeout: float = 60.0):
        self.address = address
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.sock: socket.socket | None = None

    def connect(self) -> None:
        delay = self.backoff
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                sock = socket.create_connection(self.address, timeout=self.timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self.sock = sock
                return
            except OSError as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(delay)
                    delay = min(delay * 2, 5.0)
        raise ConnectionError(f"cannot reach {self.address[0]}:{self.address[1]} after "
                              f"{self.retries + 1} attempts: {last}")

    def request(self, msg, frame_shape=None):
        if self.sock is None:
            self.connect()
        write_message(self.sock, msg)
        reply = read_message(self.sock, frame_shape)
        if isinstance(reply, Nack) and reply.reason.startswith("protocol error"):
            self.close()
            raise ProtocolError(reply.reason)
        return reply

    def close(self) -> None:
        if self.sock is not None:
            try:
                write_message(self.sock, Bye())
            except OSError:
                pass
            self.sock.close()
            self.sock = None


class EnvClient:
    """Lockstep env access; subclasses provide ``_request``."""

    hello_reply: Hello | None = None

    def _request(self, msg):
        raise NotImplementedError

    def hello(self, height: int, width: int, track: int = 0) -> Hello:
        reply = self._request(Hello(height, width, track))
        if not isinstance(reply, Hello):
            raise ProtocolError(f"expected HELLO, got {type(reply).__name__}")
        self.hello_reply = reply
        return reply

    def reset(self, checkpoint: int) -> ObsPayload:
        return self._expect_obs(self._request(Reset(checkpoint)))

    def act(self, action: int) -> ObsPayload:
        return self._expect_obs(self._request(Act(action)))

    @staticmethod
    def _expect_obs(reply) -> ObsPayload:
        if not isinstance(reply, ObsPayload):
            raise ProtocolError(f"expected OBS, got {type(reply).__name__}")
        return reply

    def close(self) -> None:
        pass


class LocalEnvClient(EnvClient):
    def __init__(self, tracks: Sequence[Track], jitter_seed: int | None = None):
        self.session = EnvSession(tracks, jitter_seed)

    def _request(self, msg):
        return self.session.handle(msg)

    def close(self) -> None:
        self.session.close()


class TcpEnvClient(EnvClient):
    def __init__(self, address: tuple[str, int], retries: int = 5):
        self.channel = _TcpChannel(address, retries)
        self._hello_args: tuple[int, int, int] | None = None

    def hello(self, height: int, width: int, track: int = 0) -> Hello:
        self._hello_args = (height, width, track)
        return super().hello(height, width, track)

    def _request(self, msg):
        shape = None if self.hello_reply is None else (self.hello_reply.height, self.hello_reply.width)
        return self.channel.request(msg, shape)

    def reconnect(self) -> Hello:
        """Open a fresh session (the old episode is lost) and repeat the handshake."""
        self.channel.close()
        self.hello_reply = None
        if self._hello_args is None:
            raise ConnectionError("cannot reconnect before HELLO")
        return self.hello(*self._hello_args)

    def close(self) -> None:
        self.channel.close()


class ParamClient:
    def _request(self, msg):
        raise NotImplementedError

    def get(self) -> tuple[int, np.ndarray]:
        reply = self._request(GetParams())
        if not isinstance(reply, Params):
            raise ProtocolError(f"expected PARAMS, got {type(reply).__name__}")
        return reply.version, reply.weights

    def push(self, base_version: int, grads: np.ndarray) -> int:
        reply = self._request(PushGrads(base_version, np.asarray(grads, dtype=np.float32)))
        if isinstance(reply, Nack):
            raise ValueError(f"gradient push rejected: {reply.reason}")
        if not isinstance(reply, Ack):
            raise ProtocolError(f"expected ACK, got {type(reply).__name__}")
        return reply.version

    def close(self) -> None:
        pass


class LocalParamClient(ParamClient):
    def __init__(self, store: ParameterStore):
        self.store = store

    def get(self) -> tuple[int, np.ndarray]:
        # skips the message round trip; same snapshot semantics as GET_PARAMS
        return self.store.get()

    def _request(self, msg):
        return self.store.handle(msg)


class TcpParamClient(ParamClient):
    """Parameter requests are idempotent reads or self-contained pushes, so a
    dropped connection is retried on a fresh socket."""

    def __init__(self, address: tuple[str, int], retries: int = 5):
        self.channel = _TcpChannel(address, retries)
        self.retries = retries

    def _request(self, msg):
        delay = 0.2
        for attempt in range(self.retries + 1):
            try:
                return self.channel.request(msg)
            except (ConnectionError, OSError) as exc:
                self.channel.close()
                if attempt == self.retries:
                    raise ConnectionError(f"parameter server unreachable: {exc}") from exc
                log.warning("parameter server connection lost (%s); retrying", exc)
                time.sleep(delay)
                delay = min(delay * 2, 5.0)

    def close(self) -> None:
        self.channel.close()
