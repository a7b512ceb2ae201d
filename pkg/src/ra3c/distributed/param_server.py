"""Shared-weight store: serves snapshots and applies pushed gradients with RMSProp."""
from __future__ import annotations

import logging
import socketserver
import threading
import zlib

import numpy as np

from ..autodiff.params import OptState, ParamSet, contiguous, rmsprop_apply
from .protocol import (Ack, GetParams, Nack, Params, ProtocolError, PushGrads, Bye, read_message,
                       write_message)

log = logging.getLogger(__name__)


def checksum(weights: np.ndarray) -> int:
    return zlib.crc32(np.ascontiguousarray(weights, dtype="<f4").tobytes()) & 0xFFFFFFFF


class ParameterStore:
    """Thread-safe owner of the shared ParamSet and its optimizer state.

    Pushes are applied one at a time under a lock; reads copy the whole buffer
    under the same lock, so a snapshot always reflects a whole number of
    updates.  Stale pushes are applied as-is and their staleness is recorded.
    """

    def __init__(self, params: ParamSet, lr: float = 7e-4, decay: float = 0.99, eps: float = 0.1,
                 keep_checksums: bool = False):
        self.params, self._buf = contiguous(params)
        self.params.version = params.version
        self.opt = OptState.for_params(self.params, lr, decay, eps)
        self._lock = threading.Lock()
        self.pushes = 0
        self.stale_pushes = 0
        self.max_staleness = 0
        self.total_staleness = 0
        self.checksums: dict[int, int] | None = {self.params.version: checksum(self._buf)} if keep_checksums else None

    @property
    def version(self) -> int:
        return self.params.version

    @property
    def size(self) -> int:
        return self._buf.size

    def get(self) -> tuple[int, np.ndarray]:
        with self._lock:
            return self.params.version, self._buf.copy()

    def push(self, base_version: int, flat_grads: np.ndarray) -> int:
        flat_grads = np.asarray(flat_grads, dtype=np.float32)
        if flat_grads.ndim != 1 or flat_grads.size != self._buf.size:
            raise ValueError(f"gradient has {flat_grads.size} values, parameters have {self._buf.size}")
        grads = self.params.unflatten_views(flat_grads)
        with self._lock:
            staleness = self.params.version - base_version
            rmsprop_apply(self.params, grads, self.opt)
            self.pushes += 1
            if staleness > 0:
                self.stale_pushes += 1
                self.total_staleness += staleness
                self.max_staleness = max(self.max_staleness, staleness)
            if self.checksums is not None:
                self.checksums[self.params.version] = checksum(self._buf)
            return self.params.version

    def snapshot(self) -> ParamSet:
        with self._lock:
            return self.params.copy()

    def handle(self, msg):
        """Answer one request message; raises ProtocolError for unexpected types."""
        if isinstance(msg, GetParams):
            version, weights = self.get()
            return Params(version, weights)
        if isinstance(msg, PushGrads):
            try:
                return Ack(self.push(msg.base_version, msg.grads))
            except ValueError as exc:
                return Nack(str(exc))
        raise ProtocolError(f"parameter server cannot handle {type(msg).__name__}")


class _ParamHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: ParamServer = self.server  # type: ignore[assignment]
        sock = self.request
        while True:
            try:
                msg = read_message(sock)
                if isinstance(msg, Bye):
                    return
                write_message(sock, server.store.handle(msg))
            except ProtocolError as exc:
                server.protocol_errors += 1
                log.warning("param server protocol error: %s", exc)
                try:
                    write_message(sock, Nack(f"protocol error: {exc}"))
                except OSError:
                    pass
                return
            except (ConnectionError, OSError):
                return


class ParamServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, store: ParameterStore, address: tuple[str, int]):
        self.store = store
        self.protocol_errors = 0
        super().__init__(address, _ParamHandler)

    def serve_in_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="param-server", daemon=True)
        t.start()
        return t
