"""The serving loop.

Each accepted connection gets a handshake frame naming the hosted model,
then a read-score-reply loop. Scoring runs under one process-wide lock,
so requests are handled one at a time no matter how many engine
connections are open; per-view concurrency on the engine side just
queues. A request that fails (bad frame type, wrong payload size, scoring
exception) is answered with an error frame and the loop keeps going; only
a framing error tears the connection down, because after one the stream
offset can no longer be trusted.
"""

from __future__ import annotations

import socketserver
import threading

import numpy as np

from . import protocol


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: ScorerServer = self.server
        backend = server.backend
        self.wfile.write(protocol.hello_frame(backend.model_id, backend.input_size,
                                              backend.temperature))
        self.wfile.flush()
        server.log(f"client {self.client_address[0]}:{self.client_address[1]} connected")
        while True:
            try:
                frame = protocol.read_frame(self.rfile)
            except protocol.ProtocolError as exc:
                self._reply(protocol.error_frame(None, str(exc)))
                server.log(f"framing error, dropping connection: {exc}")
                return
            if frame is None:
                server.log("client disconnected")
                return
            if frame.type != "score":
                self._reply(protocol.error_frame(
                    frame.header.get("request_id"),
                    f"unsupported frame type {frame.type!r}"))
                continue
            try:
                request_id, image, positive, negatives = protocol.parse_score(frame)
            except protocol.ProtocolError as exc:
                self._reply(protocol.error_frame(frame.header.get("request_id"), str(exc)))
                continue
            try:
                with server.scoring_lock:
                    loss, grad = backend.score(image, positive, negatives)
                if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise ValueError("scoring produced non-finite values")
            except Exception as exc:
                self._reply(protocol.error_frame(request_id, f"scoring failed: {exc}"))
                server.log(f"request {request_id} failed: {exc}")
                continue
            self._reply(protocol.result_frame(request_id, loss, grad))

    def _reply(self, data: bytes):
        try:
            self.wfile.write(data)
            self.wfile.flush()
        except OSError:
            pass  # peer went away mid-reply; the read loop will notice


class ScorerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0,
                 verbose: bool = False):
        super().__init__((host, port), _Handler)
        self.backend = backend
        self.verbose = verbose
        self.scoring_lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def log(self, message: str):
        if self.verbose:
            print(message, flush=True)

    def start(self):
        """Serve on a background thread (the CLI serves on the main thread
        instead)."""
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
