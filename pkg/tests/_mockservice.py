"""A tiny TCP scorer service used by the tests: mean squared error against a
fixed reference image, spoken over the wire protocol. Runs one thread per
connection and shuts down cleanly via close()."""

import socket
import socketserver
import threading

import numpy as np

from tfopt import protocol


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server
        self.wfile.write(protocol.encode_hello(server.model_id, server.input_size, 100.0))
        self.wfile.flush()
        while True:
            try:
                frame = protocol.read_frame(self.rfile)
            except protocol.ProtocolError as exc:
                self.wfile.write(protocol.encode_error(None, str(exc)))
                self.wfile.flush()
                return
            if frame is None:
                return
            if frame.type != "score":
                self.wfile.write(protocol.encode_error(
                    frame.header.get("request_id"), f"unsupported frame type {frame.type!r}"))
                self.wfile.flush()
                continue
            rid = frame.header["request_id"]
            h, w = int(frame.header["height"]), int(frame.header["width"])
            image = protocol.payload_to_image(frame.payload, h, w)
            if server.fail_requests:
                self.wfile.write(protocol.encode_error(rid, "scheduled failure"))
                self.wfile.flush()
                continue
            if image.shape != server.reference.shape:
                self.wfile.write(protocol.encode_error(
                    rid, f"image is {image.shape}, service expects {server.reference.shape}"))
                self.wfile.flush()
                continue
            diff = image - server.reference
            loss = float(np.mean(diff * diff))
            grad = 2.0 * diff / diff.size
            self.wfile.write(protocol.encode_result(rid, loss, grad))
            self.wfile.flush()


class MockScorerService(socketserver.ThreadingTCPServer):
    """Serves MSE-to-reference scoring on 127.0.0.1 at an ephemeral port."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, reference: np.ndarray, model_id: str = "mock-mse"):
        super().__init__(("127.0.0.1", 0), _Handler)
        self.reference = np.asarray(reference, dtype=np.float64)
        self.model_id = model_id
        self.input_size = self.reference.shape[0]
        self.fail_requests = False
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self.server_address
        return f"{host}:{port}"

    def close(self):
        self.shutdown()
        self.server_close()
        self._thread.join(timeout=5)


class SilentService:
    """Accepts a connection and sends nothing; for handshake failure tests."""

    def __init__(self):
        self._sock = socket.create_server(("127.0.0.1", 0))
        self._thread = threading.Thread(target=self._accept, daemon=True)
        self._conns = []
        self._thread.start()

    def _accept(self):
        try:
            conn, _ = self._sock.accept()
            conn.shutdown(socket.SHUT_WR)
            self._conns.append(conn)
        except OSError:
            pass

    @property
    def endpoint(self) -> str:
        host, port = self._sock.getsockname()
        return f"{host}:{port}"

    def close(self):
        for c in self._conns:
            c.close()
        self._sock.close()
