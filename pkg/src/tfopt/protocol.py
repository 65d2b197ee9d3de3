"""Framing for the scorer wire protocol (version 1).

Every frame is one UTF-8 JSON header line ending in \\n followed by a raw
binary payload of exactly header["payload_bytes"] bytes. Image and gradient
payloads are little-endian float32, row-major, RGB interleaved. Frame types:

    score   client -> service: image + prompts to score
    result  service -> client: loss plus d(loss)/d(image), same layout
    hello   service -> client, once on connect: model id, input size,
            logit temperature
    error   service -> client: per-request failure, empty payload

The JSON header is machine-inspectable on the wire; the blob stays binary
for size. Loss travels in the header, not the blob.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .errors import ProtocolError

PROTOCOL_VERSION = 1
# guards against treating a stray binary stream as a header line
MAX_HEADER_BYTES = 1 << 20
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Frame:
    header: dict
    payload: bytes

    @property
    def type(self) -> str:
        return self.header.get("type", "")


def image_to_payload(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ProtocolError(f"expected an (H, W, 3) image, got shape {image.shape}")
    return np.ascontiguousarray(image, dtype=PAYLOAD_DTYPE).tobytes()


def payload_to_image(payload: bytes, height: int, width: int) -> np.ndarray:
    expected = height * width * 3 * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise ProtocolError(
            f"payload is {len(payload)} bytes, expected {expected} for {height}x{width}x3")
    flat = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)
    return flat.reshape(height, width, 3).astype(np.float64)


def _encode(header: dict, payload: bytes = b"") -> bytes:
    header = dict(header, version=PROTOCOL_VERSION, payload_bytes=len(payload))
    line = json.dumps(header, separators=(",", ":"), sort_keys=True)
    return line.encode("utf-8") + b"\n" + payload


def encode_score_request(request_id: int, image: np.ndarray, positive: str,
                         negatives: list[str]) -> bytes:
    h, w = image.shape[0], image.shape[1]
    return _encode({"type": "score", "request_id": int(request_id),
                    "height": int(h), "width": int(w),
                    "positive": positive, "negatives": list(negatives)},
                   image_to_payload(image))


def encode_result(request_id: int, loss: float, grad: np.ndarray) -> bytes:
    h, w = grad.shape[0], grad.shape[1]
    return _encode({"type": "result", "request_id": int(request_id),
                    "loss": float(loss), "height": int(h), "width": int(w)},
                   image_to_payload(grad))


def encode_hello(model_id: str, input_size: int, temperature: float) -> bytes:
    return _encode({"type": "hello", "model_id": model_id,
                    "input_size": int(input_size), "temperature": float(temperature)})


def encode_error(request_id: int | None, message: str) -> bytes:
    header = {"type": "error", "message": message}
    if request_id is not None:
        header["request_id"] = int(request_id)
    return _encode(header)


def read_frame(stream: BinaryIO) -> Frame:
    """Read one complete frame; raises ProtocolError on a malformed header,
    version mismatch, or truncated payload. Returns None at clean EOF."""
    line = stream.readline(MAX_HEADER_BYTES)
    if not line:
        return None
    if not line.endswith(b"\n"):
        raise ProtocolError("header line exceeds limit or stream truncated mid-header")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("header is not a JSON object")
    version = header.get("version")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version {version!r}, this side speaks {PROTOCOL_VERSION}")
    try:
        n = int(header["payload_bytes"])
    except (KeyError, TypeError, ValueError):
        raise ProtocolError("header lacks a valid payload_bytes field") from None
    if n < 0:
        raise ProtocolError("negative payload_bytes")
    payload = stream.read(n) if n else b""
    if payload is None or len(payload) != n:
        raise ProtocolError(f"payload truncated: wanted {n} bytes, got {len(payload or b'')}")
    return Frame(header=header, payload=payload)
