"""Wire protocol, service side (version 1).

A frame is one UTF-8 JSON header line terminated by \\n, then exactly
header["payload_bytes"] of raw binary. Image and gradient blobs are
little-endian float32, row-major, RGB interleaved. The header carries
everything textual (type, request_id, dims, prompts, loss); the blob is
only ever pixel data. Headers are serialized with sorted keys and compact
separators so every implementation produces identical bytes for identical
content; the golden frame files under the engine's test tree pin that
down.

Frame types this side handles:

    score   inbound: image + prompts to evaluate
    result  outbound: loss in the header, gradient in the blob
    hello   outbound, once per connection: model id, input size, logit
            temperature
    error   outbound: per-request failure report, no payload
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

VERSION = 1
FLOAT_DTYPE = np.dtype("<f4")
# a header line longer than this is junk, not a header
HEADER_LIMIT = 1 << 20


class ProtocolError(Exception):
    """The byte stream does not follow the framing rules."""


@dataclass
class Frame:
    header: dict
    payload: bytes

    @property
    def type(self) -> str:
        return self.header.get("type", "")


def pack_frame(fields: dict, payload: bytes = b"") -> bytes:
    header = dict(fields, version=VERSION, payload_bytes=len(payload))
    line = json.dumps(header, separators=(",", ":"), sort_keys=True)
    return line.encode("utf-8") + b"\n" + payload


def image_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ProtocolError(f"expected an (H, W, 3) array, got shape {array.shape}")
    return np.ascontiguousarray(array, dtype=FLOAT_DTYPE).tobytes()


def decode_image(payload: bytes, height: int, width: int) -> np.ndarray:
    want = height * width * 3 * FLOAT_DTYPE.itemsize
    if len(payload) != want:
        raise ProtocolError(
            f"payload is {len(payload)} bytes, expected {want} for {height}x{width}x3")
    return np.frombuffer(payload, dtype=FLOAT_DTYPE).reshape(height, width, 3)


def hello_frame(model_id: str, input_size: int, temperature: float) -> bytes:
    return pack_frame({"type": "hello", "model_id": model_id,
                       "input_size": int(input_size),
                       "temperature": float(temperature)})


def result_frame(request_id: int, loss: float, grad: np.ndarray) -> bytes:
    return pack_frame({"type": "result", "request_id": int(request_id),
                       "loss": float(loss),
                       "height": int(grad.shape[0]), "width": int(grad.shape[1])},
                      image_bytes(grad))


def error_frame(request_id: int | None, message: str) -> bytes:
    fields = {"type": "error", "message": message}
    if request_id is not None:
        fields["request_id"] = int(request_id)
    return pack_frame(fields)


def score_frame(request_id: int, image: np.ndarray, positive: str,
                negatives: list[str]) -> bytes:
    """Client-side encoder; the service only needs it in its own tests."""
    return pack_frame({"type": "score", "request_id": int(request_id),
                       "height": int(image.shape[0]), "width": int(image.shape[1]),
                       "positive": positive, "negatives": list(negatives)},
                      image_bytes(image))


def read_frame(stream: BinaryIO) -> Frame | None:
    """One frame off the stream, or None at a clean end of stream."""
    line = stream.readline(HEADER_LIMIT)
    if not line:
        return None
    if not line.endswith(b"\n"):
        raise ProtocolError("header line unterminated (oversized or truncated)")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("header is not a JSON object")
    if header.get("version") != VERSION:
        raise ProtocolError(
            f"peer speaks protocol version {header.get('version')!r}, not {VERSION}")
    size = header.get("payload_bytes")
    if not isinstance(size, int) or size < 0:
        raise ProtocolError("header lacks a valid payload_bytes field")
    payload = stream.read(size) if size else b""
    if payload is None or len(payload) != size:
        raise ProtocolError(
            f"payload truncated: wanted {size} bytes, got {len(payload or b'')}")
    return Frame(header=header, payload=payload)


def parse_score(frame: Frame) -> tuple[int, np.ndarray, str, list[str]]:
    """Validate an inbound score frame into (request_id, image, positive,
    negatives)."""
    h = frame.header
    try:
        request_id = int(h["request_id"])
        height = int(h["height"])
        width = int(h["width"])
    except (KeyError, TypeError, ValueError):
        raise ProtocolError("score header needs integer request_id/height/width") from None
    if height < 1 or width < 1:
        raise ProtocolError(f"bad image dims {height}x{width}")
    positive = h.get("positive", "")
    negatives = h.get("negatives", [])
    if not isinstance(positive, str) or not isinstance(negatives, list) \
            or not all(isinstance(n, str) for n in negatives):
        raise ProtocolError("prompts must be a string and a list of strings")
    image = decode_image(frame.payload, height, width)
    return request_id, image, positive, negatives
