"""Differentiable image scorers.

A scorer turns a rendered image into a scalar loss plus the loss gradient
with respect to the image pixels. Two implementations: an in-process
reference scorer (mean squared error against a target image, the inverse
rendering oracle) and a remote client speaking the wire protocol to a
model service that owns prompt embeddings and logit scaling.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .errors import ProtocolError, ScorerError


@dataclass(frozen=True)
class PromptSet:
    """The positive prompt plus the negatives it competes against.

    Pool negatives come first, then any user-supplied ones.
    """

    positive: str
    user_negatives: tuple[str, ...] = ()
    pool_negatives: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.positive:
            raise ValueError("positive prompt must be nonempty")

    @property
    def negatives(self) -> tuple[str, ...]:
        return self.pool_negatives + self.user_negatives


@dataclass
class ScoreResult:
    loss: float
    dloss_dimage: np.ndarray
    logits: np.ndarray | None = None


def sample_negatives(pool_path, k: int, rng: np.random.Generator) -> list[str]:
    """Draw k prompts uniformly with replacement from a one-per-line file."""
    if k < 1:
        raise ValueError("k must be >= 1")
    with open(pool_path, encoding="utf-8") as fh:
        pool = [line.rstrip("\n") for line in fh]
    pool = [line for line in pool if line.strip()]
    if not pool:
        raise ScorerError(f"prompt pool {pool_path} has no prompts")
    idx = rng.integers(0, len(pool), size=k)
    return [pool[i] for i in idx]


class ReferenceScorer:
    """Mean squared error against a fixed reference image. Prompts are
    accepted and ignored so it is interchangeable with the remote scorer."""

    def __init__(self, reference: np.ndarray):
        reference = np.asarray(reference, dtype=np.float64)
        if reference.ndim != 3 or reference.shape[2] != 3:
            raise ValueError(f"reference must be (H, W, 3), got {reference.shape}")
        self.reference = reference

    def score(self, image: np.ndarray, prompts: PromptSet | None = None,
              request_id: int = 0) -> ScoreResult:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.reference.shape:
            raise ScorerError(
                f"image shape {image.shape} does not match reference {self.reference.shape}")
        diff = image - self.reference
        loss = float(np.mean(diff * diff))
        grad = 2.0 * diff / diff.size
        return ScoreResult(loss=loss, dloss_dimage=grad)

    def close(self):
        pass


@dataclass
class ServiceInfo:
    model_id: str
    input_size: int
    temperature: float
    raw: dict = field(default_factory=dict)


def _parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ScorerError(f"endpoint must be host:port, got {endpoint!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ScorerError(f"endpoint port is not a number: {endpoint!r}") from None


class RemoteScorer:
    """Client for a scorer service behind the wire protocol.

    Connects over TCP (endpoint "host:port") or wraps an already-open
    binary stream pair. The service must announce itself with a hello
    frame; its model id, input size, and temperature land in `info`.
    """

    def __init__(self, endpoint: str | None = None, *, reader=None, writer=None,
                 timeout: float = 60.0):
        self._sock = None
        if endpoint is not None:
            host, port = _parse_endpoint(endpoint)
            try:
                self._sock = socket.create_connection((host, port), timeout=timeout)
            except OSError as exc:
                raise ScorerError(f"cannot connect to scorer service at {endpoint}: {exc}") from exc
            self._reader = self._sock.makefile("rb")
            self._writer = self._sock.makefile("wb")
        else:
            if reader is None or writer is None:
                raise ValueError("need an endpoint or a reader/writer pair")
            self._reader = reader
            self._writer = writer
        self._next_id = 1
        self.info = self._handshake()

    def _handshake(self) -> ServiceInfo:
        frame = protocol.read_frame(self._reader)
        if frame is None:
            raise ProtocolError("service closed the connection before saying hello")
        if frame.type != "hello":
            raise ProtocolError(f"expected a hello frame, got {frame.type!r}")
        h = frame.header
        return ServiceInfo(model_id=str(h.get("model_id", "?")),
                           input_size=int(h.get("input_size", 0)),
                           temperature=float(h.get("temperature", 1.0)),
                           raw=h)

    def score(self, image: np.ndarray, prompts: PromptSet,
              request_id: int | None = None) -> ScoreResult:
        image = np.asarray(image, dtype=np.float64)
        if request_id is None:
            request_id = self._next_id
        self._next_id = max(self._next_id, request_id) + 1
        try:
            self._writer.write(protocol.encode_score_request(
                request_id, image, prompts.positive, list(prompts.negatives)))
            self._writer.flush()
        except OSError as exc:
            raise ScorerError(f"scorer transport failed while sending: {exc}") from exc

        while True:
            try:
                frame = protocol.read_frame(self._reader)
            except OSError as exc:
                raise ScorerError(f"scorer transport failed while receiving: {exc}") from exc
            if frame is None:
                raise ScorerError("scorer service closed the connection mid-request")
            if frame.type == "error":
                raise ScorerError(f"scorer service error: {frame.header.get('message', '?')}")
            if frame.type != "result":
                continue  # unsolicited frame; keep waiting for ours
            if frame.header.get("request_id") != request_id:
                continue
            h, w = int(frame.header["height"]), int(frame.header["width"])
            if (h, w) != image.shape[:2]:
                raise ProtocolError(
                    f"gradient is {h}x{w}, request was {image.shape[0]}x{image.shape[1]}")
            grad = protocol.payload_to_image(frame.payload, h, w)
            loss = float(frame.header["loss"])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise ScorerError("scorer returned non-finite loss or gradient")
            return ScoreResult(loss=loss, dloss_dimage=grad)

    def close(self):
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if self._sock is not None:
            self._sock.close()


def score_remote(image: np.ndarray, prompts: PromptSet, endpoint: str) -> ScoreResult:
    """One-shot convenience wrapper: connect, score one image, disconnect."""
    client = RemoteScorer(endpoint)
    try:
        return client.score(image, prompts)
    finally:
        client.close()
