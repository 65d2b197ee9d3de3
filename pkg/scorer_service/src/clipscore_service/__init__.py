"""Scoring service for transfer-function optimization runs.

Hosts a contrastive image-text model behind a small line-framed binary
protocol. The optimization engine connects, receives a handshake naming
the hosted model, and streams rendered images; the service answers each
with the contrastive loss against the request's prompts and the loss
gradient with respect to the image pixels.
"""

from .model import HashedProjectionModel, ModelLoadError, load_backend
from .protocol import ProtocolError
from .service import ScorerServer

__all__ = ["HashedProjectionModel", "ModelLoadError", "ProtocolError",
           "ScorerServer", "load_backend"]
