"""Scoring backends.

A backend owns a contrastive image-text embedding model and exposes

    score(image, positive, negatives) -> (loss, dloss_dimage)

where the loss is the cross-entropy of picking the positive prompt among
[positive] + negatives by logit, and the gradient is taken with respect to
the engine's image as sent, before any resizing. Both backends route the
image through torch so the resize-normalize-embed chain is differentiated
automatically; text embeddings carry no gradient and are cached per
prompt string.

HashedProjectionModel is the default: a deterministic stand-in with no
weights to download. Token vectors are seeded from SHA-256 digests and an
image is embedded by average-pooling to a fixed grid and applying one
fixed random projection. It knows nothing about language or pictures, but
it is a genuine contrastive embedder with exact autograd gradients, which
is all the protocol plumbing, the engine's equivalence tests, and CI need.

HuggingFaceClipModel hosts a real pretrained CLIP checkpoint when one is
available locally; prompt semantics then actually mean something.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
import torch
import torch.nn.functional as F


class ModelLoadError(Exception):
    """A backend could not be constructed (missing weights, bad checkpoint)."""


def _unit(v: torch.Tensor) -> torch.Tensor:
    n = v.norm()
    return v / n if float(n.detach()) > 0.0 else v


class HashedProjectionModel:
    model_id = "hashed-projection-v1"
    input_size = 32
    temperature = 10.0

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        gen = torch.Generator().manual_seed(seed)
        flat = 3 * self.input_size * self.input_size
        self._proj = torch.randn(dim, flat, generator=gen) / flat ** 0.5
        self._text_cache: dict[str, torch.Tensor] = {}

    def _token_vector(self, token: str) -> torch.Tensor:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return torch.from_numpy(rng.standard_normal(self.dim)).float()

    def embed_text(self, prompt: str) -> torch.Tensor:
        cached = self._text_cache.get(prompt)
        if cached is not None:
            return cached
        tokens = re.findall(r"[a-z0-9]+", prompt.lower())
        if tokens:
            vec = _unit(torch.stack([self._token_vector(t) for t in tokens]).mean(0))
        else:
            vec = torch.zeros(self.dim)
        self._text_cache[prompt] = vec
        return vec

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        """image: (H, W, 3) float32 in [0, 1], gradient-tracking."""
        x = image.permute(2, 0, 1).unsqueeze(0)
        x = F.adaptive_avg_pool2d(x, self.input_size)
        x = (x - 0.5) / 0.5
        return _unit(self._proj @ x.reshape(-1))

    def score(self, image: np.ndarray, positive: str,
              negatives: list[str]) -> tuple[float, np.ndarray]:
        img = torch.from_numpy(np.array(image, dtype=np.float32))
        img.requires_grad_(True)
        e_img = self.embed_image(img)
        texts = torch.stack([self.embed_text(p) for p in [positive, *negatives]])
        logits = self.temperature * (texts @ e_img)
        loss = F.cross_entropy(logits.unsqueeze(0), torch.zeros(1, dtype=torch.long))
        loss.backward()
        return float(loss.item()), img.grad.numpy().copy()


class HuggingFaceClipModel:
    """A pretrained CLIP checkpoint behind the same interface.

    The checkpoint's own preprocessing is re-expressed in torch (bicubic
    resize to the model's native resolution, then channel normalization)
    so the gradient flows back to the engine's pixels. Logits use the
    model's trained logit scale.
    """

    def __init__(self, checkpoint: str):
        try:
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ModelLoadError(
                "the 'clip' extra is not installed; pip install clipscore-service[clip]"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(checkpoint)
            processor = CLIPProcessor.from_pretrained(checkpoint)
        except Exception as exc:
            raise ModelLoadError(
                f"cannot load checkpoint {checkpoint!r}: {exc}") from exc
        self._model.eval()
        self._tokenizer = processor.tokenizer
        image_cfg = processor.image_processor
        self.model_id = checkpoint
        self.input_size = int(image_cfg.crop_size["height"])
        self.temperature = float(self._model.logit_scale.exp().item())
        mean = torch.tensor(image_cfg.image_mean).view(3, 1, 1)
        std = torch.tensor(image_cfg.image_std).view(3, 1, 1)
        self._mean, self._std = mean, std
        self._text_cache: dict[str, torch.Tensor] = {}

    def embed_text(self, prompt: str) -> torch.Tensor:
        cached = self._text_cache.get(prompt)
        if cached is not None:
            return cached
        tokens = self._tokenizer([prompt], padding=True, truncation=True,
                                 return_tensors="pt")
        with torch.no_grad():
            vec = self._model.get_text_features(**tokens)[0]
        vec = _unit(vec)
        self._text_cache[prompt] = vec
        return vec

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        x = image.permute(2, 0, 1).unsqueeze(0)
        x = F.interpolate(x, size=(self.input_size, self.input_size),
                          mode="bicubic", align_corners=False)
        x = (x - self._mean) / self._std
        return _unit(self._model.get_image_features(pixel_values=x)[0])

    def score(self, image: np.ndarray, positive: str,
              negatives: list[str]) -> tuple[float, np.ndarray]:
        img = torch.from_numpy(np.array(image, dtype=np.float32))
        img.requires_grad_(True)
        e_img = self.embed_image(img)
        texts = torch.stack([self.embed_text(p) for p in [positive, *negatives]])
        logits = self.temperature * (texts @ e_img)
        loss = F.cross_entropy(logits.unsqueeze(0), torch.zeros(1, dtype=torch.long))
        loss.backward()
        return float(loss.item()), img.grad.numpy().copy()


def load_backend(checkpoint: str | None):
    """The hosted model: a local CLIP checkpoint if one is named, else the
    deterministic stand-in."""
    if checkpoint:
        return HuggingFaceClipModel(checkpoint)
    return HashedProjectionModel()
