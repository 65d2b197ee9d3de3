"""Loss terms combined during optimization and the phase schedule.

Three pieces: the image score produced by a scorer (cross-entropy against
negative prompts for the CLIP path, plain MSE for the reference path), a
beta-shaped prior pushing per-pixel transmittance toward 0 or 1, and a small
regularizer on the realized transfer function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transfer
from .transfer import TFParams

# transmittance is clamped away from {0, 1} before the log terms; the
# beta negative log-likelihood diverges at the endpoints
EPS_T = 1e-4


def contrastive_loss(pos_logit: float, neg_logits: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Cross-entropy of picking the positive among [pos, negatives].

    Returns (loss, d/dpos, d/dnegs). Uniform logits over K negatives give
    ln(K + 1). Stabilized by max subtraction.
    """
    neg_logits = np.asarray(neg_logits, dtype=np.float64)
    logits = np.concatenate([[float(pos_logit)], neg_logits])
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    z = exp.sum()
    loss = float(np.log(z) - shifted[0])
    p = exp / z
    return loss, float(p[0] - 1.0), p[1:]


def beta_prior_loss(transmittance: np.ndarray, a: float = 0.5,
                    eps_t: float = EPS_T) -> tuple[float, np.ndarray]:
    """Symmetric (a = b) negative beta log-density of per-pixel
    transmittance, averaged over pixels with the normalization constant
    dropped.

    With a < 1 the prior is bimodal at 0 and 1, discouraging the
    half-transparent mush that image scorers otherwise settle into.
    Transmittance is clamped to [eps_t, 1 - eps_t]; clamped pixels get zero
    gradient. The unnormalized value may be negative; at T = 0.5 with
    a = 0.5 it is -ln 2.
    """
    t = np.asarray(transmittance, dtype=np.float64)
    tc = np.clip(t, eps_t, 1.0 - eps_t)
    loss = float(np.mean(-(a - 1.0) * (np.log(tc) + np.log1p(-tc))))
    interior = (t > eps_t) & (t < 1.0 - eps_t)
    grad = np.where(interior, -(a - 1.0) * (1.0 / tc - 1.0 / (1.0 - tc)), 0.0)
    return loss, grad / t.size


def tf_reg_loss(params: TFParams, lambda_density: float = 2e-5,
                lambda_color: float = 8e-4) -> tuple[float, np.ndarray]:
    """L1 on mapped densities plus squared distance of mapped colors from
    mid-gray, with the gradient over the flat raw vector."""
    density = transfer.map_density(params.raw_density)
    color = transfer.map_color(params.raw_color)
    loss = (lambda_density * np.abs(density).sum()
            + lambda_color * ((color - 0.5) ** 2).sum())
    g_den = lambda_density * np.sign(density) * transfer.density_jacobian_diag(params)
    g_col = (2.0 * lambda_color * (color - 0.5)) * transfer.color_jacobian_diag(params)
    g_sp = np.zeros(params.control_points - 1)
    return float(loss), np.concatenate([g_sp, g_den, g_col.ravel()])


@dataclass(frozen=True)
class Phase:
    gray_background: bool
    prior_on: bool


def schedule_phase(step: int, gray_steps: int = 25, prior_start: int = 100) -> Phase:
    """Phase of 1-based optimization step `step`: plain gray backgrounds for
    the first `gray_steps` steps, transmittance prior from `prior_start` on."""
    if step < 1:
        raise ValueError("steps are 1-based")
    return Phase(gray_background=step <= gray_steps, prior_on=step >= prior_start)


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights for the combined objective."""

    w_density: float = 0.02
    lambda_density: float = 2e-5
    lambda_color: float = 8e-4
    beta_shape: float = 0.5
    eps_t: float = EPS_T
    gray_steps: int = 25
    prior_start: int = 100

    def __post_init__(self):
        if not 0.0 < self.beta_shape < 1.0:
            raise ValueError("beta_shape must be in (0, 1)")
        if not 0.0 < self.eps_t < 0.5:
            raise ValueError("eps_t must be in (0, 0.5)")
        if self.w_density < 0 or self.lambda_density < 0 or self.lambda_color < 0:
            raise ValueError("objective weights must be non-negative")
