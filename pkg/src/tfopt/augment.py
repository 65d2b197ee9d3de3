"""Randomized poses and backgrounds for optimization steps.

Every random draw comes from a child generator derived from
(seed, step, view, tag), so any view of any step can be regenerated in
isolation and the stream stays identical regardless of evaluation order.
"""

from __future__ import annotations

import numpy as np

from .camera import DISTANCE_RANGE, PITCH_LIMIT, CameraPose

# stream tags; one per independent random decision
TAG_POSE = 0
TAG_BACKGROUND = 1
TAG_NEGATIVES = 2

CHECKER_CELLS = (4, 8, 16)
FOURIER_WAVES = 4


def child_rng(seed: int, step: int, view: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, view, tag]))


def sample_pose(rng: np.random.Generator, radius: float) -> CameraPose:
    """Uniform orbit pose: yaw over the full circle, pitch within the narrow
    band around the equator, distance between twice and four times the
    bounding radius."""
    yaw = rng.uniform(0.0, 2.0 * np.pi)
    pitch = rng.uniform(-PITCH_LIMIT, PITCH_LIMIT)
    distance = rng.uniform(DISTANCE_RANGE[0] * radius, DISTANCE_RANGE[1] * radius)
    return CameraPose(yaw=yaw, pitch=pitch, distance=distance)


def reference_pose(radius: float) -> CameraPose:
    """The canonical straight-on pose used for seeding and progress checks."""
    return CameraPose(yaw=0.0, pitch=0.0, distance=3.0 * radius)


def gray_background(height: int, width: int, shade: float) -> np.ndarray:
    return np.full((height, width, 3), float(shade))


def checkerboard(height: int, width: int, cell: int, color_a, color_b) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    parity = ((ys // cell) + (xs // cell)) % 2
    out = np.where(parity[..., None] == 0, np.asarray(color_a, dtype=np.float64),
                   np.asarray(color_b, dtype=np.float64))
    return out


def noise_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(height, width, 3))


def fourier_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Sum of a few random low-frequency plane waves per channel, rescaled
    to span [0, 1]."""
    ys = np.linspace(0.0, 1.0, height)[:, None]
    xs = np.linspace(0.0, 1.0, width)[None, :]
    out = np.empty((height, width, 3))
    for ch in range(3):
        acc = np.zeros((height, width))
        for _ in range(FOURIER_WAVES):
            fy, fx = rng.uniform(-3.0, 3.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.5, 1.0)
            acc += amp * np.sin(2.0 * np.pi * (fy * ys + fx * xs) + phase)
        lo, hi = acc.min(), acc.max()
        out[..., ch] = (acc - lo) / (hi - lo) if hi > lo else 0.5
    return out


def sample_background(rng: np.random.Generator, height: int, width: int,
                      gray_only: bool = False) -> np.ndarray:
    """Random background image in [0, 1].

    In gray_only mode (the opening phase of a run) a single random shade
    fills the frame. Otherwise one of checkerboard, per-pixel noise, or
    low-frequency Fourier patterns is drawn with equal probability.
    """
    if gray_only:
        return gray_background(height, width, rng.uniform(0.0, 1.0))
    kind = rng.integers(0, 3)
    if kind == 0:
        cell = int(rng.choice(CHECKER_CELLS))
        color_a = rng.uniform(0.0, 1.0, size=3)
        color_b = rng.uniform(0.0, 1.0, size=3)
        return checkerboard(height, width, cell, color_a, color_b)
    if kind == 1:
        return noise_background(rng, height, width)
    return fourier_background(rng, height, width)
