"""Procedural volumes for tests, demos, and benchmarks.

All generators are deterministic (any randomness is seeded internally) and
return ready-to-use scalar fields with unit spacing.
"""

from __future__ import annotations

import numpy as np

from .transfer import TFRealized
from .volume import ScalarField


def _radial_grid(n: int, axes=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Distance from the volume center in units of the half-extent,
    optionally squashed per axis to make ellipsoidal level sets."""
    # voxel centers at (i + 0.5), center of the box at n/2
    coords = (np.arange(n) + 0.5) - 0.5 * n
    x, y, z = np.meshgrid(coords, coords, coords, indexing="ij")
    ax, ay, az = axes
    return np.sqrt((x / ax) ** 2 + (y / ay) ** 2 + (z / az) ** 2) / (0.5 * n)


def two_shell_field(n: int = 32) -> ScalarField:
    """Two nested ellipsoidal shells with smooth radial profiles.

    The inner shell carries values near 1, the outer near 0.5, empty space
    near 0. Values are normalized to span [0, 1] exactly. The shells are
    deliberately anisotropic so different camera orbits see genuinely
    different silhouettes.
    """
    d = _radial_grid(n, axes=(1.0, 0.88, 0.76))
    values = (np.exp(-(((d - 0.30) / 0.08) ** 2))
              + 0.52 * np.exp(-(((d - 0.62) / 0.07) ** 2)))
    values -= values.min()
    values /= values.max()
    return ScalarField(values=values, spacing=(1.0, 1.0, 1.0))


def two_shell_reference_tf() -> TFRealized:
    """A hand-picked ground-truth TF for two_shell_field: the outer shell
    renders as a translucent teal skin, the inner as a dense warm core."""
    return TFRealized(
        positions=np.array([0.0, 0.18, 0.40, 0.62, 0.82, 1.0]),
        density=np.array([0.0, 0.0, 0.55, 0.12, 1.6, 2.4]),
        color=np.array([
            [0.1, 0.1, 0.1],
            [0.15, 0.3, 0.35],
            [0.2, 0.75, 0.7],
            [0.3, 0.4, 0.3],
            [0.9, 0.55, 0.2],
            [1.0, 0.85, 0.4],
        ]),
    )


def potted_plant_field(n: int = 256, seed: int = 7) -> ScalarField:
    """A tree-like volume at typical CT scale: a trunk, a blobby canopy,
    a pot, and faint air noise, quantized to 256 levels like an 8-bit scan.

    Serves as the large smoke-test volume; the histogram is strongly peaked
    at air values with small populations in the structures, which is the
    regime the inverse-histogram density seeding targets.
    """
    rng = np.random.default_rng(seed)
    coords = (np.arange(n) + 0.5) / n  # normalized [0, 1]
    # broadcast axes instead of full meshgrids to keep peak memory down
    x = coords[:, None, None]
    y = coords[None, :, None]
    z = coords[None, None, :]

    values = np.zeros((n, n, n))

    # pot: short wide cylinder at the bottom
    pot = (np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2) < 0.22) & (z < 0.18) & (z > 0.04)
    values[pot] = 0.55

    # trunk: narrow cylinder with a slight lean
    lean = 0.06 * (z - 0.15)
    trunk = (np.sqrt((x - 0.5 - lean) ** 2 + (y - 0.5) ** 2) < 0.035) \
        & (z >= 0.15) & (z < 0.55)
    values[trunk] = 0.8

    # canopy: union of soft gaussian blobs
    canopy = np.zeros_like(values)
    for _ in range(24):
        cx, cy = rng.uniform(0.3, 0.7, size=2)
        cz = rng.uniform(0.5, 0.8)
        radius = rng.uniform(0.06, 0.14)
        r2 = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
        canopy = np.maximum(canopy, np.exp(-r2 / (2 * radius ** 2)))
    values = np.maximum(values, 0.35 * canopy)

    # air: faint background noise so the histogram has a realistic peak
    values += rng.uniform(0.0, 0.02, size=values.shape)

    quantized = np.floor(np.clip(values, 0.0, 1.0) * 255.0)
    return ScalarField(values=quantized, spacing=(1.0, 1.0, 1.0))
