"""Orbit camera and per-pixel ray generation with bounding-box clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORLD_UP = np.array([0.0, 0.0, 1.0])

# orbit sampling ranges; poses outside them are legal to construct but the
# samplers in augment.py never leave them
PITCH_LIMIT = np.pi / 14.0
DISTANCE_RANGE = (2.0, 4.0)  # in units of r = half the box diagonal


@dataclass(frozen=True)
class CameraPose:
    """Orbit pose looking at the volume center: yaw/pitch in radians, distance
    in world units. Roll is always zero (fixed world up, +z)."""

    yaw: float
    pitch: float
    distance: float

    def __post_init__(self):
        if not (abs(self.pitch) < np.pi / 2):
            raise ValueError(f"pitch {self.pitch} too steep for a z-up orbit camera")
        if not (self.distance > 0):
            raise ValueError("camera distance must be positive")

    def eye(self, center):
        cp = np.cos(self.pitch)
        offset = np.array([
            cp * np.cos(self.yaw),
            cp * np.sin(self.yaw),
            np.sin(self.pitch),
        ])
        return np.asarray(center, dtype=np.float64) + self.distance * offset

    def as_tuple(self):
        return (self.yaw, self.pitch, self.distance)


def look_at_basis(eye, center):
    """Right-handed camera basis: forward toward `center`, zero roll."""
    forward = np.asarray(center, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, WORLD_UP)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        # looking straight along world up; pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    up = np.cross(right, forward)
    return forward, right, up


@dataclass
class RaySet:
    """One ray per pixel, clipped against the volume bounding box.

    t_entry/t_exit parameterize the in-box segment; `hit` marks rays that
    intersect the box at all (missing rays render as pure background).
    Arrays are flat over pixels in row-major (row, column) order.
    """

    origins: np.ndarray   # (R, 3)
    dirs: np.ndarray      # (R, 3), unit length
    t_entry: np.ndarray   # (R,)
    t_exit: np.ndarray    # (R,)
    hit: np.ndarray       # (R,) bool
    height: int
    width: int


def generate_rays(pose: CameraPose, width: int, height: int, fov_y: float,
                  box_lo, box_hi) -> RaySet:
    """Pinhole rays through every pixel center, clipped to [box_lo, box_hi]."""
    box_lo = np.asarray(box_lo, dtype=np.float64)
    box_hi = np.asarray(box_hi, dtype=np.float64)
    center = 0.5 * (box_lo + box_hi)
    eye = pose.eye(center)
    forward, right, up = look_at_basis(eye, center)

    tan_y = np.tan(0.5 * fov_y)
    tan_x = tan_y * (width / height)
    xs = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * tan_x
    ys = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) * tan_y  # row 0 on top
    u, v = np.meshgrid(xs, ys)  # (H, W)
    dirs = (forward[None, None, :]
            + u[..., None] * right[None, None, :]
            + v[..., None] * up[None, None, :])
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(eye, dirs.shape).copy()

    t_entry, t_exit, hit = intersect_box(origins, dirs, box_lo, box_hi)
    return RaySet(origins=origins, dirs=dirs, t_entry=t_entry, t_exit=t_exit,
                  hit=hit, height=height, width=width)


def intersect_box(origins, dirs, box_lo, box_hi):
    """Slab-test ray/box intersection for a batch of rays.

    Returns (t_entry, t_exit, hit) with t_entry >= 0 (origins outside the box
    enter at the first face; origins inside start at 0).
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (box_lo[None, :] - origins) * inv
        t1 = (box_hi[None, :] - origins) * inv
    # rays parallel to a slab: inf/nan handling via minimum/maximum of inf pairs
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    t_entry = np.maximum(tmin, 0.0)
    hit = (tmax > t_entry) & (tmax > 0)
    t_entry = np.where(hit, t_entry, 0.0)
    t_exit = np.where(hit, tmax, 0.0)
    return t_entry, t_exit, hit
