"""3D scalar fields: raw-file ingestion, preprocessing, and trilinear sampling.

Grid layout follows the usual dense raw-volume convention: x varies fastest,
z slowest. The field lives in a world-space box [0, dims*spacing] per axis,
with the voxel (i, j, k) centered at ((i+0.5)*sx, (j+0.5)*sy, (k+0.5)*sz).
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVolumeError, VolumeFormatError

DTYPES = {
    "uint8": np.uint8,
    "uint16": np.uint16,
    "float32": np.float32,
}


@dataclass(frozen=True)
class VolumeMeta:
    """Shape/dtype/spacing sidecar for a raw little-endian volume file."""

    dims: tuple[int, int, int]
    dtype: str
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise VolumeFormatError(f"unsupported dtype {self.dtype!r}; expected one of {sorted(DTYPES)}")
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise VolumeFormatError(f"dims must be 3 positive integers, got {self.dims!r}")
        if len(self.spacing) != 3 or any(not (s > 0) for s in self.spacing):
            raise VolumeFormatError(f"spacing must be 3 positive reals, got {self.spacing!r}")

    @property
    def voxel_count(self):
        dx, dy, dz = self.dims
        return dx * dy * dz

    @property
    def byte_size(self):
        return self.voxel_count * np.dtype(DTYPES[self.dtype]).itemsize


class ScalarField:
    """Immutable dense scalar field with spacing metadata.

    `values` is float64 with shape (dims_x, dims_y, dims_z). Integer inputs
    are kept at their raw numeric values; range normalization is the transfer
    function's job.
    """

    def __init__(self, values, spacing=(1.0, 1.0, 1.0)):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise VolumeFormatError(f"expected a 3D array, got shape {values.shape}")
        if any(s <= 0 for s in spacing):
            raise VolumeFormatError(f"spacing must be strictly positive, got {spacing!r}")
        self.values = values
        self.values.flags.writeable = False
        self.spacing = tuple(float(s) for s in spacing)
        self.value_min = float(values.min())
        self.value_max = float(values.max())
        if not np.isfinite(self.value_min) or not np.isfinite(self.value_max):
            raise VolumeFormatError("volume contains non-finite values")
        if self.value_min == self.value_max:
            raise DegenerateVolumeError(
                f"constant field (all values {self.value_min}); cannot span a TF domain"
            )
        # flat view + strides for fast gather-based interpolation
        self._flat = self.values.reshape(-1)  # x-fastest ordering after transpose below
        # values is indexed [x, y, z] but stored C-contiguous, so flat stride of
        # x is dims_y*dims_z. Precompute strides for flat-index arithmetic.
        dx, dy, dz = self.values.shape
        self._sx, self._sy, self._sz = dy * dz, dz, 1

    @property
    def dims(self):
        return self.values.shape

    @property
    def box_size(self):
        return tuple(d * s for d, s in zip(self.dims, self.spacing))

    @property
    def center(self):
        return tuple(0.5 * e for e in self.box_size)

    @property
    def bounding_radius(self):
        """Half the box diagonal; the orbit-camera distance unit."""
        return 0.5 * float(np.linalg.norm(self.box_size))

    def sample_many(self, points):
        """Trilinear interpolation at world-space `points` of shape (N, 3).

        Interpolates between voxel centers; within the half-voxel boundary
        band the nearest-cell value extends outward, and points outside the
        bounding box return value_min (the renderer clips rays to the box, so
        that path only guards float edge cases).
        """
        points = np.asarray(points, dtype=np.float64)
        spacing = np.asarray(self.spacing)
        dims = np.asarray(self.dims)
        g = points / spacing - 0.5  # voxel-center grid coordinates
        inside = np.all((points >= 0.0) & (points <= dims * spacing), axis=-1)
        i0 = np.floor(g).astype(np.int64)
        frac = g - i0
        hi = dims - 2
        # clamp cells so i0 and i0+1 are valid; clamp frac so clamped cells
        # extend their edge value instead of extrapolating
        low_clip = i0 < 0
        high_clip = i0 > hi
        np.clip(i0, 0, np.maximum(hi, 0), out=i0)
        frac = np.where(low_clip, 0.0, np.where(high_clip, 1.0, frac))
        if np.any(dims == 1):
            frac = np.where(dims == 1, 0.0, frac)

        ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
        fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
        sx, sy, sz = self._sx, self._sy, self._sz
        stepx = sx if self.dims[0] > 1 else 0
        stepy = sy if self.dims[1] > 1 else 0
        stepz = sz if self.dims[2] > 1 else 0
        base = ix * sx + iy * sy + iz * sz
        v = self._flat
        c000 = v[base]
        c100 = v[base + stepx]
        c010 = v[base + stepy]
        c110 = v[base + stepx + stepy]
        c001 = v[base + stepz]
        c101 = v[base + stepx + stepz]
        c011 = v[base + stepy + stepz]
        c111 = v[base + stepx + stepy + stepz]
        c00 = c000 + (c100 - c000) * fx
        c10 = c010 + (c110 - c010) * fx
        c01 = c001 + (c101 - c001) * fx
        c11 = c011 + (c111 - c011) * fx
        c0 = c00 + (c10 - c00) * fy
        c1 = c01 + (c11 - c01) * fy
        out = c0 + (c1 - c0) * fz
        return np.where(inside, out, self.value_min)

    def sample(self, point):
        """Trilinear sample at a single world-space point."""
        return float(self.sample_many(np.asarray(point, dtype=np.float64)[None, :])[0])

    def histogram(self, bins):
        """Voxel-count histogram over [value_min, value_max].

        Uniform binning; value_max lands in the last bin; counts sum to the
        voxel count.
        """
        if bins < 1:
            raise ValueError("bins must be >= 1")
        counts, _ = np.histogram(self.values, bins=bins, range=(self.value_min, self.value_max))
        return counts


def load_raw(path, meta: VolumeMeta) -> ScalarField:
    """Load a dense little-endian raw volume file described by `meta`."""
    actual = os.path.getsize(path)
    if actual != meta.byte_size:
        raise VolumeFormatError(
            f"{path}: file is {actual} bytes but {meta.dims} {meta.dtype} needs {meta.byte_size}"
        )
    dt = np.dtype(DTYPES[meta.dtype]).newbyteorder("<")
    raw = np.fromfile(path, dtype=dt)
    dx, dy, dz = meta.dims
    # x-fastest on disk -> reshape as [z][y][x], transpose to [x][y][z]
    values = raw.reshape(dz, dy, dx).transpose(2, 1, 0).astype(np.float64)
    return ScalarField(values, spacing=meta.spacing)


def save_raw(field: ScalarField, path, dtype="float32"):
    """Write a field back out in the same x-fastest raw layout."""
    if dtype not in DTYPES:
        raise VolumeFormatError(f"unsupported dtype {dtype!r}")
    dt = np.dtype(DTYPES[dtype]).newbyteorder("<")
    field.values.transpose(2, 1, 0).astype(dt).tofile(path)


def downsample(field: ScalarField, factor: int) -> ScalarField:
    """Block-average pooling over factor^3 blocks.

    Partial boundary blocks average over the voxels present. Output dims are
    ceil(dims/factor) and spacing is multiplied by factor.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return field
    vals = field.values
    for axis in range(3):
        n = vals.shape[axis]
        edges = np.arange(0, n, factor)
        sums = np.add.reduceat(vals, edges, axis=axis)
        sizes = np.minimum(edges + factor, n) - edges
        shape = [1, 1, 1]
        shape[axis] = len(edges)
        vals = sums / sizes.reshape(shape)
    return ScalarField(vals, spacing=tuple(s * factor for s in field.spacing))


def crop(field: ScalarField, lo, hi) -> ScalarField:
    """Extract the voxel sub-box [lo, hi); spacing unchanged, range recomputed."""
    lo = tuple(int(v) for v in lo)
    hi = tuple(int(v) for v in hi)
    for axis in range(3):
        if not (0 <= lo[axis] < hi[axis] <= field.dims[axis]):
            raise VolumeFormatError(
                f"crop bounds {lo}..{hi} out of range for dims {field.dims} on axis {axis}"
            )
    vals = field.values[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    return ScalarField(vals, spacing=field.spacing)


_FILENAME_RE = re.compile(r"_(\d+)x(\d+)x(\d+)_(uint8|uint16|float32)\.raw$")


def parse_raw_filename(path) -> VolumeMeta | None:
    """Parse the name_XxYxZ_dtype.raw convention; None if it doesn't match."""
    m = _FILENAME_RE.search(os.path.basename(path))
    if not m:
        return None
    dims = (int(m.group(1)), int(m.group(2)), int(m.group(3)))
    return VolumeMeta(dims=dims, dtype=m.group(4))


def load_sidecar(path) -> VolumeMeta:
    """Read a JSON sidecar ({"dims", "dtype", "spacing"?}) next to a raw file."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    try:
        dims = tuple(int(d) for d in doc["dims"])
        dtype = str(doc["dtype"])
    except (KeyError, TypeError, ValueError) as e:
        raise VolumeFormatError(f"{path}: bad sidecar: {e}") from e
    spacing = tuple(float(s) for s in doc.get("spacing", (1.0, 1.0, 1.0)))
    return VolumeMeta(dims=dims, dtype=dtype, spacing=spacing)


def resolve_meta(volume_path, dims=None, dtype=None, spacing=None) -> VolumeMeta:
    """Resolve metadata from explicit values, a .json sidecar, or the filename.

    Explicit dims/dtype win; a sidecar named <volume>.json is consulted next;
    the filename convention is the fallback.
    """
    base = None
    sidecar = os.path.splitext(volume_path)[0] + ".json"
    if os.path.exists(sidecar):
        base = load_sidecar(sidecar)
    else:
        base = parse_raw_filename(volume_path)
    if dims is None and base is not None:
        dims = base.dims
    if dtype is None and base is not None:
        dtype = base.dtype
    if spacing is None:
        spacing = base.spacing if base is not None else (1.0, 1.0, 1.0)
    if dims is None or dtype is None:
        raise VolumeFormatError(
            f"{volume_path}: no dims/dtype given and neither sidecar nor filename convention applies"
        )
    return VolumeMeta(dims=tuple(dims), dtype=dtype, spacing=tuple(spacing))
