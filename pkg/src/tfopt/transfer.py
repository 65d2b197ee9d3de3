"""Piecewise-linear transfer functions over unconstrained trainable parameters.

The trainable vector holds, in flat order: M-1 raw spacings, M raw densities,
M*3 raw colors. Control-point positions come from softplus-positive spacings
cumulatively summed and rescaled so the first point sits at the field minimum
and the last at the field maximum. Densities map to [0, 255] and color
channels to [0, 1] through (tanh(x)+1)/2 scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TFFormatError

DENSITY_SCALE = 255.0


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def map_density(raw):
    """Unconstrained raw density -> [0, 255]."""
    return DENSITY_SCALE * 0.5 * (np.tanh(raw) + 1.0)


def map_color(raw):
    """Unconstrained raw color -> [0, 1] per channel."""
    return 0.5 * (np.tanh(raw) + 1.0)


def unmap_density(density):
    """Inverse of map_density; input clamped away from the saturated ends."""
    t = np.clip(np.asarray(density, dtype=np.float64) / DENSITY_SCALE * 2.0 - 1.0, -1.0 + 1e-12, 1.0 - 1e-12)
    return np.arctanh(t)


def unmap_color(color):
    t = np.clip(np.asarray(color, dtype=np.float64) * 2.0 - 1.0, -1.0 + 1e-12, 1.0 - 1e-12)
    return np.arctanh(t)


@dataclass
class TFParams:
    """Unconstrained trainable parameters of a piecewise-linear TF."""

    raw_spacings: np.ndarray  # (M-1,)
    raw_density: np.ndarray   # (M,)
    raw_color: np.ndarray     # (M, 3)

    def __post_init__(self):
        self.raw_spacings = np.asarray(self.raw_spacings, dtype=np.float64)
        self.raw_density = np.asarray(self.raw_density, dtype=np.float64)
        self.raw_color = np.asarray(self.raw_color, dtype=np.float64)
        m = self.raw_density.shape[0]
        if m < 2:
            raise ValueError("a TF needs at least 2 control points")
        if self.raw_spacings.shape != (m - 1,) or self.raw_color.shape != (m, 3):
            raise ValueError(
                f"inconsistent shapes: spacings {self.raw_spacings.shape}, "
                f"density {self.raw_density.shape}, color {self.raw_color.shape}"
            )
        for name, arr in (("raw_spacings", self.raw_spacings),
                          ("raw_density", self.raw_density),
                          ("raw_color", self.raw_color)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def control_points(self):
        return self.raw_density.shape[0]

    @property
    def n_params(self):
        m = self.control_points
        return 5 * m - 1

    def pack(self):
        """Flatten to a single vector: [spacings, density, color.ravel()]."""
        return np.concatenate([self.raw_spacings, self.raw_density, self.raw_color.ravel()])

    @classmethod
    def unpack(cls, vec, control_points):
        m = int(control_points)
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (5 * m - 1,):
            raise ValueError(f"expected a flat vector of length {5 * m - 1}, got {vec.shape}")
        return cls(
            raw_spacings=vec[: m - 1].copy(),
            raw_density=vec[m - 1: 2 * m - 1].copy(),
            raw_color=vec[2 * m - 1:].reshape(m, 3).copy(),
        )

    def copy(self):
        return TFParams(self.raw_spacings.copy(), self.raw_density.copy(), self.raw_color.copy())


@dataclass
class TFRealized:
    """Concrete control points: positions, densities in [0,255], RGB in [0,1]."""

    positions: np.ndarray  # (M,) strictly increasing, spans [value_min, value_max]
    density: np.ndarray    # (M,)
    color: np.ndarray      # (M, 3)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.density = np.asarray(self.density, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        m = self.positions.shape[0]
        if m < 2 or self.density.shape != (m,) or self.color.shape != (m, 3):
            raise TFFormatError("inconsistent control-point arrays")
        if not np.all(np.diff(self.positions) > 0):
            raise TFFormatError("positions must be strictly increasing")

    @property
    def control_points(self):
        return self.positions.shape[0]

    @property
    def value_min(self):
        return float(self.positions[0])

    @property
    def value_max(self):
        return float(self.positions[-1])


def realize(params: TFParams, value_min: float, value_max: float) -> TFRealized:
    """Deterministic transform from raw parameters to concrete control points."""
    if not value_min < value_max:
        raise ValueError(f"need value_min < value_max, got [{value_min}, {value_max}]")
    sp = softplus(params.raw_spacings)
    q = np.concatenate([[0.0], np.cumsum(sp)])
    positions = value_min + (value_max - value_min) * (q / q[-1])
    positions[0] = value_min
    positions[-1] = value_max
    return TFRealized(
        positions=positions,
        density=map_density(params.raw_density),
        color=map_color(params.raw_color),
    )


def position_jacobian(params: TFParams, value_min: float, value_max: float) -> np.ndarray:
    """d positions / d raw_spacings, shape (M, M-1).

    Includes the softplus chain. Endpoints are pinned to the value range, so
    their rows are zero.
    """
    sp = softplus(params.raw_spacings)
    q = np.concatenate([[0.0], np.cumsum(sp)])
    total = q[-1]
    scale = (value_max - value_min) / total
    m = params.control_points
    # d p_k / d sp_j = scale * (1[j < k] - q_k/total)
    k_idx = np.arange(m)[:, None]
    j_idx = np.arange(m - 1)[None, :]
    dp_dsp = scale * ((j_idx < k_idx).astype(np.float64) - (q / total)[:, None])
    return dp_dsp * sigmoid(params.raw_spacings)[None, :]


def density_jacobian_diag(params: TFParams) -> np.ndarray:
    """d mapped density / d raw density, diagonal entries, shape (M,)."""
    return DENSITY_SCALE * 0.5 * (1.0 - np.tanh(params.raw_density) ** 2)


def color_jacobian_diag(params: TFParams) -> np.ndarray:
    """d mapped color / d raw color, diagonal entries, shape (M, 3)."""
    return 0.5 * (1.0 - np.tanh(params.raw_color) ** 2)


def locate(realized: TFRealized, s):
    """Segment index and interpolation weight for scalar(s) `s`.

    `s` is clamped to the TF domain first. A value exactly on a control point
    belongs to the segment on its right (the last point has no right segment
    and falls to the final one with weight 1).
    """
    s = np.clip(np.asarray(s, dtype=np.float64), realized.value_min, realized.value_max)
    seg = np.clip(np.searchsorted(realized.positions, s, side="right") - 1,
                  0, realized.control_points - 2)
    width = realized.positions[seg + 1] - realized.positions[seg]
    u = (s - realized.positions[seg]) / width
    return seg, u


def evaluate(realized: TFRealized, s):
    """Piecewise-linear (density, color) at scalar(s) `s`, clamped to the domain.

    Vectorized: s of shape (...,) gives density (...,) and color (..., 3).
    """
    s = np.clip(np.asarray(s, dtype=np.float64), realized.value_min, realized.value_max)
    sigma = np.interp(s, realized.positions, realized.density)
    rgb = np.stack([np.interp(s, realized.positions, realized.color[:, ch]) for ch in range(3)], axis=-1)
    return sigma, rgb


def eval_with_jacobian(params: TFParams, s, value_min: float, value_max: float):
    """Evaluate at a single scalar and differentiate against all raw parameters.

    Returns (sigma, rgb, dsigma_dphi, drgb_dphi) with dsigma_dphi of shape
    (5M-1,) and drgb_dphi of shape (3, 5M-1), in the flat pack() layout.
    """
    realized = realize(params, value_min, value_max)
    m = params.control_points
    seg, u = locate(realized, float(s))
    seg = int(seg)
    u = float(u)
    lo, hi = seg, seg + 1
    d_lo, d_hi = realized.density[lo], realized.density[hi]
    c_lo, c_hi = realized.color[lo], realized.color[hi]
    sigma = d_lo + u * (d_hi - d_lo)
    rgb = c_lo + u * (c_hi - c_lo)

    n = params.n_params
    dsigma = np.zeros(n)
    drgb = np.zeros((3, n))

    dd = density_jacobian_diag(params)
    dc = color_jacobian_diag(params)
    off_d = m - 1
    off_c = 2 * m - 1
    dsigma[off_d + lo] = (1.0 - u) * dd[lo]
    dsigma[off_d + hi] = u * dd[hi]
    for ch in range(3):
        drgb[ch, off_c + lo * 3 + ch] = (1.0 - u) * dc[lo, ch]
        drgb[ch, off_c + hi * 3 + ch] = u * dc[hi, ch]

    # positions move the interpolation weight: du/dp_lo = (u-1)/w, du/dp_hi = -u/w
    width = realized.positions[hi] - realized.positions[lo]
    dp = position_jacobian(params, value_min, value_max)  # (M, M-1), raw chain included
    du_draw = ((u - 1.0) / width) * dp[lo] + (-u / width) * dp[hi]  # (M-1,)
    dsigma[: m - 1] = (d_hi - d_lo) * du_draw
    for ch in range(3):
        drgb[ch, : m - 1] = (c_hi[ch] - c_lo[ch]) * du_draw
    return sigma, rgb, dsigma, drgb


def export_tf(realized: TFRealized, path):
    """Write the control points as text: header `M value_min value_max`,
    then one `position density r g b` line per point."""
    lines = [f"{realized.control_points} {float(realized.value_min)!r} {float(realized.value_max)!r}"]
    for k in range(realized.control_points):
        p = float(realized.positions[k])
        d = float(realized.density[k])
        r, g, b = (float(c) for c in realized.color[k])
        lines.append(f"{p!r} {d!r} {r!r} {g!r} {b!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def import_tf(path) -> TFRealized:
    """Read a TF text file written by export_tf; validates all invariants."""
    with open(path, encoding="utf-8") as f:
        rows = [ln.strip() for ln in f if ln.strip()]
    if not rows:
        raise TFFormatError(f"{path}: empty TF file")
    head = rows[0].split()
    if len(head) != 3:
        raise TFFormatError(f"{path}: header must be 'M value_min value_max'")
    try:
        m = int(head[0])
        vmin, vmax = float(head[1]), float(head[2])
    except ValueError as e:
        raise TFFormatError(f"{path}: bad header: {e}") from e
    if m < 2:
        raise TFFormatError(f"{path}: need at least 2 control points, header says {m}")
    if len(rows) - 1 != m:
        raise TFFormatError(f"{path}: header says {m} points but file has {len(rows) - 1} records")
    data = np.zeros((m, 5))
    for i, row in enumerate(rows[1:]):
        parts = row.split()
        if len(parts) != 5:
            raise TFFormatError(f"{path}: record {i} must be 'position density r g b'")
        try:
            data[i] = [float(p) for p in parts]
        except ValueError as e:
            raise TFFormatError(f"{path}: record {i}: {e}") from e
    positions, density, color = data[:, 0], data[:, 1], data[:, 2:]
    if not np.all(np.diff(positions) > 0):
        raise TFFormatError(f"{path}: positions must be strictly increasing")
    for name, lo, hi, arr in (("density", 0.0, DENSITY_SCALE, density), ("color", 0.0, 1.0, color)):
        if arr.min() < lo or arr.max() > hi:
            raise TFFormatError(f"{path}: {name} values outside [{lo}, {hi}]")
    span = max(abs(vmin), abs(vmax), 1.0)
    if abs(positions[0] - vmin) > 1e-9 * span or abs(positions[-1] - vmax) > 1e-9 * span:
        raise TFFormatError(f"{path}: header range [{vmin}, {vmax}] does not match endpoint positions")
    return TFRealized(positions=positions, density=density, color=color)


def uniform_spacing_raws(control_points: int) -> np.ndarray:
    """Equal raw spacings (zeros) give a uniform control-point grid."""
    return np.zeros(control_points - 1)


def random_color_raws(control_points: int, rng, low=0.3, high=0.7) -> np.ndarray:
    """Raw colors whose mapped values are uniform in [low, high]."""
    mapped = rng.uniform(low, high, size=(control_points, 3))
    return unmap_color(mapped)


def inverse_histogram_seed(field, control_points: int, eps: float = 1.0) -> np.ndarray:
    """Density seed shape: one weight per control point, inversely proportional
    to the volume histogram with an eps-count floor, normalized to peak 1."""
    counts = field.histogram(control_points)
    w = 1.0 / (counts.astype(np.float64) + eps)
    return w / w.max()
