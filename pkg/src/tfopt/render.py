"""Forward absorption-emission ray marching and its reverse-mode adjoint.

Marching uses a fixed step size with samples at step midpoints plus one
partial step covering the remainder to the box exit, so the marched length
equals the ray/box overlap exactly. Per step n with extinction sigma_n and
length d_n, the step transparency is a_n = exp(-sigma_n d_n); emission is
weighted by the transmittance entering the step:

    C   = sum_n T_{n-1} (1 - a_n) c_n,      T_n = prod_{i<=n} a_i,
    T_N = prod_n a_n,

which telescopes to C = (1 - exp(-sigma*L)) c on constant-property rays.
The adjoint recomputes per-step quantities from cached sampled scalars, so
memory scales with sample count, not samples x parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import transfer
from .camera import CameraPose, RaySet, generate_rays
from .transfer import TFParams, TFRealized
from .volume import ScalarField


@dataclass(frozen=True)
class RenderConfig:
    """Image and marching resolution knobs.

    step_size None resolves to half the smallest voxel spacing. max_steps
    caps the per-ray step count; fov_y is the vertical field of view in
    radians.
    """

    width: int = 224
    height: int = 224
    step_size: float | None = None
    fov_y: float = np.deg2rad(60.0)
    max_steps: int = 4096
    ray_chunk: int = 4096

    def resolve_step(self, field: ScalarField) -> float:
        if self.step_size is not None:
            if not self.step_size > 0:
                raise ValueError("step_size must be positive")
            return float(self.step_size)
        return 0.5 * min(field.spacing)


@dataclass
class _ChunkCache:
    start: int
    stop: int
    n_full: np.ndarray    # (C,) full steps per ray
    rem: np.ndarray       # (C,) partial-step length (0 if none)
    scalars: np.ndarray   # flat sampled field values, ray-major then step


@dataclass
class MarchCache:
    """Sampled scalars plus step metadata from a forward render."""

    delta: float
    n_rays: int
    chunks: list[_ChunkCache] = dc_field(default_factory=list)


@dataclass
class RenderOutput:
    color: np.ndarray          # (H, W, 3) accumulated emission
    transmittance: np.ndarray  # (H, W) final per-ray transmittance
    image: np.ndarray          # (H, W, 3) color + transmittance * background
    cache: MarchCache | None
    rays: RaySet


def _as_realized(tf, field):
    if isinstance(tf, TFRealized):
        return tf
    return transfer.realize(tf, field.value_min, field.value_max)


def _step_layout(t_entry, t_exit, delta, max_steps):
    """Per-ray counts of full steps plus the partial remainder length."""
    length = np.maximum(t_exit - t_entry, 0.0)
    n_full = np.minimum(np.floor(length / delta).astype(np.int64), max_steps)
    rem = np.where(n_full < max_steps, length - n_full * delta, 0.0)
    rem = np.maximum(rem, 0.0)
    return n_full, rem


def _dense_deltas(n_full, rem, delta, n_max):
    idx = np.arange(n_max)[None, :]
    full = idx < n_full[:, None]
    partial = (idx == n_full[:, None]) & (rem[:, None] > 0)
    deltas = np.where(full, delta, 0.0)
    deltas = np.where(partial, rem[:, None], deltas)
    return deltas, full, partial


def composite_steps(sigmas, colors, deltas):
    """Front-to-back compositing of one ray; the one-ray reference for the
    vectorized path. Returns (accumulated rgb, final transmittance)."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    a = np.exp(-sigmas * deltas)
    t_after = np.cumprod(a)
    t_before = np.concatenate([[1.0], t_after[:-1]])
    w = t_before - t_after
    return (w[:, None] * colors).sum(axis=0), float(t_after[-1]) if len(a) else 1.0


def render(field: ScalarField, tf, pose: CameraPose, config: RenderConfig,
           background: np.ndarray, keep_cache: bool = True) -> RenderOutput:
    """Render the field through the TF at `pose`, composited over `background`.

    `tf` may be TFParams (realized against the field range) or a TFRealized.
    `background` is (H, W, 3) in [0, 1]. The returned march cache feeds
    render_adjoint; pass keep_cache=False to drop it.
    """
    realized = _as_realized(tf, field)
    h, w = config.height, config.width
    background = np.asarray(background, dtype=np.float64)
    if background.shape != (h, w, 3):
        raise ValueError(f"background must be ({h}, {w}, 3), got {background.shape}")
    delta = config.resolve_step(field)
    rays = generate_rays(pose, w, h, config.fov_y, (0.0, 0.0, 0.0), field.box_size)

    n_rays = h * w
    color = np.zeros((n_rays, 3))
    trans = np.ones(n_rays)
    cache = MarchCache(delta=delta, n_rays=n_rays) if keep_cache else None

    for start in range(0, n_rays, config.ray_chunk):
        stop = min(start + config.ray_chunk, n_rays)
        n_full, rem = _step_layout(rays.t_entry[start:stop], rays.t_exit[start:stop],
                                   delta, config.max_steps)
        n_steps = n_full + (rem > 0)
        n_max = int(n_steps.max()) if len(n_steps) else 0
        if n_max == 0:
            if cache is not None:
                cache.chunks.append(_ChunkCache(start, stop, n_full, rem, np.empty(0)))
            continue
        deltas, full, partial = _dense_deltas(n_full, rem, delta, n_max)
        valid = full | partial

        idx = np.arange(n_max)[None, :]
        t_mid = rays.t_entry[start:stop, None] + np.where(
            partial, n_full[:, None] * delta + 0.5 * rem[:, None], (idx + 0.5) * delta)
        ray_rows, step_cols = np.nonzero(valid)
        pts = (rays.origins[start:stop][ray_rows]
               + rays.dirs[start:stop][ray_rows] * t_mid[ray_rows, step_cols][:, None])
        scal_flat = field.sample_many(pts)
        if cache is not None:
            cache.chunks.append(_ChunkCache(start, stop, n_full, rem, scal_flat))

        sig_flat, rgb_flat = transfer.evaluate(realized, scal_flat)
        sigma = np.zeros_like(deltas)
        sigma[valid] = sig_flat
        rgb = np.zeros(deltas.shape + (3,))
        rgb[valid] = rgb_flat

        a = np.exp(-sigma * deltas)
        t_after = np.cumprod(a, axis=1)
        t_before = np.concatenate([np.ones((a.shape[0], 1)), t_after[:, :-1]], axis=1)
        wgt = t_before - t_after
        color[start:stop] = np.einsum("rn,rnc->rc", wgt, rgb)
        trans[start:stop] = t_after[:, -1]

    color_img = color.reshape(h, w, 3)
    trans_img = trans.reshape(h, w)
    image = color_img + trans_img[..., None] * background
    return RenderOutput(color=color_img, transmittance=trans_img, image=image,
                        cache=cache, rays=rays)


def render_adjoint(field: ScalarField, params: TFParams, cache: MarchCache,
                   background: np.ndarray, dl_dimage: np.ndarray,
                   dl_dtransmittance: np.ndarray | None = None) -> np.ndarray:
    """Reverse-mode gradient of a scalar loss through the rendering recurrence.

    `dl_dimage` is the loss gradient against the composited image (H, W, 3);
    `dl_dtransmittance` optionally injects an extra gradient against the
    final per-ray transmittance (H, W), e.g. from a transmittance prior.
    Returns the gradient over the flat raw parameter vector. Accumulation
    runs in fixed chunk order, so results are deterministic.
    """
    if cache is None:
        raise ValueError("render_adjoint needs the march cache of the paired forward render")
    realized = transfer.realize(params, field.value_min, field.value_max)
    m = params.control_points
    pos, den, col = realized.positions, realized.density, realized.color

    gc_flat = np.asarray(dl_dimage, dtype=np.float64).reshape(cache.n_rays, 3)
    gt_flat = np.einsum("rc,rc->r", gc_flat,
                        np.asarray(background, dtype=np.float64).reshape(cache.n_rays, 3))
    if dl_dtransmittance is not None:
        gt_flat = gt_flat + np.asarray(dl_dtransmittance, dtype=np.float64).reshape(cache.n_rays)

    g_pos = np.zeros(m)
    g_den = np.zeros(m)
    g_col = np.zeros((m, 3))
    delta = cache.delta

    for chunk in cache.chunks:
        if chunk.scalars.size == 0:
            continue
        n_steps = chunk.n_full + (chunk.rem > 0)
        n_max = int(n_steps.max())
        deltas, full, partial = _dense_deltas(chunk.n_full, chunk.rem, delta, n_max)
        valid = full | partial

        # recompute the piecewise-linear evaluation with segment bookkeeping
        seg, u = transfer.locate(realized, chunk.scalars)
        d_lo, d_hi = den[seg], den[seg + 1]
        sig_flat = d_lo + u * (d_hi - d_lo)
        c_lo, c_hi = col[seg], col[seg + 1]
        rgb_flat = c_lo + u[:, None] * (c_hi - c_lo)

        sigma = np.zeros_like(deltas)
        sigma[valid] = sig_flat
        rgb = np.zeros(deltas.shape + (3,))
        rgb[valid] = rgb_flat

        a = np.exp(-sigma * deltas)
        t_after = np.cumprod(a, axis=1)
        t_before = np.concatenate([np.ones((a.shape[0], 1)), t_after[:, :-1]], axis=1)
        wgt = t_before - t_after
        t_n = t_after[:, -1]

        gc = gc_flat[chunk.start:chunk.stop]          # (C, 3)
        gt = gt_flat[chunk.start:chunk.stop]          # (C,)
        ghat = np.einsum("rc,rnc->rn", gc, rgb)       # per-step emission pull
        pref = np.cumsum(ghat * wgt, axis=1)
        suffix = pref[:, -1:] - pref                  # sum over later steps
        # d loss / d sigma_n: own-step emission vs occlusion of later steps
        # and of the final transmittance
        g_sigma = deltas * (ghat * t_after - suffix - (t_n * gt)[:, None])
        g_rgb = gc[:, None, :] * wgt[..., None]

        gs = g_sigma[valid]
        gr = g_rgb[valid]
        one_u = 1.0 - u
        g_den += np.bincount(seg, gs * one_u, minlength=m)
        g_den += np.bincount(seg + 1, gs * u, minlength=m)
        for ch in range(3):
            g_col[:, ch] += np.bincount(seg, gr[:, ch] * one_u, minlength=m)
            g_col[:, ch] += np.bincount(seg + 1, gr[:, ch] * u, minlength=m)
        width = pos[seg + 1] - pos[seg]
        g_u = gs * (d_hi - d_lo) + np.einsum("sc,sc->s", gr, c_hi - c_lo)
        g_pos += np.bincount(seg, g_u * (u - 1.0) / width, minlength=m)
        g_pos += np.bincount(seg + 1, g_u * (-u) / width, minlength=m)

    g_spacings = g_pos @ transfer.position_jacobian(params, field.value_min, field.value_max)
    g_density = g_den * transfer.density_jacobian_diag(params)
    g_color = g_col * transfer.color_jacobian_diag(params)
    return np.concatenate([g_spacings, g_density, g_color.ravel()])


class TransmittanceProbe:
    """One-time march at a fixed pose exposing cheap transmittance
    re-evaluation (and its density gradient) for candidate TFs.

    Only box-hitting rays participate; rays that miss keep transmittance 1
    regardless of the TF, so including them would put the mean target out of
    reach for any density assignment.
    """

    def __init__(self, field: ScalarField, pose: CameraPose, config: RenderConfig):
        self.field = field
        delta = config.resolve_step(field)
        rays = generate_rays(pose, config.width, config.height, config.fov_y,
                             (0.0, 0.0, 0.0), field.box_size)
        hit = rays.hit
        n_full, rem = _step_layout(rays.t_entry[hit], rays.t_exit[hit], delta, config.max_steps)
        counts = n_full + (rem > 0)
        self.n_hit = int(hit.sum())
        self.offsets = np.concatenate([[0], np.cumsum(counts)])

        scalars = []
        deltas = []
        origins, dirs = rays.origins[hit], rays.dirs[hit]
        t_entry = rays.t_entry[hit]
        chunk = config.ray_chunk
        for start in range(0, self.n_hit, chunk):
            stop = min(start + chunk, self.n_hit)
            nf, rm = n_full[start:stop], rem[start:stop]
            n_max = int((nf + (rm > 0)).max()) if stop > start else 0
            if n_max == 0:
                continue
            dd, fullm, partialm = _dense_deltas(nf, rm, delta, n_max)
            valid = fullm | partialm
            idx = np.arange(n_max)[None, :]
            t_mid = t_entry[start:stop, None] + np.where(
                partialm, nf[:, None] * delta + 0.5 * rm[:, None], (idx + 0.5) * delta)
            rows, cols = np.nonzero(valid)
            pts = origins[start:stop][rows] + dirs[start:stop][rows] * t_mid[rows, cols][:, None]
            scalars.append(field.sample_many(pts))
            deltas.append(dd[valid])
        self.scalars = np.concatenate(scalars) if scalars else np.empty(0)
        self.deltas = np.concatenate(deltas) if deltas else np.empty(0)
        self.ray_of_sample = np.repeat(np.arange(self.n_hit), counts)

    def transmittance(self, realized: TFRealized) -> np.ndarray:
        """Final transmittance of every hitting ray under `realized`."""
        sigma, _ = transfer.evaluate(realized, self.scalars)
        csum = np.concatenate([[0.0], np.cumsum(sigma * self.deltas)])
        optical = csum[self.offsets[1:]] - csum[self.offsets[:-1]]
        return np.exp(-optical)

    def mean_transmittance(self, realized: TFRealized) -> float:
        return float(self.transmittance(realized).mean())

    def mean_transmittance_grad(self, params: TFParams) -> tuple[float, np.ndarray]:
        """Mean transmittance plus its gradient against raw densities."""
        realized = transfer.realize(params, self.field.value_min, self.field.value_max)
        t_ray = self.transmittance(realized)
        seg, u = transfer.locate(realized, self.scalars)
        m = params.control_points
        factor = -t_ray[self.ray_of_sample] * self.deltas / self.n_hit
        g_den = (np.bincount(seg, factor * (1.0 - u), minlength=m)
                 + np.bincount(seg + 1, factor * u, minlength=m))
        return float(t_ray.mean()), g_den * transfer.density_jacobian_diag(params)
