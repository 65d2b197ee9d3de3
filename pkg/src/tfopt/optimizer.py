"""SGD with momentum over TF parameters, orchestrating the sample/render/
score loop.

Each step draws poses and backgrounds for a few views, renders, pulls the
image-score gradient back through the renderer, adds the transmittance
prior when the schedule enables it, averages over views, and applies a
heavy-ball update with linearly annealed learning rate. Scorer failures
and non-finite gradients skip the update but still log a row, so a run
always emits exactly one row per step.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import augment, objective, transfer
from .augment import TAG_BACKGROUND, TAG_NEGATIVES, TAG_POSE, child_rng
from .camera import CameraPose
from .errors import ScorerError
from .initialize import InitResult, init_params
from .objective import ObjectiveConfig
from .render import RenderConfig, render, render_adjoint
from .scorer import PromptSet, sample_negatives
from .transfer import TFParams
from .volume import ScalarField

TAG_INIT = 3


@dataclass(frozen=True)
class SamplingSettings:
    """Randomization knobs for the optimization loop.

    fixed_pose locks every view to the straight-on reference pose and
    fixed_gray locks the background to one shade; both exist for
    inverse-rendering runs against a single reference image, where pose
    and backdrop must match the target. negatives_per_view resamples the
    negative prompts for each view instead of sharing one draw per step.
    """

    seed: int = 0
    fixed_pose: bool = False
    fixed_gray: float | None = None
    pool_path: str | None = None
    k_negatives: int = 128
    negatives_per_view: bool = False


@dataclass
class OptimizerState:
    step: int                 # next 1-based step index
    params: TFParams
    momentum: np.ndarray      # flat, matches params.pack()
    lr0: float = 10.0
    mu: float = 0.75
    total_steps: int = 300
    views_per_step: int = 3

    def lr_at(self, i: int) -> float:
        return self.lr0 * (1.0 - (i - 1) / self.total_steps)


def make_state(params: TFParams, lr0: float = 10.0, mu: float = 0.75,
               total_steps: int = 300, views_per_step: int = 3) -> OptimizerState:
    return OptimizerState(step=1, params=params, momentum=np.zeros(params.n_params),
                          lr0=lr0, mu=mu, total_steps=total_steps,
                          views_per_step=views_per_step)


def momentum_update(phi: np.ndarray, m: np.ndarray, grad: np.ndarray,
                    lr: float, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """Heavy ball: m' = mu*m + grad, phi' = phi - lr*m'.

    Returns (new phi, new m); inputs stay untouched.
    """
    m_new = mu * m + grad
    return phi - lr * m_new, m_new


@dataclass
class StepReport:
    step: int
    lr: float
    l_clip: float
    l_density: float
    l_reg: float
    mean_t: float
    skipped: bool
    poses: tuple[CameraPose, ...]
    note: str = ""


def _negatives_for(sampling: SamplingSettings, step_idx: int, view: int) -> tuple[str, ...]:
    if sampling.pool_path is None:
        return ()
    stream_view = view if sampling.negatives_per_view else 0
    rng = child_rng(sampling.seed, step_idx, stream_view, TAG_NEGATIVES)
    return tuple(sample_negatives(sampling.pool_path, sampling.k_negatives, rng))


def step(state: OptimizerState, field: ScalarField, scorer, positive: str,
         user_negatives: tuple[str, ...], sampling: SamplingSettings,
         obj_cfg: ObjectiveConfig, render_cfg: RenderConfig) -> StepReport:
    """Run one optimization step in place; returns its report row."""
    i = state.step
    phase = objective.schedule_phase(i, obj_cfg.gray_steps, obj_cfg.prior_start)
    radius = field.bounding_radius
    lr = state.lr_at(i)
    n_views = state.views_per_step

    poses = []
    for v in range(n_views):
        if sampling.fixed_pose:
            poses.append(augment.reference_pose(radius))
        else:
            poses.append(augment.sample_pose(child_rng(sampling.seed, i, v, TAG_POSE), radius))

    grads = []
    l_clip_sum = 0.0
    l_density_sum = 0.0
    mean_t_sum = 0.0
    note = ""
    shared_negs = None
    try:
        for v, pose in enumerate(poses):
            if sampling.fixed_gray is not None:
                bg = augment.gray_background(render_cfg.height, render_cfg.width,
                                             sampling.fixed_gray)
            else:
                bg_rng = child_rng(sampling.seed, i, v, TAG_BACKGROUND)
                bg = augment.sample_background(bg_rng, render_cfg.height, render_cfg.width,
                                               gray_only=phase.gray_background)
            prompts = None
            if positive:
                if sampling.negatives_per_view or shared_negs is None:
                    shared_negs = _negatives_for(sampling, i, v)
                prompts = PromptSet(positive=positive, user_negatives=user_negatives,
                                    pool_negatives=shared_negs)

            out = render(field, state.params, pose, render_cfg, bg)
            result = scorer.score(out.image, prompts,
                                  request_id=(i - 1) * n_views + v + 1)
            l_clip_sum += result.loss

            dl_dt = None
            if phase.prior_on and obj_cfg.w_density != 0.0:
                l_den, dprior_dt = objective.beta_prior_loss(
                    out.transmittance, obj_cfg.beta_shape, obj_cfg.eps_t)
                l_density_sum += obj_cfg.w_density * l_den
                dl_dt = obj_cfg.w_density * dprior_dt

            grads.append(render_adjoint(field, state.params, out.cache, bg,
                                        result.dloss_dimage, dl_dt))
            hit = out.rays.hit
            mean_t_sum += float(out.transmittance.reshape(-1)[hit].mean()) if hit.any() else 1.0
    except ScorerError as exc:
        note = f"scorer failure: {exc}"
        state.step = i + 1
        return StepReport(step=i, lr=lr, l_clip=float("nan"), l_density=float("nan"),
                          l_reg=float("nan"), mean_t=float("nan"), skipped=True,
                          poses=tuple(poses), note=note)

    l_reg, g_reg = objective.tf_reg_loss(state.params, obj_cfg.lambda_density,
                                         obj_cfg.lambda_color)
    grad = np.mean(grads, axis=0) + g_reg

    report = StepReport(step=i, lr=lr, l_clip=l_clip_sum / n_views,
                        l_density=l_density_sum / n_views, l_reg=l_reg,
                        mean_t=mean_t_sum / n_views, skipped=False, poses=tuple(poses))
    if not np.all(np.isfinite(grad)):
        report.skipped = True
        report.note = "non-finite gradient"
    else:
        phi, state.momentum = momentum_update(state.params.pack(), state.momentum,
                                              grad, lr, state.mu)
        state.params = TFParams.unpack(phi, state.params.control_points)
    state.step = i + 1
    return report


@dataclass
class RunResult:
    params: TFParams
    realized: transfer.TFRealized
    reports: list[StepReport]
    init: InitResult


def run(field: ScalarField, scorer, positive: str, *,
        user_negatives: tuple[str, ...] = (),
        sampling: SamplingSettings = SamplingSettings(),
        obj_cfg: ObjectiveConfig = ObjectiveConfig(),
        render_cfg: RenderConfig = RenderConfig(),
        control_points: int = 32, rho: float = 0.05,
        lr0: float = 10.0, mu: float = 0.75, total_steps: int = 300,
        views_per_step: int = 3,
        snapshot_every: int = 0, snapshot_fn=None,
        progress_fn=None) -> RunResult:
    """Initialize and run the full optimization.

    snapshot_fn(step, params) is invoked every snapshot_every steps when
    both are set; progress_fn(report) after every step.
    """
    init_rng = child_rng(sampling.seed, 0, 0, TAG_INIT)
    init = init_params(field, control_points, init_rng, rho, render_config=render_cfg)
    state = make_state(init.params, lr0=lr0, mu=mu, total_steps=total_steps,
                       views_per_step=views_per_step)

    reports = []
    skipped = 0
    for _ in range(total_steps):
        report = step(state, field, scorer, positive, user_negatives,
                      sampling, obj_cfg, render_cfg)
        reports.append(report)
        skipped += report.skipped
        if progress_fn is not None:
            progress_fn(report)
        if snapshot_every and snapshot_fn is not None and report.step % snapshot_every == 0:
            snapshot_fn(report.step, state.params)
    if skipped:
        warnings.warn(f"{skipped} of {total_steps} steps were skipped")

    realized = transfer.realize(state.params, field.value_min, field.value_max)
    return RunResult(params=state.params, realized=realized, reports=reports, init=init)


def write_log(reports: list[StepReport], path, views_per_step: int | None = None) -> None:
    """Write step reports as CSV: one row per step, poses flattened."""
    if views_per_step is None:
        views_per_step = max((len(r.poses) for r in reports), default=0)
    header = ["step", "lr", "l_clip", "l_density", "l_reg", "mean_T_N", "skipped"]
    for v in range(views_per_step):
        header += [f"pose{v}_yaw", f"pose{v}_pitch", f"pose{v}_distance"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in reports:
            row = [r.step, repr(float(r.lr)), repr(float(r.l_clip)), repr(float(r.l_density)),
                   repr(float(r.l_reg)), repr(float(r.mean_t)), int(r.skipped)]
            for p in r.poses:
                row += [repr(float(p.yaw)), repr(float(p.pitch)), repr(float(p.distance))]
            writer.writerow(row)


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]
