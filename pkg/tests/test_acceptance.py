"""Acceptance suite: one test per shipped guarantee.

Each test prints a `[ACCEPTANCE] name: PASS/FAIL` line via the hook in
conftest.py. These are the checks a release must clear; they favor
end-to-end paths (CLI, wire protocol) over unit seams and are slower than
the rest of the suite. Run them alone with

    pytest tests/test_acceptance.py -v
"""

import json
import math
import os
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest

from tfopt import optimizer, transfer
from tfopt.augment import reference_pose, sample_background, sample_pose
from tfopt.camera import CameraPose
from tfopt.cli import main, render_still
from tfopt.initialize import init_params
from tfopt.objective import (ObjectiveConfig, beta_prior_loss, contrastive_loss,
                             tf_reg_loss)
from tfopt.optimizer import SamplingSettings, make_state, read_log, write_log
from tfopt.render import RenderConfig, render, render_adjoint
from tfopt.scorer import ReferenceScorer, ScoreResult
from tfopt.synthetic import potted_plant_field, two_shell_field, two_shell_reference_tf
from tfopt.transfer import TFParams
from tfopt.volume import ScalarField, save_raw

sys.path.insert(0, os.path.dirname(__file__))
from _mockservice import MockScorerService  # noqa: E402


# ---------------------------------------------------------------------------
# gradient correctness


def test_full_gradient_vs_finite_differences():
    """Analytic dL/dphi matches central differences on the whole objective:
    image MSE plus the transmittance prior plus both TF regularizers, with
    positions, densities, and colors all free."""
    started = time.monotonic()
    rng = np.random.default_rng(1234)
    field = ScalarField(values=rng.uniform(0.0, 1.0, (8, 8, 8)),
                        spacing=(1.0, 1.0, 1.0))
    cfg = RenderConfig(height=4, width=4)
    pose = CameraPose(yaw=0.7, pitch=-0.08, distance=13.0)
    # moderate densities keep every ray's transmittance far from the
    # prior's clamp, so the probe exercises live prior gradients
    param_rng = np.random.default_rng(99)
    params = TFParams(
        raw_spacings=param_rng.normal(0, 0.5, 3),
        raw_density=param_rng.normal(-3.2, 0.2, 4),
        raw_color=param_rng.normal(0, 0.8, (4, 3)),
    )
    bg = rng.uniform(0, 1, (4, 4, 3))
    target = rng.uniform(0, 1, (4, 4, 3))
    obj = ObjectiveConfig()

    def objective(p):
        out = render(field, p, pose, cfg, bg)
        mse = float(np.mean((out.image - target) ** 2))
        l_prior, dprior_dt = beta_prior_loss(out.transmittance,
                                             obj.beta_shape, obj.eps_t)
        l_reg, g_reg = tf_reg_loss(p, obj.lambda_density, obj.lambda_color)
        loss = mse + obj.w_density * l_prior + l_reg
        dl_dimage = 2.0 * (out.image - target) / out.image.size
        grad = render_adjoint(field, p, out.cache, bg, dl_dimage,
                              obj.w_density * dprior_dt) + g_reg
        return loss, grad, out.transmittance[out.rays.hit.reshape(4, 4)]

    _, grad, t_hit = objective(params)
    # the prior's clamp is a kink; this probe must sit well inside it for
    # finite differences to be meaningful
    assert t_hit.min() > obj.eps_t + 1e-3
    assert t_hit.max() < 1.0 - obj.eps_t - 1e-3

    h = 1e-5
    flat = params.pack()
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        lu = objective(TFParams.unpack(up, 4))[0]
        ld = objective(TFParams.unpack(dn, 4))[0]
        fd = (lu - ld) / (2 * h)
        if abs(grad[i]) < 1e-8:
            assert fd == pytest.approx(grad[i], abs=1e-8), f"param {i}"
        else:
            assert fd == pytest.approx(grad[i], rel=1e-4), f"param {i}"
    assert time.monotonic() - started < 60.0


# ---------------------------------------------------------------------------
# closed-form compositing


def test_constant_density_closed_form():
    """A spatially constant TF reduces the compositing sums to textbook
    exponentials: T = exp(-sigma L) and accumulated color (1 - T) c."""
    rng = np.random.default_rng(7)
    field = ScalarField(values=rng.uniform(0.0, 1.0, (8, 8, 8)),
                        spacing=(1.0, 1.0, 1.0))
    raw_d = -0.4
    raw_c = np.array([0.1, -0.3, 0.5])
    params = TFParams(raw_spacings=np.zeros(1),
                      raw_density=np.full(2, raw_d),
                      raw_color=np.tile(raw_c, (2, 1)))
    sigma = float(transfer.map_density(raw_d))
    c_bar = transfer.map_color(raw_c)

    cfg = RenderConfig(height=8, width=8)
    pose = CameraPose(yaw=0.3, pitch=0.05, distance=14.0)
    bg = rng.uniform(0, 1, (8, 8, 3))
    out = render(field, params, pose, cfg, bg, keep_cache=False)

    hit = out.rays.hit
    lengths = (out.rays.t_exit - out.rays.t_entry)[hit]
    assert hit.any()
    t_expect = np.exp(-sigma * lengths)
    t_got = out.transmittance.reshape(-1)[hit]
    assert np.max(np.abs(t_got - t_expect) / t_expect) < 1e-10

    c_expect = (1.0 - t_expect)[:, None] * c_bar[None, :]
    c_got = out.color.reshape(-1, 3)[hit]
    assert np.max(np.abs(c_got - c_expect) / np.abs(c_expect)) < 1e-10

    # and the composite output honors image = color + T * background
    np.testing.assert_allclose(
        out.image, out.color + out.transmittance[..., None] * bg, rtol=1e-12)


# ---------------------------------------------------------------------------
# initialization budget


@pytest.mark.slow
def test_initialization_transmittance_budget():
    """On a full-scale (256^3) synthetic volume, initialization lands the
    mean transmittance from the straight-on view inside [0.04, 0.06] when
    asked for 0.05."""
    field = potted_plant_field(256)
    result = init_params(field, 32, np.random.default_rng(0), rho=0.05)
    assert 0.04 <= result.mean_transmittance <= 0.06


# ---------------------------------------------------------------------------
# transfer function recovery through the CLI


@pytest.fixture(scope="module")
def recovery_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("recovery")
    field = two_shell_field(32)
    vol = root / "shells_32x32x32_float32.raw"
    save_raw(field, vol)
    rcfg = RenderConfig()
    gt = two_shell_reference_tf()
    r = field.bounding_radius
    held_pose = CameraPose(yaw=0.7, pitch=0.1, distance=3.0 * r)
    ref_train = render_still(field, gt, reference_pose(r), rcfg)
    ref_held = render_still(field, gt, held_pose, rcfg)
    ref_path = root / "reference.npy"
    np.save(ref_path, ref_train)
    return SimpleNamespace(root=root, field=field, vol=str(vol), rcfg=rcfg,
                           ref_path=str(ref_path), ref_train=ref_train,
                           ref_held=ref_held, held_pose=held_pose)


def _run_recovery(env, run_name, scorer_section, positive=""):
    """One full 300-step optimization through cmd_optimize; returns the
    held-out MSE of the exported TF and the wall-clock time."""
    cfg = {
        "volume": {"path": env.vol},
        "scorer": scorer_section,
        "prompt": {"positive": positive},
        "sampling": {"fixed_pose": True, "fixed_gray": 0.5},
        "output": {"dir": str(env.root / "runs"), "run_name": run_name},
    }
    cfg_path = env.root / f"{run_name}.json"
    cfg_path.write_text(json.dumps(cfg))
    started = time.monotonic()
    code = main(["optimize", "--config", str(cfg_path)])
    elapsed = time.monotonic() - started
    assert code == 0
    final = transfer.import_tf(env.root / "runs" / run_name / "final.tf")
    image = render_still(env.field, final, env.held_pose, env.rcfg)
    mse = float(np.mean((image - env.ref_held) ** 2))
    return mse, elapsed


@pytest.fixture(scope="module")
def recovery_inproc(recovery_env):
    return _run_recovery(recovery_env, "inproc",
                         {"reference_image": recovery_env.ref_path})


@pytest.mark.slow
def test_tf_recovery_from_reference_image(recovery_inproc):
    """Optimizing against a single rendered reference recovers a TF whose
    held-out view (different yaw and pitch) matches to MSE < 1e-3, within
    ten minutes."""
    mse, elapsed = recovery_inproc
    assert mse < 1e-3
    assert elapsed < 600.0


@pytest.mark.slow
def test_remote_scorer_matches_in_process(recovery_env, recovery_inproc):
    """The same recovery driven through the wire protocol (mock service
    hosting the identical scoring rule) reaches the same final MSE to
    within 1e-6, so the protocol round-trip is loss-neutral."""
    mse_inproc, _ = recovery_inproc
    service = MockScorerService(recovery_env.ref_train)
    try:
        mse_remote, _ = _run_recovery(recovery_env, "remote",
                                      {"endpoint": service.endpoint},
                                      positive="a glass chess set")
    finally:
        service.close()
    assert abs(mse_remote - mse_inproc) < 1e-6


# ---------------------------------------------------------------------------
# loss-term unit values


def test_loss_term_unit_values():
    """Hand-checkable objective values: uniform-logit contrastive loss and
    the two TF regularizers at easy-to-verify parameter settings."""
    loss, _, _ = contrastive_loss(0.0, np.zeros(128))
    assert abs(loss - math.log(129.0)) < 1e-6
    assert abs(loss - 4.859812404361672) < 1e-6

    params = TFParams(
        raw_spacings=transfer.uniform_spacing_raws(2),
        raw_density=transfer.unmap_density(np.array([100.0, 55.0])),
        raw_color=np.full((2, 3), -30.0),  # maps to ~0, so 0.5 from mid-gray
    )
    both, _ = tf_reg_loss(params, lambda_density=2e-5, lambda_color=8e-4)
    l1_only, _ = tf_reg_loss(params, lambda_density=2e-5, lambda_color=0.0)
    l2_only, _ = tf_reg_loss(params, lambda_density=0.0, lambda_color=8e-4)
    assert abs(l1_only - 3.1e-3) < 1e-12   # 2e-5 * (100 + 55)
    assert abs(l2_only - 1.2e-3) < 1e-12   # 8e-4 * 6 * 0.5^2
    assert abs(both - 4.3e-3) < 1e-12


# ---------------------------------------------------------------------------
# schedule conformance


class _RecordingScorer:
    """Zero-gradient scorer that keeps every image it is shown."""

    def __init__(self):
        self.images = []

    def score(self, image, prompts=None, request_id=0):
        self.images.append(image.copy())
        return ScoreResult(loss=0.0, dloss_dimage=np.zeros_like(image))


def test_schedule_conformance(tmp_path):
    """Over a 120-step run the log shows the density prior inactive until
    step 100, and the rendered views show flat gray backdrops for steps
    1-25 and patterned ones after."""
    rng = np.random.default_rng(6)
    field = ScalarField(values=rng.uniform(0.0, 1.0, (8, 8, 8)),
                        spacing=(1.0, 1.0, 1.0))
    # a fully transparent TF passes the backdrop through untouched, so the
    # recorded images classify the background family directly
    params = TFParams(
        raw_spacings=transfer.uniform_spacing_raws(4),
        raw_density=np.full(4, -30.0),
        raw_color=np.zeros((4, 3)),
    )
    render_cfg = RenderConfig(height=33, width=33)
    scorer = _RecordingScorer()
    state = make_state(params, total_steps=120, views_per_step=1)
    sampling = SamplingSettings(seed=3)
    obj_cfg = ObjectiveConfig()
    reports = []
    for _ in range(120):
        reports.append(optimizer.step(state, field, scorer, "", (), sampling,
                                      obj_cfg, render_cfg))

    log_path = tmp_path / "train_log.csv"
    write_log(reports, log_path, views_per_step=1)
    rows = read_log(log_path)
    assert len(rows) == 120
    for row in rows:
        step_idx = int(row["step"])
        l_density = float(row["l_density"])
        if step_idx < 100:
            assert l_density == 0.0, f"step {step_idx}"
        else:
            # the unnormalized prior is negative at saturated transmittance;
            # active means contributing, not positive
            assert l_density != 0.0, f"step {step_idx}"

    for step_idx, image in enumerate(scorer.images, start=1):
        n_unique = len(np.unique(image))
        if step_idx <= 25:
            assert n_unique == 1, f"step {step_idx} backdrop not flat gray"
        else:
            assert n_unique > 1, f"step {step_idx} backdrop not augmented"


# ---------------------------------------------------------------------------
# determinism


def test_bit_identical_reruns(tmp_path):
    """Two runs from one seed, with pose and background randomization live,
    write byte-identical TF files and logs."""
    field = two_shell_field(16)
    vol = tmp_path / "shells_16x16x16_float32.raw"
    save_raw(field, vol)
    rcfg = RenderConfig(height=32, width=32)
    reference = render_still(field, two_shell_reference_tf(),
                             reference_pose(field.bounding_radius), rcfg)
    ref_path = tmp_path / "reference.npy"
    np.save(ref_path, reference)

    def run_once(name):
        cfg = {
            "volume": {"path": str(vol)},
            "scorer": {"reference_image": str(ref_path)},
            "render": {"width": 32, "height": 32},
            "tf": {"control_points": 8},
            "optimizer": {"steps": 30, "views_per_step": 2},
            "objective": {"gray_steps": 5, "prior_start": 10},
            "sampling": {"seed": 11},
            "output": {"dir": str(tmp_path / "runs"), "run_name": name},
        }
        cfg_path = tmp_path / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["optimize", "--config", str(cfg_path)]) == 0
        run_dir = tmp_path / "runs" / name
        return ((run_dir / "final.tf").read_bytes(),
                (run_dir / "train_log.csv").read_bytes())

    tf_a, log_a = run_once("det-a")
    tf_b, log_b = run_once("det-b")
    assert tf_a == tf_b
    assert log_a == log_b


# ---------------------------------------------------------------------------
# sampling ranges and frequencies


def test_sampling_ranges_and_frequencies():
    """10^4 pose draws stay inside the documented pitch and distance
    ranges; 10^4 augmented backdrops split evenly across the three pattern
    families (each count within 3 sigma of n/3)."""
    rng = np.random.default_rng(2026)
    radius = 10.0
    n = 10_000
    for _ in range(n):
        pose = sample_pose(rng, radius)
        assert -np.pi / 14 <= pose.pitch <= np.pi / 14
        assert 2 * radius <= pose.distance <= 4 * radius

    counts = {"checker": 0, "noise": 0, "fourier": 0}
    for _ in range(n):
        image = sample_background(rng, 9, 9)
        if len(np.unique(image.reshape(-1, 3), axis=0)) <= 2:
            counts["checker"] += 1
        elif image.min() == 0.0 and image.max() == 1.0:
            counts["fourier"] += 1
        else:
            counts["noise"] += 1
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    for family, count in counts.items():
        assert abs(count - n / 3) <= 3 * sigma, f"{family}: {count}"


# ---------------------------------------------------------------------------
# manual gate


@pytest.mark.skip(reason="manual qualitative gate: needs the live scorer "
                         "service and a CT-scale volume; run the procedure "
                         "in README section 'Qualitative check' and record "
                         "the outcome alongside the release notes")
def test_semantic_prompt_run_manual_gate():
    """Manual: against the live model service, a 300-step prompt-driven run
    on a CT-like volume completes with no skipped steps and the final
    density TF shows at least one pronounced peak (inspect-tf reports it).
    This depends on model weights and human judgment, so it stays out of
    the automated suite."""
    raise AssertionError("manual gate, never run automatically")
