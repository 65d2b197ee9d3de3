import numpy as np
import pytest

from tfopt import transfer
from tfopt.camera import CameraPose, generate_rays
from tfopt.render import (RenderConfig, TransmittanceProbe, _step_layout,
                          composite_steps, render)
from tfopt.transfer import TFParams, TFRealized


def constant_tf(sigma, color):
    return TFRealized(positions=np.array([0.0, 1.0]),
                      density=np.array([sigma, sigma], dtype=np.float64),
                      color=np.array([color, color], dtype=np.float64))


def random_tf(rng, m=4):
    return TFParams(
        raw_spacings=rng.normal(0, 0.5, m - 1),
        raw_density=rng.normal(-1.0, 1.0, m),
        raw_color=rng.normal(0, 1, (m, 3)),
    )


POSE = CameraPose(yaw=0.4, pitch=0.1, distance=14.0)
SMALL = RenderConfig(width=6, height=5)


class TestCompositeSteps:
    def test_two_step_hand_expansion(self):
        s1, s2, d = 0.7, 1.3, 0.25
        c1 = np.array([1.0, 0.5, 0.0])
        c2 = np.array([0.0, 0.5, 1.0])
        rgb, t = composite_steps([s1, s2], [c1, c2], [d, d])
        a1, a2 = np.exp(-s1 * d), np.exp(-s2 * d)
        assert t == pytest.approx(np.exp(-(s1 + s2) * d), rel=1e-15)
        expect = (1 - a1) * c1 + a1 * (1 - a2) * c2
        np.testing.assert_allclose(rgb, expect, rtol=1e-15)

    def test_empty_ray(self):
        rgb, t = composite_steps([], np.zeros((0, 3)), [])
        assert t == 1.0
        np.testing.assert_array_equal(rgb, 0.0)

    def test_transmittance_non_increasing(self, rng):
        sigmas = rng.uniform(0.0, 3.0, 12)
        colors = rng.uniform(0.0, 1.0, (12, 3))
        deltas = rng.uniform(0.05, 0.4, 12)
        ts = [composite_steps(sigmas[:k], colors[:k], deltas[:k])[1] for k in range(1, 13)]
        assert all(0.0 < t <= 1.0 for t in ts)
        assert all(b <= a + 1e-15 for a, b in zip(ts, ts[1:]))

    def test_opaque_first_step_hides_rest(self):
        rgb, t = composite_steps([1e9, 5.0], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [1.0, 1.0])
        np.testing.assert_allclose(rgb, [1.0, 0.0, 0.0], atol=1e-12)
        assert t < 1e-12


class TestRenderForward:
    def test_zero_density_gives_background_exactly(self, small_field, rng):
        bg = rng.uniform(0, 1, (SMALL.height, SMALL.width, 3))
        out = render(small_field, constant_tf(0.0, [0.9, 0.1, 0.4]), POSE, SMALL, bg)
        np.testing.assert_array_equal(out.image, bg)
        np.testing.assert_array_equal(out.color, 0.0)
        np.testing.assert_array_equal(out.transmittance, 1.0)

    def test_constant_properties_telescope(self, ramp_field):
        # a TF with equal densities everywhere makes every sample identical,
        # so each ray's result has the closed form exp(-sigma * length)
        sigma, c = 0.8, np.array([0.2, 0.9, 0.5])
        bg = np.zeros((SMALL.height, SMALL.width, 3))
        out = render(ramp_field, constant_tf(sigma, c), POSE, SMALL, bg)
        rays = out.rays
        length = (rays.t_exit - rays.t_entry).reshape(SMALL.height, SMALL.width)
        expect_t = np.exp(-sigma * length)
        np.testing.assert_allclose(out.transmittance, expect_t, rtol=1e-10)
        expect_c = (1.0 - expect_t)[..., None] * c
        np.testing.assert_allclose(out.color, expect_c, rtol=1e-10)

    def test_composite_identity(self, small_field, rng):
        bg = rng.uniform(0, 1, (SMALL.height, SMALL.width, 3))
        out = render(small_field, random_tf(rng), POSE, SMALL, bg)
        np.testing.assert_allclose(
            out.image, out.color + out.transmittance[..., None] * bg, atol=1e-15)

    def test_missing_rays_show_background(self, small_field):
        far = CameraPose(yaw=0.0, pitch=0.0, distance=60.0)
        cfg = RenderConfig(width=9, height=9)
        bg = np.full((9, 9, 3), 0.25)
        out = render(small_field, constant_tf(5.0, [1.0, 0.0, 0.0]), far, cfg, bg)
        miss = ~out.rays.hit.reshape(9, 9)
        assert miss.any()
        np.testing.assert_array_equal(out.transmittance[miss], 1.0)
        np.testing.assert_array_equal(out.color[miss], 0.0)
        np.testing.assert_array_equal(out.image[miss], 0.25)

    def test_transmittance_in_unit_interval(self, small_field, rng):
        bg = np.zeros((SMALL.height, SMALL.width, 3))
        out = render(small_field, random_tf(rng), POSE, SMALL, bg)
        assert out.transmittance.min() > 0.0
        assert out.transmittance.max() <= 1.0

    def test_step_size_invariance_for_constant_tf(self, ramp_field):
        # with spatially constant extinction the optical depth only depends
        # on the marched length, which both step sizes cover exactly
        bg = np.zeros((SMALL.height, SMALL.width, 3))
        tf = constant_tf(1.1, [0.5, 0.5, 0.5])
        coarse = render(ramp_field, tf, POSE, RenderConfig(width=6, height=5, step_size=0.5), bg)
        fine = render(ramp_field, tf, POSE, RenderConfig(width=6, height=5, step_size=0.25), bg)
        np.testing.assert_allclose(coarse.transmittance, fine.transmittance, rtol=1e-12)

    def test_deterministic(self, small_field, rng):
        bg = rng.uniform(0, 1, (SMALL.height, SMALL.width, 3))
        tf = random_tf(rng)
        a = render(small_field, tf, POSE, SMALL, bg)
        b = render(small_field, tf, POSE, SMALL, bg)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.transmittance, b.transmittance)

    def test_matches_one_ray_reference(self, small_field, rng):
        # the vectorized march must agree with the single-ray reference
        tf = random_tf(rng)
        realized = transfer.realize(tf, small_field.value_min, small_field.value_max)
        bg = np.zeros((SMALL.height, SMALL.width, 3))
        cfg = RenderConfig(width=6, height=5, ray_chunk=7)  # odd chunk on purpose
        out = render(small_field, realized, POSE, cfg, bg)
        rays = out.rays
        delta = cfg.resolve_step(small_field)
        for k in (0, 7, 13, 29):
            n_full, rem = _step_layout(rays.t_entry[k:k + 1], rays.t_exit[k:k + 1],
                                       delta, cfg.max_steps)
            ts = rays.t_entry[k] + (np.arange(n_full[0]) + 0.5) * delta
            deltas = np.full(n_full[0], delta)
            if rem[0] > 0:
                ts = np.append(ts, rays.t_entry[k] + n_full[0] * delta + 0.5 * rem[0])
                deltas = np.append(deltas, rem[0])
            pts = rays.origins[k] + ts[:, None] * rays.dirs[k]
            sig, rgb = transfer.evaluate(realized, small_field.sample_many(pts))
            ref_rgb, ref_t = composite_steps(sig, rgb, deltas)
            np.testing.assert_allclose(out.color.reshape(-1, 3)[k], ref_rgb, atol=1e-12)
            assert out.transmittance.ravel()[k] == pytest.approx(ref_t, abs=1e-14)

    def test_chunking_does_not_change_result(self, small_field, rng):
        tf = random_tf(rng)
        bg = rng.uniform(0, 1, (SMALL.height, SMALL.width, 3))
        whole = render(small_field, tf, POSE, RenderConfig(width=6, height=5), bg)
        chunked = render(small_field, tf, POSE, RenderConfig(width=6, height=5, ray_chunk=5), bg)
        np.testing.assert_array_equal(whole.image, chunked.image)

    def test_bad_background_shape(self, small_field):
        with pytest.raises(ValueError):
            render(small_field, constant_tf(1.0, [1, 1, 1]), POSE, SMALL, np.zeros((2, 2, 3)))


class TestRenderConfig:
    def test_default_step_is_half_min_spacing(self):
        from tfopt.volume import ScalarField
        field = ScalarField(np.arange(8.0).reshape(2, 2, 2), spacing=(1.0, 2.0, 0.5))
        assert RenderConfig().resolve_step(field) == 0.25

    def test_explicit_step_wins(self, small_field):
        assert RenderConfig(step_size=0.125).resolve_step(small_field) == 0.125

    def test_nonpositive_step_rejected(self, small_field):
        with pytest.raises(ValueError):
            RenderConfig(step_size=0.0).resolve_step(small_field)


class TestTransmittanceProbe:
    def test_matches_full_render(self, small_field, rng):
        tf = random_tf(rng)
        realized = transfer.realize(tf, small_field.value_min, small_field.value_max)
        probe = TransmittanceProbe(small_field, POSE, SMALL)
        bg = np.zeros((SMALL.height, SMALL.width, 3))
        out = render(small_field, realized, POSE, SMALL, bg)
        hit = out.rays.hit
        np.testing.assert_allclose(probe.transmittance(realized),
                                   out.transmittance.ravel()[hit], rtol=1e-12)

    def test_density_gradient_vs_finite_differences(self, small_field, rng):
        params = random_tf(rng)
        probe = TransmittanceProbe(small_field, POSE, SMALL)
        mean_t, grad = probe.mean_transmittance_grad(params)
        h = 1e-6
        for k in range(params.control_points):
            up = TFParams(params.raw_spacings, params.raw_density.copy(), params.raw_color)
            dn = TFParams(params.raw_spacings, params.raw_density.copy(), params.raw_color)
            up.raw_density[k] += h
            dn.raw_density[k] -= h
            fd = (probe.mean_transmittance(
                      transfer.realize(up, small_field.value_min, small_field.value_max))
                  - probe.mean_transmittance(
                      transfer.realize(dn, small_field.value_min, small_field.value_max))) / (2 * h)
            assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-10)

    def test_mean_over_hitting_rays_only(self, small_field):
        far = CameraPose(yaw=0.0, pitch=0.0, distance=60.0)
        cfg = RenderConfig(width=9, height=9)
        probe = TransmittanceProbe(small_field, far, cfg)
        rays = generate_rays(far, 9, 9, cfg.fov_y, (0, 0, 0), small_field.box_size)
        assert probe.n_hit == int(rays.hit.sum())
        assert probe.n_hit < 81
        # an opaque TF then drives the probe mean to zero, which a mean over
        # all rays (misses pinned at 1) could never reach
        t = probe.transmittance(constant_tf(1e6, [1, 1, 1]))
        assert t.max() < 1e-12
