import numpy as np
import pytest

from latentflight.backends import mock_suite
from latentflight.errors import TrajectoryError
from latentflight.geometry import CameraPose
from latentflight.pipeline import PipelineConfig, init_session, run_trajectory, step
from latentflight.trajectory import TrajectoryEntry


def _image(seed=0, size=16):
    return np.random.default_rng(seed).uniform(0.05, 0.95, size=(size, size, 3))


def _forward(dist=0.2):
    return CameraPose(np.eye(3), np.array([0.0, 0.0, -dist]))


def _config(**kw):
    defaults = dict(latent_shape=(4, 16, 16), seed=11)
    defaults.update(kw)
    return PipelineConfig(**defaults)


DEGENERATE = dict(sigma=float("inf"), guidance_lambda=0.0, injection_sites=(),
                  ddpm_forward=False)


class TestInitSession:
    def test_image_input_kept_bit_for_bit(self):
        img = _image(1)
        session = init_session(img, _config(), mock_suite(seed=1))
        np.testing.assert_array_equal(session.current_image, img)
        assert session.frame_index == 0

    def test_prompt_determinism(self):
        a = init_session("a pine forest", _config(), mock_suite(seed=2))
        b = init_session("a pine forest", _config(), mock_suite(seed=2))
        np.testing.assert_array_equal(a.current_image, b.current_image)

    def test_prompt_shapes(self):
        cfg = _config()
        session = init_session("hills", cfg, mock_suite(seed=3))
        assert session.current_image.shape == (16, 16, 3)  # factor-1 mock autoencoder
        assert session.current_depth.shape == (16, 16)

    def test_bad_image_rejected(self):
        with pytest.raises(ValueError):
            init_session(np.zeros((16, 16)), _config(), mock_suite())
        with pytest.raises(ValueError):
            init_session(np.full((16, 16, 3), 2.0), _config(), mock_suite())


class TestStep:
    def test_degenerate_identity_reconstructs(self):
        img = _image(4)
        session = init_session(img, _config(**DEGENERATE), mock_suite(seed=4))
        frame = step(session, CameraPose.identity())
        assert np.max(np.abs(frame.image - img)) <= 1e-3
        assert frame.hole_fraction == 0.0

    def test_full_mechanism_smoke_with_attention(self):
        # tiny latent so finite-difference guidance stays affordable
        cfg = _config(latent_shape=(4, 8, 8), guidance_lambda=5.0)
        session = init_session(_image(5, 8), cfg, mock_suite(seed=5, denoiser="tiny_attention"))
        frame = step(session, _forward(0.1))
        assert np.all(np.isfinite(frame.image))
        assert set(frame.timing) >= {"encode", "invert", "warp", "denoise", "decode", "depth"}

    def test_forward_motion_vacates_border(self):
        session = init_session(_image(6, 32), _config(latent_shape=(4, 32, 32)),
                               mock_suite(seed=6))
        frames = [step(session, _forward(0.4)) for _ in range(3)]
        assert np.mean([f.hole_fraction for f in frames]) > 0

        from latentflight.geometry import forward_warp, rescale_intrinsics, downsample_depth
        k = rescale_intrinsics(session.intrinsics, 32, 32)
        depth = downsample_depth(session.current_depth, 32, 32)
        _, wr = forward_warp(np.zeros((1, 32, 32)), depth, k, _forward(0.4))
        border = np.zeros((32, 32), dtype=bool)
        border[:8] = border[-8:] = border[:, :8] = border[:, -8:] = True
        assert wr.hole_mask[border].mean() > wr.hole_mask[~border].mean()

    def test_transactional_on_failure(self):
        class FlakyDepth:
            def __init__(self, inner):
                self.inner = inner
                self.calls = 0

            def __call__(self, image):
                self.calls += 1
                if self.calls >= 2:  # frame-0 estimate succeeds, step's fails
                    raise RuntimeError("depth model crashed")
                return self.inner(image)

        suite = mock_suite(seed=7)
        suite.depth_estimator = FlakyDepth(suite.depth_estimator)
        img = _image(7)
        session = init_session(img, _config(), suite)
        before_depth = session.current_depth.values.copy()
        with pytest.raises(Exception) as err:
            step(session, _forward())
        assert "depth" in str(err.value)
        assert session.frame_index == 0
        assert len(session.trajectory_log) == 0
        np.testing.assert_array_equal(session.current_image, img)
        np.testing.assert_array_equal(session.current_depth.values, before_depth)

    def test_prompt_shuttle_swaps_embedding(self):
        session = init_session("a stone village", _config(), mock_suite(seed=8))
        first = session.text_embedding
        step(session, _forward())
        assert session.trajectory_log[-1].embedding is first
        step(session, _forward(), new_prompt="a lego village")
        assert session.trajectory_log[-1].embedding is not first
        assert session.trajectory_log[-1].embedding.source_text == "a lego village"
        step(session, _forward())
        assert session.trajectory_log[-1].embedding.source_text == "a lego village"

    def test_per_step_overrides_do_not_stick(self):
        session = init_session(_image(9), _config(), mock_suite(seed=9))
        step(session, _forward(), overrides={"sigma": 5.0, "lambda": 0.0})
        assert session.config.sigma == 20.0
        assert session.trajectory_log[-1].entry.overrides == {"sigma": 5.0, "lambda": 0.0}
        with pytest.raises(ValueError):
            step(session, _forward(), overrides={"t2": 440})  # off the sampling grid

    def test_latent_norms_bounded_over_short_run(self):
        session = init_session(_image(10), _config(), mock_suite(seed=10))
        z0 = session.backends.autoencoder.encode(session.current_image)
        ref = np.linalg.norm(z0)
        for _ in range(4):
            frame = step(session, _forward(0.15))
            z = session.backends.autoencoder.encode(frame.image)
            assert np.all(np.isfinite(z))
            assert 0.01 * ref <= np.linalg.norm(z) <= 100 * ref

    def test_injection_floor_limits_capture_range(self):
        class CountingDenoiser:
            def __init__(self, inner):
                self.inner = inner
                self.taps = inner.taps
                self.gradient_mode = inner.gradient_mode
                self.injected_at = []

            def __call__(self, request):
                if request.injection is not None and request.injection.entries:
                    self.injected_at.append(request.timestep)
                return self.inner(request)

            def tap_vjp(self, *a):
                return self.inner.tap_vjp(*a)

        suite = mock_suite(seed=16, denoiser="tiny_attention")
        counter = CountingDenoiser(suite.denoiser)
        suite.denoiser = counter
        cfg = _config(latent_shape=(4, 8, 8), guidance_lambda=0.0, injection_floor=200)
        session = init_session(_image(16, 8), cfg, suite)
        step(session, _forward(0.1))
        assert counter.injected_at, "injection never applied"
        assert min(counter.injected_at) >= 200

    def test_high_band_conserved_through_zero_noise_jump(self):
        # the re-noised next-view latent, minus its noise contribution, keeps
        # the current latent's out-of-band spectrum up to the known jump scale
        from latentflight.geometry import CameraIntrinsics, DepthMap
        from latentflight.scheduler import ddpm_forward as jump, make_schedule
        from latentflight.spectral import warp_latent_highpass

        rng = np.random.default_rng(17)
        x_t1 = rng.standard_normal((4, 64, 64))
        depth = DepthMap(rng.uniform(2, 10, size=(64, 64)))
        k = CameraIntrinsics.from_fov(64, 64)
        pose = CameraPose.from_euler(4, 1, 0, translation=(0.05, 0, -0.2))
        sigma = 20.0
        warped, _ = warp_latent_highpass(x_t1, depth, k, pose, sigma)
        schedule = make_schedule("scaled_linear", 1000)
        x_t2 = jump(schedule, warped, 21, 441, np.zeros_like(warped))
        scale = np.sqrt(schedule.alpha_bar[441] / schedule.alpha_bar[21])

        def spectrum(a):
            return np.fft.fftshift(np.fft.fft2(a, axes=(1, 2)), axes=(1, 2))

        fy = np.arange(64) - 32
        outside = np.hypot(fy[:, None], fy[None, :]) > sigma
        diff = spectrum(x_t2) - scale * spectrum(x_t1)
        assert np.max(np.abs(diff[:, outside])) < 1e-6


class TestRunTrajectory:
    def test_singleton_equals_step(self):
        img = _image(11)
        sa = init_session(img, _config(), mock_suite(seed=12))
        sb = init_session(img, _config(), mock_suite(seed=12))
        frames = run_trajectory(sa, [TrajectoryEntry(pose=_forward())])
        single = step(sb, _forward())
        assert len(frames) == 1
        np.testing.assert_array_equal(frames[0].image, single.image)

    def test_deterministic_replay(self):
        entries = [TrajectoryEntry(pose=_forward(0.1)),
                   TrajectoryEntry(pose=CameraPose.from_euler(4, 0, 0, (0, 0, -0.1))),
                   TrajectoryEntry(pose=_forward(0.2), prompt="new scene")]
        img = _image(13)
        fa = run_trajectory(init_session(img, _config(), mock_suite(seed=13)), entries)
        fb = run_trajectory(init_session(img, _config(), mock_suite(seed=13)), entries)
        for x, y in zip(fa, fb):
            np.testing.assert_array_equal(x.image, y.image)

    def test_empty_trajectory_rejected(self):
        session = init_session(_image(14), _config(), mock_suite(seed=14))
        with pytest.raises(ValueError):
            run_trajectory(session, [])

    def test_failure_carries_index_and_partial_frames(self):
        class DepthDiesLater:
            def __init__(self, inner):
                self.inner = inner
                self.calls = 0

            def __call__(self, image):
                self.calls += 1
                if self.calls >= 3:  # init + first step fine, second step dies
                    raise RuntimeError("boom")
                return self.inner(image)

        suite = mock_suite(seed=15)
        suite.depth_estimator = DepthDiesLater(suite.depth_estimator)
        session = init_session(_image(15), _config(), suite)
        with pytest.raises(TrajectoryError) as err:
            run_trajectory(session, [TrajectoryEntry(pose=_forward())] * 3)
        assert err.value.frame_index == 1
        assert len(err.value.frames) == 1


class TestConfig:
    def test_ordering_validated(self):
        with pytest.raises(ValueError):
            PipelineConfig(t1=441, t2=21)
        with pytest.raises(ValueError):
            PipelineConfig(t1=21, t2=1001)

    def test_grid_membership_checked_at_plan_time(self):
        with pytest.raises(ValueError):
            PipelineConfig(t1=22, t2=441).make_plan()

    def test_negative_knobs_rejected(self):
        with pytest.raises(ValueError):
            PipelineConfig(sigma=-1)
        with pytest.raises(ValueError):
            PipelineConfig(guidance_lambda=-1)
