import numpy as np
import pytest

from latentflight.geometry import CameraIntrinsics, CameraPose, DepthMap, forward_warp
from latentflight.spectral import merge_frequency, split_frequency, warp_latent_highpass

from oracles import random_pose


def _spectrum(x):
    return np.fft.fftshift(np.fft.fft2(x, axes=(1, 2)), axes=(1, 2))


def _scene(seed, n=64):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, n, n))
    depth = DepthMap(rng.uniform(2, 10, size=(n, n)))
    k = CameraIntrinsics.from_fov(n, n)
    rot, trans = random_pose(rng, max_angle_deg=4, max_shift=0.3)
    return x, depth, k, CameraPose(rot, trans)


class TestSplit:
    def test_all_pass_sigma(self):
        x = np.random.default_rng(0).standard_normal((2, 16, 16))
        sigma = np.hypot(16, 16) / 2 + 1
        s = split_frequency(x, sigma)
        np.testing.assert_allclose(s.low_spatial, x, atol=1e-12)
        np.testing.assert_allclose(s.high_band, 0.0, atol=1e-12)

    def test_dc_only_at_sigma_zero(self):
        x = np.random.default_rng(1).standard_normal((3, 16, 16))
        s = split_frequency(x, 0.0)
        np.testing.assert_allclose(
            s.low_spatial, np.broadcast_to(x.mean(axis=(1, 2))[:, None, None], x.shape),
            atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_parseval_energy_split(self, seed):
        x = np.random.default_rng(seed).standard_normal((4, 64, 64))
        s = split_frequency(x, 20.0)
        total = np.sum(np.abs(_spectrum(x)) ** 2)
        low = np.sum(np.abs(_spectrum(s.low_spatial)) ** 2)
        high = np.sum(np.abs(s.high_band) ** 2)
        assert abs(low + high - total) / total < 1e-6

    def test_band_supports_are_disjoint_and_cover(self):
        x = np.random.default_rng(2).standard_normal((1, 32, 32))
        s = split_frequency(x, 7.0)
        low_spec = _spectrum(s.low_spatial)
        overlap = np.abs(low_spec) * np.abs(s.high_band)
        assert np.max(overlap) < 1e-8
        np.testing.assert_allclose(low_spec + s.high_band, _spectrum(x), atol=1e-9)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            split_frequency(np.zeros((1, 8, 8)), -1.0)


class TestMerge:
    @pytest.mark.parametrize("sigma", [0.0, 3.0, 20.0, 1e9])
    def test_round_trip(self, sigma):
        x = np.random.default_rng(3).standard_normal((4, 32, 32))
        s = split_frequency(x, sigma)
        np.testing.assert_allclose(merge_frequency(s.low_spatial, s.high_band), x, atol=1e-5)

    def test_zero_high_band(self):
        low = np.random.default_rng(4).standard_normal((2, 16, 16))
        np.testing.assert_allclose(
            merge_frequency(low, np.zeros_like(low, dtype=complex)), low, atol=1e-6)

    def test_zero_low_band(self):
        x = np.random.default_rng(5).standard_normal((2, 16, 16))
        s = split_frequency(x, 4.0)
        out = merge_frequency(np.zeros_like(x), s.high_band)
        expect = np.fft.ifft2(np.fft.ifftshift(s.high_band, axes=(1, 2)), axes=(1, 2)).real
        np.testing.assert_allclose(out, expect, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            merge_frequency(np.zeros((1, 8, 8)), np.zeros((1, 4, 4), dtype=complex))


class TestWarpLatentHighpass:
    @pytest.mark.parametrize("sigma", [0.0, 5.0, 20.0, 1e9])
    def test_identity_pose_round_trips(self, sigma):
        x, depth, k, _ = _scene(6)
        out, wr = warp_latent_highpass(x, depth, k, CameraPose.identity(), sigma)
        np.testing.assert_allclose(out, x, atol=1e-5)
        assert not wr.hole_mask.any()

    def test_all_pass_equals_plain_warp(self):
        x, depth, k, pose = _scene(7)
        sigma = np.hypot(64, 64)  # beyond the spectral radius
        out, _ = warp_latent_highpass(x, depth, k, pose, sigma)
        plain, _ = forward_warp(x, depth, k, pose)
        np.testing.assert_allclose(out, plain, atol=1e-5)

    @pytest.mark.parametrize("seed", range(8))
    def test_out_of_band_spectrum_conserved(self, seed):
        x, depth, k, pose = _scene(seed)
        sigma = 20.0
        out, _ = warp_latent_highpass(x, depth, k, pose, sigma)
        fy = np.arange(64) - 32
        outside = np.hypot(fy[:, None], fy[None, :]) > sigma
        diff = _spectrum(out) - _spectrum(x)
        assert np.max(np.abs(diff[:, outside])) < 1e-6

    def test_linear_in_input_for_hole_free_pose(self):
        x, depth, k, _ = _scene(8)
        pose = CameraPose.identity()  # hole-free by construction
        out1, _ = warp_latent_highpass(x, depth, k, pose, 12.0)
        out2, _ = warp_latent_highpass(2.5 * x, depth, k, pose, 12.0)
        np.testing.assert_allclose(out2, 2.5 * out1, atol=1e-8)

    def test_linear_under_moving_pose_fixed_holes(self):
        x, depth, k, pose = _scene(9)
        out1, wr1 = warp_latent_highpass(x, depth, k, pose, 12.0)
        out2, wr2 = warp_latent_highpass(-3.0 * x, depth, k, pose, 12.0)
        np.testing.assert_array_equal(wr1.hole_mask, wr2.hole_mask)
        np.testing.assert_allclose(out2, -3.0 * out1, atol=1e-8)
