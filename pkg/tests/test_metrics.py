import json

import numpy as np
import pytest

from latentflight.metrics import psnr, sequence_consistency, ssim

from oracles import psnr_oracle, ssim_oracle


class TestPsnr:
    def test_identical_images_capped(self):
        img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
        assert psnr(img, img) == 100.0

    def test_uniform_difference_closed_form(self):
        a = np.full((8, 8, 3), 0.5)
        b = np.full((8, 8, 3), 0.6)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_direct_formula(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 1, (12, 12, 3))
        b = rng.uniform(0, 1, (12, 12, 3))
        assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        a = rng.uniform(0, 1, (8, 8, 3))
        b = rng.uniform(0, 1, (8, 8, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)))


class TestSsim:
    def test_self_similarity_is_one(self):
        img = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_inverted_checkerboard_strongly_negative(self):
        board = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)
        a = np.stack([board] * 3, axis=-1)
        assert ssim(a, 1.0 - a) < 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_windowed_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 1, (32, 32, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_grayscale_inputs_accepted(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, (16, 16))
        b = rng.uniform(0, 1, (16, 16))
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(0, 1, (20, 20, 3))
        b = rng.uniform(0, 1, (20, 20, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class TestSequenceConsistency:
    def test_constant_sequence(self):
        img = np.random.default_rng(2).uniform(0, 1, (16, 16, 3))
        report = sequence_consistency([img.copy() for _ in range(4)])
        assert report.mean_psnr_db == 100.0
        assert report.mean_ssim == pytest.approx(1.0, abs=1e-9)
        assert len(report.psnr_db) == 3 and report.frame_count == 4

    def test_two_frames_equals_single_call(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0, 1, (16, 16, 3))
        b = rng.uniform(0, 1, (16, 16, 3))
        report = sequence_consistency([a, b])
        assert report.psnr_db[0] == psnr(a, b)
        assert report.ssim[0] == ssim(a, b)

    def test_requires_two_frames(self):
        with pytest.raises(ValueError):
            sequence_consistency([np.zeros((16, 16, 3))])

    def test_json_and_text_outputs(self):
        rng = np.random.default_rng(4)
        frames = [rng.uniform(0, 1, (16, 16, 3)) for _ in range(3)]
        report = sequence_consistency(frames)
        payload = json.loads(report.to_json())
        assert payload["frame_count"] == 3
        assert len(payload["psnr_db"]) == 2
        text = report.to_text()
        assert "mean" in text and "psnr_db" in text
