import numpy as np
import pytest

from latentflight.attention import InjectionPlan, KVPair
from latentflight.backends import (
    DenoiserRequest,
    linear_mock_denoiser,
    mock_suite,
    procedural_depth,
    tiny_attention_denoiser,
)
from latentflight.backends.mocks import MockAutoencoder, MockTextEncoder
from latentflight.errors import ConfigurationError
from latentflight.geometry import DepthSource

from oracles import finite_difference_gradient


class TestLinearMock:
    def test_deterministic(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 8, 8))
        a = linear_mock_denoiser(5)(DenoiserRequest(latent=x, timestep=21))
        b = linear_mock_denoiser(5)(DenoiserRequest(latent=x, timestep=21))
        np.testing.assert_array_equal(a.eps, b.eps)

    def test_linearity(self):
        net = linear_mock_denoiser(1)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 8, 8))

        def f(latent):
            return net(DenoiserRequest(latent=latent, timestep=101)).eps

        zero = f(np.zeros_like(x))
        np.testing.assert_allclose(f(3.0 * x) - zero, 3.0 * (f(x) - zero), atol=1e-10)

    def test_scale_in_range(self):
        net = linear_mock_denoiser(2)
        s, _, _, _ = net._params((4, 8, 8))
        assert np.all((0.5 <= s) & (s <= 1.5))

    @pytest.mark.parametrize("seed", range(5))
    def test_analytic_gradient_matches_finite_differences(self, seed):
        net = linear_mock_denoiser(seed)
        rng = np.random.default_rng(seed + 100)
        x = rng.standard_normal((4, 6, 6))
        req = DenoiserRequest(latent=x, timestep=321, capture=frozenset({"features"}))

        def tap_sq_norm(latent):
            r = DenoiserRequest(latent=latent, timestep=321, capture=frozenset({"features"}))
            f = net(r).captured_features["features"]
            return float(np.sum(f * f))

        f0 = net(req).captured_features["features"]
        analytic = net.tap_vjp(req, "features", 2.0 * f0)
        numeric = finite_difference_gradient(tap_sq_norm, x, rel_step=1e-4)
        rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
        assert rel < 1e-6

    def test_unknown_tap_fails_loudly(self):
        net = linear_mock_denoiser(0)
        with pytest.raises(ConfigurationError):
            net(DenoiserRequest(latent=np.zeros((4, 4, 4)), timestep=1,
                                capture=frozenset({"nope"})))

    def test_injection_rejected(self):
        net = linear_mock_denoiser(0)
        pair = KVPair(np.zeros((4, 2)), np.zeros((4, 2)), 2, 2)
        with pytest.raises(ConfigurationError):
            net(DenoiserRequest(latent=np.zeros((4, 4, 4)), timestep=1,
                                injection=InjectionPlan({"x": pair})))


class TestTinyAttention:
    @pytest.mark.parametrize("shape", [(4, 64, 64), (4, 32, 32)])
    def test_output_shape(self, shape):
        net = tiny_attention_denoiser(3)
        x = np.random.default_rng(3).standard_normal(shape)
        assert net(DenoiserRequest(latent=x, timestep=41)).eps.shape == shape

    def test_self_injection_is_noop(self):
        net = tiny_attention_denoiser(4)
        x = np.random.default_rng(4).standard_normal((4, 16, 16))
        req = DenoiserRequest(latent=x, timestep=41, capture=frozenset({net.ATTN_SITE}))
        base = net(req)
        own = base.captured_kv[net.ATTN_SITE]
        injected = net(DenoiserRequest(
            latent=x, timestep=41,
            injection=InjectionPlan({net.ATTN_SITE: KVPair(own.k, own.v, own.height, own.width)})))
        np.testing.assert_allclose(injected.eps, base.eps, atol=1e-6)

    def test_attention_rows_stochastic(self):
        from latentflight.attention import softmax_rows

        net = tiny_attention_denoiser(5)
        x = np.random.default_rng(5).standard_normal((4, 8, 8))
        resp = net(DenoiserRequest(latent=x, timestep=11, capture=frozenset({net.ATTN_SITE})))
        site = resp.captured_kv[net.ATTN_SITE]
        weights = softmax_rows(site.q @ site.k.T / np.sqrt(net.ATTN_DIM))
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-6)

    def test_deterministic(self):
        x = np.random.default_rng(6).standard_normal((4, 8, 8))
        a = tiny_attention_denoiser(6)(DenoiserRequest(latent=x, timestep=21)).eps
        b = tiny_attention_denoiser(6)(DenoiserRequest(latent=x, timestep=21)).eps
        np.testing.assert_array_equal(a, b)

    def test_feature_tap_published(self):
        net = tiny_attention_denoiser(7)
        x = np.random.default_rng(7).standard_normal((4, 8, 8))
        resp = net(DenoiserRequest(latent=x, timestep=21, capture=frozenset({net.FEATURE_TAP})))
        assert resp.captured_features[net.FEATURE_TAP].shape == (net.ATTN_DIM, 4, 4)


class TestProceduralDepth:
    def test_bottom_nearer_than_top(self):
        depth = procedural_depth(0)(np.zeros((32, 32, 3)))
        assert depth.values[-1].mean() < depth.values[0].mean()
        assert depth.source is DepthSource.PROCEDURAL

    def test_same_seed_same_map(self):
        img = np.zeros((24, 24, 3))
        np.testing.assert_array_equal(procedural_depth(9)(img).values,
                                      procedural_depth(9)(img).values)

    @pytest.mark.parametrize("seed", range(10))
    def test_positive_finite_in_range(self, seed):
        depth = procedural_depth(seed)(np.zeros((20, 28, 3)))
        assert np.all(np.isfinite(depth.values))
        assert np.all(depth.values >= 1.0) and np.all(depth.values <= 100.0)


class TestMockAutoencoder:
    def test_factor1_round_trip_exact(self):
        rng = np.random.default_rng(8)
        img = rng.uniform(0, 1, size=(16, 16, 3))
        ae = MockAutoencoder()
        np.testing.assert_allclose(ae.decode(ae.encode(img)), img, atol=1e-12)

    def test_factor8_shapes(self):
        ae = MockAutoencoder(factor=8)
        img = np.random.default_rng(9).uniform(0, 1, size=(64, 64, 3))
        z = ae.encode(img)
        assert z.shape == (4, 8, 8)
        assert ae.decode(z).shape == img.shape

    def test_factor8_round_trip_on_smooth_image(self):
        u, v = np.meshgrid(np.linspace(0, 1, 64), np.linspace(0, 1, 64))
        img = np.stack([u, v, (u + v) / 2], axis=-1) * 0.5 + 0.25
        ae = MockAutoencoder(factor=8)
        out = ae.decode(ae.encode(img))
        assert np.max(np.abs(out - img)) < 0.05


class TestMockTextEncoder:
    def test_deterministic_per_text(self):
        enc = MockTextEncoder()
        a, b = enc("a forest"), enc("a forest")
        np.testing.assert_array_equal(a.vector, b.vector)
        assert a.source_text == "a forest"

    def test_distinct_texts_differ(self):
        enc = MockTextEncoder()
        assert not np.array_equal(enc("a forest").vector, enc("a city").vector)


def test_mock_suite_wiring():
    suite = mock_suite(seed=1, denoiser="tiny_attention")
    assert suite.gradient_mode == "finite_difference"
    suite = mock_suite(seed=1)
    assert suite.gradient_mode == "analytic"
    with pytest.raises(ValueError):
        mock_suite(denoiser="nope")
