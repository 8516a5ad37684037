import math

import numpy as np
import pytest

from cfpl import autograd as ag
from cfpl.autograd import Tensor
from cfpl.config import DspConfig
from cfpl.encoders import EncoderOutput
from cfpl.style_content import (STAT_EPS, DspPlan, StyleStats, content_feature,
                                draw_dsp_plan, mix_statistics, style_feature)


def output_from(layers):
    tensors = [Tensor(np.asarray(layer)) for layer in layers]
    return EncoderOutput(tensors, tensors[-1][:, 0, :])


class TestStyleFeature:
    def test_hand_mean_and_std(self):
        # one layer, class token + two spatial tokens with channel values 1, 3
        layer = np.zeros((1, 3, 2))
        layer[0, 1] = [1.0, 1.0]
        layer[0, 2] = [3.0, 3.0]
        out = style_feature(output_from([layer]))
        mu, sigma = out.data[0, :2], out.data[0, 2:]
        np.testing.assert_allclose(mu, [2.0, 2.0], atol=1e-6)
        np.testing.assert_allclose(sigma, [1.0, 1.0], atol=1e-5)

    def test_constant_tokens_floor_sigma(self):
        layer = np.full((2, 4, 3), 7.0)
        out = style_feature(output_from([layer]))
        np.testing.assert_allclose(out.data[:, 3:], math.sqrt(STAT_EPS), rtol=1e-6)

    def test_layer_averaging(self, rng):
        a = rng.normal(size=(2, 5, 3))
        b = rng.normal(size=(2, 5, 3))
        combined = style_feature(output_from([a, b])).data
        one = style_feature(output_from([a])).data
        two = style_feature(output_from([b])).data
        np.testing.assert_allclose(combined, (one + two) / 2.0, atol=1e-6)

    def test_class_token_excluded(self, rng):
        layer = rng.normal(size=(2, 5, 3))
        spiked = layer.copy()
        spiked[:, 0, :] = 1e6  # class token must not matter
        np.testing.assert_array_equal(style_feature(output_from([layer])).data,
                                      style_feature(output_from([spiked])).data)

    def test_inactive_is_deterministic(self, rng):
        layer = rng.normal(size=(3, 5, 4))
        dsp = DspConfig(active=False)
        a = style_feature(output_from([layer]), dsp, np.random.default_rng(1)).data
        b = style_feature(output_from([layer]), dsp, np.random.default_rng(2)).data
        np.testing.assert_array_equal(a, b)

    def test_empty_layers_rejected(self):
        with pytest.raises(ValueError):
            style_feature(EncoderOutput([], None))

    def test_shape(self, rng):
        layer = rng.normal(size=(4, 6, 5))
        assert style_feature(output_from([layer])).shape == (4, 10)


class TestContentFeature:
    def test_hand_two_tokens(self):
        layer = np.zeros((1, 2, 1))
        layer[0, 0, 0] = 1.0
        layer[0, 1, 0] = 3.0
        out = content_feature(output_from([layer]))
        np.testing.assert_allclose(out.data[0, :, 0], [-1.0, 1.0], atol=1e-5)

    def test_idempotent_on_normalized(self, rng):
        layer = rng.normal(size=(2, 64, 3))
        once = content_feature(output_from([layer])).data
        twice = content_feature(output_from([once])).data
        np.testing.assert_allclose(twice, once, atol=1e-4)

    def test_zero_mean_per_channel(self, rng):
        layer = rng.normal(size=(3, 7, 5), loc=2.0, scale=4.0)
        out = content_feature(output_from([layer])).data
        assert np.max(np.abs(out.mean(axis=1))) < 1e-5

    def test_uses_last_layer_and_keeps_shape(self, rng):
        first = rng.normal(size=(2, 6, 3))
        last = rng.normal(size=(2, 6, 3))
        out = content_feature(output_from([first, last]))
        assert out.shape == last.shape
        np.testing.assert_array_equal(
            out.data, content_feature(output_from([last])).data)


class TestMixStatistics:
    def _stats(self, rng, b=4, d=3):
        return StyleStats(
            mu=Tensor(rng.normal(size=(b, d))),
            sigma=Tensor(rng.random(size=(b, d)) + 0.5))

    def test_lambda_one_identity(self, rng):
        stats = self._stats(rng)
        mixed = mix_statistics(stats, np.array([1, 2, 3, 0]), np.ones((4, 1)))
        np.testing.assert_allclose(mixed.mu.data, stats.mu.data, atol=1e-7)
        np.testing.assert_allclose(mixed.sigma.data, stats.sigma.data, atol=1e-7)

    def test_lambda_zero_takes_partner(self, rng):
        stats = self._stats(rng)
        perm = np.array([2, 3, 0, 1])
        mixed = mix_statistics(stats, perm, np.zeros((4, 1)))
        np.testing.assert_allclose(mixed.mu.data, stats.mu.data[perm], atol=1e-7)
        np.testing.assert_allclose(mixed.sigma.data, stats.sigma.data[perm], atol=1e-7)

    def test_identity_permutation(self, rng):
        stats = self._stats(rng)
        lam = rng.random(size=(4, 1))
        mixed = mix_statistics(stats, np.arange(4), lam)
        np.testing.assert_allclose(mixed.mu.data, stats.mu.data, atol=1e-6)
        np.testing.assert_allclose(mixed.sigma.data, stats.sigma.data, atol=1e-6)

    def test_non_bijection_rejected(self, rng):
        with pytest.raises(ValueError, match="bijection"):
            mix_statistics(self._stats(rng), np.array([0, 0, 1, 2]), np.ones((4, 1)))

    def test_lambda_out_of_range_rejected(self, rng):
        with pytest.raises(ValueError):
            mix_statistics(self._stats(rng), np.arange(4), np.full((4, 1), 1.5))

    def test_sigma_stays_positive(self, rng):
        stats = self._stats(rng)
        mixed = mix_statistics(stats, np.array([3, 2, 1, 0]), rng.random(size=(4, 1)))
        assert np.all(mixed.sigma.data > 0)

    def test_beta_mix_empirical_mean(self, rng):
        # replicate a 2-row batch K times; the mixed sigma must average to
        # the midpoint of the pair since Beta(0.1, 0.1) has mean 1/2
        k = 100_000
        sigma_pair = np.array([[0.6, 1.4, 2.0], [1.8, 0.9, 0.4]])
        mu_pair = np.zeros((2, 3))
        stats = StyleStats(mu=Tensor(np.tile(mu_pair, (k, 1))),
                           sigma=Tensor(np.tile(sigma_pair, (k, 1))))
        swap = np.arange(2 * k).reshape(k, 2)[:, ::-1].reshape(-1)
        lam = rng.beta(0.1, 0.1, size=(2 * k, 1))
        mixed = mix_statistics(stats, swap, lam)
        empirical = mixed.sigma.data.reshape(k, 2, 3).mean(axis=0)
        expected = np.tile((sigma_pair[0] + sigma_pair[1]) / 2.0, (2, 1))
        np.testing.assert_allclose(empirical, expected, rtol=0.01)


class TestDspPlan:
    def test_never_fires_when_inactive(self):
        plan = draw_dsp_plan(DspConfig(active=False), 4, np.random.default_rng(0))
        assert not plan.fired

    def test_fire_rate_matches_probability(self):
        g = np.random.default_rng(3)
        fires = sum(draw_dsp_plan(DspConfig(p=0.5), 4, g).fired for _ in range(2000))
        assert 850 < fires < 1150

    def test_fired_plan_is_replayable(self, rng):
        cfg = DspConfig(p=1.0)
        plan = draw_dsp_plan(cfg, 6, np.random.default_rng(9))
        assert plan.fired and plan.perm.shape == (6,) and plan.lam.shape == (6, 1)
        layer = rng.normal(size=(6, 5, 4))
        a = style_feature(output_from([layer]), plan=plan).data
        b = style_feature(output_from([layer]), plan=plan).data
        np.testing.assert_array_equal(a, b)

    def test_mixing_changes_style_not_content(self, rng):
        layer = rng.normal(size=(4, 5, 3))
        out = output_from([layer])
        plan = draw_dsp_plan(DspConfig(p=1.0), 4, np.random.default_rng(5))
        plain = style_feature(out, plan=DspPlan(fired=False)).data
        mixed = style_feature(out, plan=plan).data
        assert not np.allclose(plain, mixed)
        np.testing.assert_array_equal(content_feature(out).data,
                                      content_feature(out).data)

    def test_gradient_flows_through_mixing(self, rng):
        with ag.precision(np.float64):
            layer = Tensor(rng.normal(size=(4, 5, 3)), requires_grad=True)
            out = EncoderOutput([layer], layer[:, 0, :])
            plan = draw_dsp_plan(DspConfig(p=1.0), 4, np.random.default_rng(5))
            style_feature(out, plan=plan).sum().backward()
            assert layer.grad is not None and np.any(layer.grad != 0)
