#!/usr/bin/env python

""" Test the toy JSCC codec, its sources and the codec training stages
"""

import os
import tempfile
from unittest import TestCase, main

import numpy as np

from dmmimo.channel import identity_channel, snr_to_noise_power
from dmmimo.diffusion import build_linear_schedule
from dmmimo.exceptions import (
    DimensionMismatch,
    InvalidParameter,
    MalformedCheckpoint,
)
from dmmimo.jscc import (
    ToyCodec,
    channel_chain,
    fit_least_squares_decoder,
    reconstruction_errors,
    sample_channels,
    sample_snr_db,
    stage1_train,
    stage3_retrain,
    wiener_decoder,
)
from dmmimo.jscc.sources import (
    GaussianMixtureSource,
    correlated_covariance,
    make_source,
)
from dmmimo.predictor import FeedForwardPredictor, GaussianOraclePredictor
from dmmimo.signals import complex_gaussian, element_power
from dmmimo.training import TrainConfig


class SourcesTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(8)

    def test_correlated_covariance(self):
        cov = correlated_covariance(6, self.rng)
        np.testing.assert_allclose(cov, cov.T)
        eigenvalues = np.linalg.eigvalsh(cov)
        self.assertAlmostEqual(np.trace(cov), 6.0)
        self.assertAlmostEqual(eigenvalues.max() / eigenvalues.min(), 10.0, places=6)

    def test_gaussian_source_statistics(self):
        source = make_source("gaussian", 4, self.rng)
        self.assertEqual(source.kind, "gaussian")
        self.assertAlmostEqual(source.variance, 1.0)
        samples = source.sample(self.rng, 100_000)
        self.assertEqual(samples.shape, (100_000, 4))
        np.testing.assert_allclose(np.cov(samples.T), source.covariance, atol=0.05)

    def test_white_and_mixture(self):
        white = make_source("white", 3, self.rng)
        self.assertEqual(white.kind, "white")
        np.testing.assert_array_equal(white.covariance, np.eye(3))
        mixture = make_source("mixture", 5, self.rng)
        self.assertIsInstance(mixture, GaussianMixtureSource)
        samples = mixture.sample(self.rng, (200, 100))
        self.assertEqual(samples.shape, (200, 100, 5))
        self.assertAlmostEqual(np.mean(samples**2), 1.0, delta=0.03)
        self.assertAlmostEqual(mixture.variance, 1.0)

    def test_bad_sources(self):
        with self.assertRaises(InvalidParameter):
            make_source("laplace", 4, self.rng)
        with self.assertRaises(InvalidParameter):
            make_source("white", 0, self.rng)
        with self.assertRaises(InvalidParameter):
            GaussianMixtureSource(4, self.rng, separation=1.0)


class JsccTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(21)
        self.source = make_source("gaussian", 8, self.rng)
        self.sources = self.source.sample(self.rng, 2048)

    def test_codec_shapes(self):
        codec = ToyCodec(n=8, M=2, k=3)
        self.assertEqual(codec.block_size, 12)
        self.assertAlmostEqual(codec.cbr, 3 / 8)
        Z = codec.encode(self.sources[:5])
        self.assertEqual(Z.shape, (5, 2, 3))
        self.assertEqual(Z.dtype, np.complex128)
        self.assertEqual(codec.decode(Z).shape, (5, 8))
        np.testing.assert_array_equal(codec.to_block(codec.to_reals(Z)), Z)
        with self.assertRaises(DimensionMismatch):
            codec.encode(np.zeros((5, 7)))
        with self.assertRaises(DimensionMismatch):
            codec.decode(np.zeros((5, 3, 3), dtype=complex))
        with self.assertRaises(InvalidParameter):
            ToyCodec(n=0)

    def test_calibrate_sets_unit_power(self):
        codec = ToyCodec(n=8, M=2, k=4, seed=3)
        codec.calibrate(self.sources)
        self.assertAlmostEqual(element_power(codec.encode(self.sources)), 1.0, places=10)
        A, b = codec.encoder_arrays()
        self.assertEqual(A.shape, (16, 8))
        reals = self.sources[:3] @ A.T + b
        np.testing.assert_allclose(codec.to_block(reals), codec.encode(self.sources[:3]))

    def test_codec_checkpoint(self):
        codec = ToyCodec(n=8, M=2, k=2, seed=5).calibrate(self.sources)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "codec.ckpt")
            codec.save(path, {"stage": 1})
            loaded = ToyCodec.load(path)
            other = os.path.join(tmpdir, "predictor.ckpt")
            FeedForwardPredictor(2, 2, 10, hidden_widths=[2]).save(other)
            with self.assertRaises(MalformedCheckpoint):
                ToyCodec.load(other)
        self.assertEqual(float(loaded.power_scale), float(codec.power_scale))
        np.testing.assert_array_equal(loaded.encode(self.sources), codec.encode(self.sources))

    def test_snr_sampling(self):
        np.testing.assert_array_equal(sample_snr_db(self.rng, (5.0, 5.0), 3), [5.0, 5.0, 5.0])
        draws = sample_snr_db(self.rng, (0.0, 20.0), 1000)
        self.assertTrue(np.all((draws >= 0) & (draws <= 20)))
        with self.assertRaises(InvalidParameter):
            sample_snr_db(self.rng, (10.0, 0.0), 3)

    def test_channel_kinds(self):
        self.assertEqual(sample_channels(2, self.rng, 4).lambdas.shape, (4, 2))
        np.testing.assert_array_equal(sample_channels(2, self.rng, 4, "identity").lambdas, 1.0)
        with self.assertRaises(InvalidParameter):
            sample_channels(2, self.rng, 4, "awgn")

    def test_noiseless_chain(self):
        Z = complex_gaussian(self.rng, (10, 2, 3))
        ch = sample_channels(2, self.rng, 10)
        np.testing.assert_allclose(channel_chain(Z, ch, 0.0, self.rng), Z, atol=1e-8)

    def test_stage1_reduces_loss(self):
        codec = ToyCodec(n=8, M=2, k=2, seed=1)
        cfg = TrainConfig(epochs=5, batch_size=64, learning_rate=1e-2, iterations_per_epoch=30)
        trained, history = stage1_train(
            codec, self.sources, (20.0, 20.0), cfg, self.rng, channel="identity"
        )
        self.assertIs(trained, codec)
        self.assertEqual(len(history), 5)
        self.assertLess(history[-1].mean_loss, history[0].mean_loss)
        self.assertAlmostEqual(element_power(codec.encode(self.sources)), 1.0, places=10)

    def test_stage3_only_touches_decoder(self):
        codec = ToyCodec(n=8, M=2, k=2, seed=1).calibrate(self.sources)
        before = codec.state_arrays()
        cfg = TrainConfig(epochs=1, batch_size=16, learning_rate=1e-2, iterations_per_epoch=3)
        sched = build_linear_schedule(50, 0.999, 0.9)
        _, history = stage3_retrain(
            codec, GaussianOraclePredictor(), self.sources, (10.0, 10.0), cfg, self.rng, sched
        )
        self.assertEqual(len(history), 1)
        after = codec.state_arrays()
        for name in ("encoder.weight", "encoder.bias", "power_scale"):
            np.testing.assert_array_equal(after[name], before[name])
        self.assertFalse(np.array_equal(after["decoder.weight"], before["decoder.weight"]))

    def test_wiener_decoder_matches_theory(self):
        codec = ToyCodec(n=8, M=2, k=4, seed=2).calibrate(self.sources)
        sigma_sq = snr_to_noise_power(10.0, codec.M)
        weight, bias = wiener_decoder(codec, self.source.mean, self.source.covariance, sigma_sq)
        codec.set_decoder(weight, bias)
        A, _ = codec.encoder_arrays()
        C = self.source.covariance
        theory = np.trace(C - weight @ A @ C) / codec.n
        sources = self.source.sample(self.rng, 50_000)
        Z = codec.encode(sources)
        ch = identity_channel(codec.M, size=len(sources))
        s_hat = codec.decode(channel_chain(Z, ch, sigma_sq, self.rng))
        measured = np.mean((s_hat - sources) ** 2)
        self.assertAlmostEqual(measured / theory, 1.0, delta=0.03)
        self.assertLess(theory, self.source.variance)

    def test_least_squares_decoder_approaches_wiener(self):
        codec = ToyCodec(n=8, M=2, k=4, seed=2).calibrate(self.sources)
        sigma_sq = snr_to_noise_power(10.0, codec.M)
        sources = self.source.sample(self.rng, 50_000)
        Z = codec.encode(sources)
        ch = identity_channel(codec.M, size=len(sources))
        Y = channel_chain(Z, ch, sigma_sq, self.rng)
        fit_least_squares_decoder(codec, sources, Y)
        fitted = np.mean((codec.decode(Y) - sources) ** 2)
        weight, bias = wiener_decoder(codec, self.source.mean, self.source.covariance, sigma_sq)
        wiener = np.mean((codec.to_reals(Y) @ weight.T + bias - sources) ** 2)
        self.assertLessEqual(fitted, wiener + 1e-12)
        self.assertAlmostEqual(fitted / wiener, 1.0, delta=0.02)

    def test_reconstruction_errors(self):
        codec = ToyCodec(n=8, M=2, k=2, seed=1).calibrate(self.sources)
        sched = build_linear_schedule(50, 0.999, 0.9)
        plain = reconstruction_errors(codec, self.sources[:64], 10.0, self.rng)
        denoised = reconstruction_errors(
            codec, self.sources[:64], 10.0, self.rng, GaussianOraclePredictor(), sched
        )
        self.assertEqual(plain.shape, (64,))
        self.assertEqual(denoised.shape, (64,))
        self.assertTrue(np.all(np.isfinite(plain)) and np.all(np.isfinite(denoised)))


if __name__ == "__main__":
    main()
