#!/usr/bin/env python

""" Test the joint sampler with the Gaussian oracle predictor
"""

import os
import tempfile
from unittest import TestCase, main

import numpy as np

from dmmimo.channel import (
    build_profile,
    decompose,
    equalize,
    identity_channel,
    precode,
    sample_rayleigh_channel,
    snr_to_noise_power,
    transmit,
)
from dmmimo.diffusion import build_linear_schedule, forward_diffuse
from dmmimo.diffusion.sampler import (
    Branch,
    common_step_profile,
    denoise,
    final_step,
    init_state,
    normalize_equalized,
    oracle_denoised_mse,
    sampling_step,
    scalar_recursion_gain,
    wiener_mse,
)
from dmmimo.exceptions import DimensionMismatch, InvalidParameter
from dmmimo.experiments.utils import read_csv
from dmmimo.predictor import GaussianOraclePredictor
from dmmimo.signals import complex_gaussian


class SamplerTest(TestCase):
    def setUp(self):
        self.sched = build_linear_schedule()
        self.oracle = GaussianOraclePredictor()
        self.rng = np.random.default_rng(5)

    def link(self, ch, sigma_sq, k=16):
        Z = complex_gaussian(self.rng, ch.batch_shape + (ch.M, k))
        Y_eq = equalize(transmit(precode(Z, ch), ch, sigma_sq, self.rng), ch)
        return Z, Y_eq

    def test_predictor_calls_match_m_max(self):
        ch = sample_rayleigh_channel(2, self.rng)
        _, Y_eq = self.link(ch, 0.05)
        Z_hat, trace = denoise(Y_eq, ch, 0.05, self.oracle, self.sched, self.rng)
        self.assertEqual(Z_hat.shape, Y_eq.shape)
        self.assertEqual(trace.predictor_calls, trace.m_max)
        self.assertEqual(trace.m_max, int(trace.profile.m_steps.max()))
        self.assertEqual(trace.records, [])

    def test_noiseless_channel_is_nearly_identity(self):
        ch = sample_rayleigh_channel(2, self.rng, size=8)
        Z, Y_eq = self.link(ch, 0.0)
        Z_hat, trace = denoise(Y_eq, ch, 0.0, self.oracle, self.sched, self.rng)
        self.assertEqual(trace.m_max, 1)
        self.assertEqual(trace.predictor_calls, 1)
        np.testing.assert_allclose(Z_hat, Z, atol=1e-3)

    def test_branch_schedule(self):
        # a strong and a weak row entering at different steps
        sigma_sq = np.array([self.sched.noise_to_signal[2], self.sched.noise_to_signal[5]])
        ch = decompose(np.diag(1.0 / np.sqrt(sigma_sq)).astype(np.complex128))
        _, Y_eq = self.link(ch, 1.0)
        Z_hat, trace = denoise(
            Y_eq, ch, 1.0, self.oracle, self.sched, self.rng, record_trace=True
        )
        profile = trace.profile
        self.assertEqual(sorted(profile.m_steps.tolist()), [3, 6])
        self.assertEqual(trace.m_max, 6)
        self.assertEqual(trace.predictor_calls, 6)
        self.assertEqual([record.t for record in trace.records], [6, 6, 5, 4, 3, 2])
        self.assertFalse(np.any(trace.records[0].reverse))
        for record in trace.records[1:]:
            expected = profile.m_steps > record.t - 1
            np.testing.assert_array_equal(record.reverse, expected)
        # the weak row reverses throughout, the strong one only from t = 3
        weak = int(np.argmax(profile.m_steps))
        strong = 1 - weak
        self.assertTrue(all(r.reverse[weak] for r in trace.records[1:]))
        self.assertEqual(
            [r.t for r in trace.records[1:] if r.reverse[strong]], [3, 2]
        )
        self.assertEqual(trace.records[1].branches()[strong], Branch.NOISE_ADD.value)

    def test_single_row_enters_at_its_step(self):
        ch = identity_channel(1)
        sigma_sq = self.sched.noise_to_signal[9]
        _, Y_eq = self.link(ch, sigma_sq, k=4)
        profile = build_profile(ch, sigma_sq, self.sched)
        y_bar = normalize_equalized(Y_eq, profile)
        state = init_state(y_bar, profile, self.sched, self.rng)
        self.assertEqual(state.t, 10)
        np.testing.assert_array_equal(state.x, y_bar)
        while state.t > 1:
            state = sampling_step(state, self.oracle, self.sched, self.rng)
        Z_hat = final_step(state, self.oracle, self.sched)
        np.testing.assert_allclose(Z_hat, scalar_recursion_gain(10, self.sched) * y_bar)

    def test_step_guards(self):
        ch = identity_channel(1)
        profile = build_profile(ch, 0.0, self.sched)
        state = init_state(np.ones((1, 2), dtype=np.complex128), profile, self.sched, self.rng)
        with self.assertRaises(InvalidParameter):
            sampling_step(state, self.oracle, self.sched, self.rng)
        with self.assertRaises(DimensionMismatch):
            init_state(np.ones((3, 2), dtype=np.complex128), profile, self.sched, self.rng)
        with self.assertRaises(InvalidParameter):
            denoise(
                np.ones((1, 2), dtype=np.complex128),
                ch,
                0.0,
                self.oracle,
                self.sched,
                self.rng,
                sampler="bogus",
            )

    def test_final_step_needs_t_one(self):
        ch = identity_channel(1)
        profile = build_profile(ch, 1.0, self.sched)
        state = init_state(np.ones((1, 2), dtype=np.complex128), profile, self.sched, self.rng)
        self.assertGreater(state.t, 1)
        with self.assertRaises(InvalidParameter):
            final_step(state, self.oracle, self.sched)

    def test_oracle_pipeline_is_per_row_gain(self):
        ch = sample_rayleigh_channel(2, self.rng, size=32)
        _, Y_eq = self.link(ch, 0.1)
        Z_hat, trace = denoise(Y_eq, ch, 0.1, self.oracle, self.sched, self.rng)
        profile = trace.profile
        gain = scalar_recursion_gain(profile.m_steps, self.sched)
        expected = gain[..., None] * normalize_equalized(Y_eq, profile)
        np.testing.assert_allclose(Z_hat, expected, rtol=1e-9, atol=1e-12)

    def test_oracle_sampler_is_linear_in_its_input(self):
        ch = sample_rayleigh_channel(2, self.rng, size=16)
        _, Y_eq = self.link(ch, 0.1)
        Z_hat, trace = denoise(Y_eq, ch, 0.1, self.oracle, self.sched, np.random.default_rng(1))
        self.assertGreater(np.sum(trace.profile.m_steps < trace.m_max), 0)
        for scale in (-2.0, 0.5j):
            scaled, _ = denoise(scale * Y_eq, ch, 0.1, self.oracle, self.sched, np.random.default_rng(2))
            np.testing.assert_allclose(scaled, scale * Z_hat, rtol=1e-9, atol=1e-12)

    def test_normalized_rows_match_forward_marginal(self):
        trials, k = 2000, 200
        for snr_db in (0.0, 10.0, 20.0):
            sigma_sq = snr_to_noise_power(snr_db, 2)
            ch = sample_rayleigh_channel(2, self.rng, size=trials)
            Z, Y_eq = self.link(ch, sigma_sq, k=k)
            profile = build_profile(ch, sigma_sq, self.sched)
            y_bar = normalize_equalized(Y_eq, profile)
            # each row diffused to its own entry step
            x_m = forward_diffuse(
                Z.reshape(-1, 1, k), profile.m_steps.reshape(-1), self.sched, rng=self.rng
            ).reshape(Z.shape)
            for i in range(2):
                a, b = y_bar[:, i], x_m[:, i]
                self.assertLessEqual(abs(np.mean(a) - np.mean(b)), 0.01, (snr_db, i))
                self.assertAlmostEqual(np.var(a) / np.var(b), 1.0, delta=0.01, msg=(snr_db, i))
                signal = np.sqrt(self.sched.alpha_bar_at(profile.m_steps[:, i]))
                correlation = np.mean(np.real(a * np.conj(Z[:, i])), axis=-1)
                self.assertAlmostEqual(np.mean(correlation - signal), 0.0, delta=0.01)

    def test_renoised_rows_keep_unit_variance(self):
        # sub-channel 1 enters well before sub-channel 2
        ch = decompose(np.diag([4.0, 1.0]).astype(np.complex128))
        sigma_sq = 0.5
        _, Y_eq = self.link(ch, sigma_sq, k=200_000)
        profile = build_profile(ch, sigma_sq, self.sched)
        self.assertLess(profile.m_steps[0], profile.m_max)
        y_bar = normalize_equalized(Y_eq, profile)
        self.assertAlmostEqual(np.var(y_bar[0]), 1.0, delta=0.01)
        state = init_state(y_bar, profile, self.sched, self.rng)
        np.testing.assert_array_equal(state.x[1], y_bar[1])
        self.assertAlmostEqual(np.var(state.x[0]), 1.0, delta=0.01)
        state = sampling_step(state, self.oracle, self.sched, self.rng)
        self.assertAlmostEqual(np.var(state.x[0]), 1.0, delta=0.01)

    def test_batched_start_matches_single_trials(self):
        ch = sample_rayleigh_channel(2, self.rng, size=6)
        _, Y_eq = self.link(ch, 0.2)
        batch, _ = denoise(Y_eq, ch, 0.2, self.oracle, self.sched, self.rng)
        for j in range(6):
            single, _ = denoise(Y_eq[j], ch[j], 0.2, self.oracle, self.sched, self.rng)
            np.testing.assert_allclose(batch[j], single, rtol=1e-9, atol=1e-12)

    def test_common_sampler(self):
        ch = sample_rayleigh_channel(2, self.rng, size=16)
        profile = build_profile(ch, 0.1, self.sched)
        common = common_step_profile(profile)
        np.testing.assert_array_equal(common.m_steps[:, 0], common.m_steps[:, 1])
        np.testing.assert_array_equal(common.m_steps[:, 0], profile.m_steps.max(axis=-1))
        np.testing.assert_array_equal(common.sigma_sq_eff, profile.sigma_sq_eff)
        _, Y_eq = self.link(ch, 0.1)
        Z_hat, trace = denoise(
            Y_eq, ch, 0.1, self.oracle, self.sched, self.rng, sampler="common"
        )
        self.assertEqual(Z_hat.shape, Y_eq.shape)
        self.assertEqual(trace.predictor_calls, trace.m_max)

    def test_oracle_mse_matches_monte_carlo(self):
        sigma_sq = 0.1
        ch = identity_channel(2, size=4000)
        Z, Y_eq = self.link(ch, sigma_sq, k=8)
        Z_hat, _ = denoise(Y_eq, ch, sigma_sq, self.oracle, self.sched, self.rng)
        errors = np.abs(Z_hat - Z) ** 2
        measured = np.mean(errors)
        stderr = np.std(errors) / np.sqrt(errors.size)
        expected = oracle_denoised_mse(sigma_sq, self.sched)
        self.assertLess(abs(measured - expected), 4 * stderr)
        self.assertLess(expected, sigma_sq)
        self.assertGreaterEqual(expected, wiener_mse(sigma_sq))

    def test_denoising_gain_over_grid(self):
        for sigma_sq in np.geomspace(1e-3, 10.0, 9):
            self.assertLess(oracle_denoised_mse(sigma_sq, self.sched), sigma_sq)
            self.assertLess(wiener_mse(sigma_sq), sigma_sq)
        self.assertAlmostEqual(wiener_mse(1.0), 0.5)
        self.assertAlmostEqual(wiener_mse(1.0, source_power=3.0), 0.75)

    def test_recursion_gain_bounds(self):
        gain = scalar_recursion_gain(np.arange(1, 1001), self.sched)
        self.assertTrue(np.all(gain > 0))
        self.assertTrue(np.all(np.diff(gain) < 0))
        self.assertAlmostEqual(gain[0], 1.0, delta=1e-3)
        with self.assertRaises(InvalidParameter):
            scalar_recursion_gain(0, self.sched)

    def test_trace_csv(self):
        ch = sample_rayleigh_channel(2, self.rng, size=3)
        _, Y_eq = self.link(ch, 0.3, k=2)
        _, trace = denoise(Y_eq, ch, 0.3, self.oracle, self.sched, self.rng, record_trace=True)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "trace.csv")
            trace.write_csv(path)
            _, rows = read_csv(path)
        self.assertEqual(len(rows), 3 * 2 * len(trace.records))
        self.assertEqual(set(row["subchannel"] for row in rows), {"1", "2"})
        self.assertEqual(set(row["trial"] for row in rows), {"0", "1", "2"})
        self.assertTrue(
            set(row["branch"] for row in rows) <= {"noise_add", "reverse"}
        )


if __name__ == "__main__":
    main()
