import math

import numpy as np
import pytest

from convsort.convops import reconstruct
from convsort.errors import NumericalError
from convsort.signals import Dictionary, error_distance, window
from convsort.simulate import (
    GroundTruth,
    SimConfig,
    add_noise,
    bundled_dictionary,
    gen_spike_train,
    perturb_dictionary,
    render,
    simulate,
    synthetic_templates,
)


@pytest.fixture(scope="module")
def d3():
    return bundled_dictionary()


def small_config(d, **overrides):
    base = dict(
        dictionary=d,
        num_windows=3,
        window_length=2000,
        sampling_rate_hz=30000.0,
        firing_rate_hz=40.0,
        amplitude_range=(-125.0, -75.0),
        snr_db=10.0,
        seed=1234,
    )
    base.update(overrides)
    return SimConfig(**base)


class TestGenSpikeTrain:
    def test_rate_forty_hz_counts(self):
        counts = []
        for seed in range(1000):
            train = gen_spike_train(40.0, 30000, 45, 30000.0, seed)
            counts.append(len(train))
        counts = np.array(counts)
        in_range = np.mean((counts >= 20) & (counts <= 60))
        assert in_range > 0.99

    def test_min_gap_by_construction(self):
        for seed in range(50):
            train = gen_spike_train(200.0, 30000, 45, 30000.0, seed)
            if len(train) > 1:
                assert np.diff(train).min() >= 45
            assert train.max() <= 30000 - 45

    def test_deterministic_given_seed(self):
        a = gen_spike_train(40.0, 30000, 45, 30000.0, 7)
        b = gen_spike_train(40.0, 30000, 45, 30000.0, 7)
        assert np.array_equal(a, b)

    def test_infeasible_rate(self):
        with pytest.raises(NumericalError, match="infeasible"):
            gen_spike_train(800.0, 30000, 45, 30000.0, 0)


class TestRender:
    def test_peak_scaling_identity(self):
        # unit-norm template whose largest-|.| sample is exactly +0.5
        vals = np.array([0.5, 0.45, 0.45, 0.45, 0.3, 0.0])
        vals[-1] = np.sqrt(1.0 - np.sum(vals**2))
        d = Dictionary(vals[None, :])
        cfg = small_config(d, amplitude_range=(-100.0, -100.0), firing_rate_hz=5.0)
        clean, events = render(cfg, [np.array([100])])
        assert events.amplitudes[0] == pytest.approx(-200.0)
        assert clean.samples.min() == pytest.approx(-100.0)
        assert clean.samples[100] == pytest.approx(-100.0)

    def test_zero_events_zero_signal(self, d3):
        cfg = small_config(d3)
        clean, events = render(cfg, [np.array([], dtype=int)] * 3)
        assert len(events) == 0
        assert np.all(clean.samples == 0.0)

    def test_render_matches_reconstruct_exactly(self, d3):
        cfg = small_config(d3, firing_rate_hz=20.0)
        gt = simulate(cfg)
        ws = window(gt.clean, cfg.window_length)
        per = gt.events.split_windows(cfg.window_length, cfg.num_windows)
        for j in range(cfg.num_windows):
            rec = reconstruct(d3, per[j], cfg.window_length)
            assert np.array_equal(rec, ws.column(j))


class TestAddNoise:
    def test_infinite_snr_is_noiseless(self, d3):
        cfg = small_config(d3, snr_db=math.inf)
        gt = simulate(cfg)
        assert gt.sigma == 0.0
        assert np.array_equal(gt.clean.samples, gt.noisy.samples)

    def test_zero_db_means_sigma_squared_equals_power(self, d3):
        cfg = small_config(d3, snr_db=0.0)
        gt = simulate(cfg)
        power = np.mean(gt.clean.samples**2)
        assert gt.sigma**2 == pytest.approx(power, rel=1e-12)

    def test_remeasured_snr_within_band(self, d3):
        errs = []
        for seed in range(10):
            cfg = small_config(d3, snr_db=6.0, seed=seed, num_windows=5)
            gt = simulate(cfg)
            power = np.mean(gt.clean.samples**2)
            realized = gt.noisy.samples - gt.clean.samples
            snr_hat = 10 * np.log10(power / np.var(realized))
            errs.append(abs(snr_hat - 6.0))
        assert max(errs) < 0.2

    def test_all_zero_clean_rejected(self):
        from convsort.signals import Signal

        with pytest.raises(NumericalError, match="undefined SNR"):
            add_noise(Signal(np.zeros(100), 1.0), 6.0, 0)


class TestPerturbDictionary:
    def test_zero_target_returns_input(self, d3):
        assert perturb_dictionary(d3, 0.0, 1) is d3

    def test_target_point_four(self, d3):
        out = perturb_dictionary(d3, 0.4, seed=7)
        err = error_distance(out, d3)
        assert 0.39 <= err <= 0.41

    def test_output_unit_norm(self, d3):
        out = perturb_dictionary(d3, 0.25, seed=3)
        assert np.allclose(np.linalg.norm(out.templates, axis=1), 1.0, atol=1e-12)

    def test_invalid_target(self, d3):
        with pytest.raises(ValueError):
            perturb_dictionary(d3, 1.0, seed=0)


class TestSimulate:
    def test_bitwise_determinism(self, d3):
        cfg = small_config(d3)
        a = simulate(cfg)
        b = simulate(cfg)
        assert np.array_equal(a.noisy.samples, b.noisy.samples)
        assert np.array_equal(a.events.positions, b.events.positions)
        assert np.array_equal(a.events.amplitudes, b.events.amplitudes)
        assert a.sigma == b.sigma

    def test_refractory_gap_per_neuron(self, d3):
        gt = simulate(small_config(d3, firing_rate_hz=60.0, num_windows=5))
        for c in range(3):
            pos = gt.events.for_neuron(c).positions
            if len(pos) > 1:
                assert np.diff(pos).min() >= 45

    def test_positions_representable_per_window(self, d3):
        cfg = small_config(d3)
        gt = simulate(cfg)
        local = gt.events.positions % cfg.window_length
        assert local.max() <= cfg.window_length - 45

    def test_noise_is_the_difference(self, d3):
        gt = simulate(small_config(d3))
        noise = gt.noisy.samples - gt.clean.samples
        assert np.std(noise) == pytest.approx(gt.sigma, rel=0.05)


class TestTemplates:
    def test_bundled_shape_and_norms(self, d3):
        assert d3.num_templates == 3
        assert d3.template_length == 45
        assert np.allclose(np.linalg.norm(d3.templates, axis=1), 1.0, atol=1e-9)
        assert np.all(d3.peak_values() > 0)

    def test_bundled_matches_generator(self, d3):
        gen = synthetic_templates(3, 45)
        assert np.max(np.abs(gen.templates - d3.templates)) < 1e-15

    def test_synthetic_any_count(self):
        d = synthetic_templates(5, 31)
        assert d.num_templates == 5
        assert np.all(d.peak_values() > 0)
