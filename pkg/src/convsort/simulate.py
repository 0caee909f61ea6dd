"""Ground-truthed synthetic recordings.

Spike trains are homogeneous point processes thinned to a hard dead time of
one template length, rendered as shifted scaled templates, and perturbed by
white Gaussian noise calibrated to a target signal-to-noise ratio measured
over the spike supports.  Everything is driven by explicit seeds; identical
configurations produce bit-identical data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .convops import reconstruct
from .errors import NumericalError
from .signals import Dictionary, EventList, Signal, error_distance

__all__ = [
    "SimConfig",
    "GroundTruth",
    "gen_spike_train",
    "render",
    "add_noise",
    "perturb_dictionary",
    "simulate",
    "synthetic_templates",
    "bundled_dictionary",
]


@dataclass(frozen=True)
class SimConfig:
    """Recipe for one synthetic recording.

    ``amplitude_range`` gives the rendered peak value in mV, drawn uniformly
    per event; negative ranges produce the usual downward extracellular
    deflections.  ``snr_db`` may be ``math.inf`` for a noiseless trace.
    ``firing_rate_hz`` is shared by all neurons when scalar.
    """

    dictionary: Dictionary
    num_windows: int
    window_length: int
    sampling_rate_hz: float
    firing_rate_hz: float | tuple
    amplitude_range: tuple[float, float]
    snr_db: float
    seed: int

    def __post_init__(self):
        if self.num_windows < 1:
            raise ValueError("num_windows must be >= 1")
        if self.window_length <= self.dictionary.template_length:
            raise ValueError("window_length must exceed the template length")
        lo, hi = self.amplitude_range
        if lo > hi:
            raise ValueError("amplitude_range must be (low, high) with low <= high")
        for r in self.rates():
            if r <= 0:
                raise ValueError("firing rates must be positive")

    def rates(self) -> np.ndarray:
        c = self.dictionary.num_templates
        r = np.atleast_1d(np.asarray(self.firing_rate_hz, dtype=float))
        if r.size == 1:
            return np.full(c, float(r[0]))
        if r.size != c:
            raise ValueError("need one firing rate per neuron")
        return r


@dataclass(frozen=True)
class GroundTruth:
    clean: Signal
    noisy: Signal
    events: EventList
    sigma: float


def gen_spike_train(rate_hz: float, duration_samples: int, refractory: int,
                    sampling_rate_hz: float, seed) -> np.ndarray:
    """Event onsets of a dead-time-thinned homogeneous point process.

    Candidate events arrive with exponential gaps at ``rate_hz``; a candidate
    closer than ``refractory`` samples to the last kept event is dropped.
    Events always end before ``duration_samples``.

    Raises
    ------
    NumericalError
        If the dead time alone exceeds the mean inter-event gap
        (``rate * refractory / fs >= 1``), which the thinning cannot honor.
    """
    if rate_hz <= 0:
        raise ValueError("rate must be positive")
    if rate_hz * refractory / sampling_rate_hz >= 1.0:
        raise NumericalError(
            "infeasible rate: dead time exceeds the mean inter-event gap"
        )
    rng = np.random.default_rng(seed)
    limit = duration_samples - refractory
    out = []
    t = 0.0
    last = -refractory
    while True:
        t += rng.exponential(1.0 / rate_hz)
        n = int(math.floor(t * sampling_rate_hz))
        if n > limit:
            break
        if n - last >= refractory:
            out.append(n)
            last = n
    return np.asarray(out, dtype=np.int64)


def render(config: SimConfig, trains: list[np.ndarray],
           amplitude_rng=None) -> tuple[Signal, EventList]:
    """Place templates at the given onsets with per-event peak amplitudes.

    ``trains[c]`` holds global onsets for neuron c.  Each event draws a peak
    value uniformly from ``config.amplitude_range`` and converts it to a code
    amplitude by dividing by the template's (signed) value at its
    largest-magnitude sample, so the rendered deflection tops out exactly at
    the drawn value.
    """
    d = config.dictionary
    rng = np.random.default_rng(config.seed) if amplitude_rng is None else amplitude_rng
    lo, hi = config.amplitude_range
    peaks = d.peak_values()

    neurons, positions, amplitudes = [], [], []
    for c, onsets in enumerate(trains):
        for n in np.asarray(onsets, dtype=np.int64):
            target = rng.uniform(lo, hi)
            neurons.append(c)
            positions.append(int(n))
            amplitudes.append(target / peaks[c])
    if neurons:
        events = EventList(np.array(neurons), np.array(positions), np.array(amplitudes))
    else:
        events = EventList.empty()

    w = config.window_length
    per = events.split_windows(w, config.num_windows)
    data = np.concatenate([reconstruct(d, per[j], w) for j in range(config.num_windows)])
    return Signal(data, config.sampling_rate_hz), events


def add_noise(clean: Signal, snr_db: float, seed) -> tuple[Signal, float]:
    """Add white Gaussian noise at a target whole-trace SNR.

    The signal power is the mean squared clean sample over the full trace;
    ``sigma`` solves ``10 log10(power / sigma^2) = snr_db``.  ``snr_db`` of
    ``inf`` returns the clean trace and sigma 0.

    Raises
    ------
    NumericalError
        If the clean trace carries no energy, which leaves the ratio
        undefined.
    """
    x = clean.samples
    power = float(np.mean(x**2))
    if power == 0.0:
        raise NumericalError("undefined SNR: clean signal carries no spike energy")
    if math.isinf(snr_db):
        return clean, 0.0
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noisy = x + sigma * rng.standard_normal(x.size)
    return Signal(noisy, clean.sampling_rate_hz), sigma


def perturb_dictionary(d: Dictionary, target_err: float, seed) -> Dictionary:
    """Add white noise to every template until a target distance is reached.

    One fixed noise direction is drawn per template; a shared scale is then
    bisected until ``error_distance(result, d)`` lands within 0.01 of
    ``target_err``.

    Raises
    ------
    NumericalError
        If the target cannot be bracketed or the bisection stalls.
    """
    if not 0.0 <= target_err < 1.0:
        raise ValueError("target error must lie in [0, 1)")
    if target_err == 0.0:
        return d
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(d.templates.shape)

    def at_scale(s: float) -> Dictionary:
        return Dictionary.from_vectors(d.templates + s * noise)

    hi = 0.1
    for _ in range(80):
        if error_distance(at_scale(hi), d) >= target_err:
            break
        hi *= 2.0
    else:
        raise NumericalError(f"cannot reach perturbation distance {target_err}")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        candidate = at_scale(mid)
        err = error_distance(candidate, d)
        if abs(err - target_err) <= 0.01:
            return candidate
        if err < target_err:
            lo = mid
        else:
            hi = mid
    raise NumericalError("perturbation bisection did not converge")


def simulate(config: SimConfig) -> GroundTruth:
    """Generate a full ground-truthed recording from one seed.

    Seed substreams are spawned per (window, neuron) train, for the
    amplitude draws, and for the noise, so any one piece is reproducible
    in isolation.
    """
    d = config.dictionary
    c = d.num_templates
    l = d.template_length
    w = config.window_length
    rates = config.rates()

    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.num_windows * c + 2)
    amp_rng = np.random.default_rng(children[0])
    noise_seed = children[1]

    trains: list[list[int]] = [[] for _ in range(c)]
    for j in range(config.num_windows):
        for cc in range(c):
            sub = children[2 + j * c + cc]
            local = gen_spike_train(rates[cc], w, l, config.sampling_rate_hz, sub)
            trains[cc].extend(int(n) + j * w for n in local)
    trains_arr = [np.asarray(t, dtype=np.int64) for t in trains]

    clean, events = render(config, trains_arr, amplitude_rng=amp_rng)
    noisy, sigma = add_noise(clean, config.snr_db, noise_seed)
    return GroundTruth(clean=clean, noisy=noisy, events=events, sigma=sigma)


def synthetic_templates(num_templates: int, length: int) -> Dictionary:
    """Deterministic spike-like waveforms: sharp main lobe, slower after-lobe.

    Three archetypes (biphasic, triphasic, wide) cycle with the template
    index; later cycles shift and widen so arbitrarily many distinct shapes
    exist for any length >= 8.  All are unit norm with a positive value at
    the largest-magnitude sample, so negative drawn peaks render as the
    usual downward deflections.
    """
    if length < 8:
        raise ValueError("templates need at least 8 samples")
    x = np.arange(length, dtype=float)

    def lobe(center_frac, width_frac, gain):
        c0 = center_frac * (length - 1)
        w0 = max(0.9, width_frac * length)
        return gain * np.exp(-0.5 * ((x - c0) / w0) ** 2)

    archetypes = (
        ((0.30, 0.032, 1.0), (0.45, 0.080, -0.5)),
        ((0.28, 0.050, -0.55), (0.43, 0.028, 1.0), (0.64, 0.075, -0.3)),
        ((0.24, 0.060, -0.6), (0.36, 0.040, 0.6), (0.48, 0.045, -1.0)),
    )
    rows = []
    for c in range(num_templates):
        cycle, kind = divmod(c, 3)
        shift = 0.07 * cycle
        widen = 1.0 + 0.45 * cycle
        v = sum(lobe(cf + shift, wf * widen, g) for cf, wf, g in archetypes[kind])
        if abs(v.min()) > abs(v.max()):
            v = -v
        rows.append(v / np.linalg.norm(v))
    return Dictionary(np.vstack(rows))


def bundled_dictionary() -> Dictionary:
    """The three 45-sample example templates shipped with the package."""
    payload = resources.files("convsort.data").joinpath("templates_45.json")
    obj = json.loads(payload.read_text())
    return Dictionary(np.asarray(obj["templates"], dtype=float))
