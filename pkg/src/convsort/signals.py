"""Core data types: voltage traces, waveform templates, sparse event codes.

The generative model throughout the package is a sum of time-shifted, scaled
waveform templates plus additive noise.  A recording is held as a
:class:`Signal`, the (unit-norm) waveforms as a :class:`Dictionary`, and the
spike code as an :class:`EventList` of ``(neuron, position, amplitude)``
triples.  Long traces are cut into non-overlapping windows
(:class:`WindowedSignal`) that are coded independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Signal",
    "Dictionary",
    "EventList",
    "WindowedSignal",
    "window",
    "error_distance",
    "normalize_template",
]

UNIT_NORM_TOL = 1e-9


def _readonly(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Signal:
    """A sampled single-channel voltage trace.

    Parameters
    ----------
    samples : ndarray
        Sample values in mV. Must all be finite.
    sampling_rate_hz : float
        Sampling rate, > 0.
    """

    samples: np.ndarray
    sampling_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "samples", _readonly(np.atleast_1d(self.samples)))
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("signal must be a nonempty 1-d sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal contains non-finite samples")
        if not self.sampling_rate_hz > 0:
            raise ValueError("sampling_rate_hz must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sampling_rate_hz


def normalize_template(v) -> np.ndarray:
    """Scale a vector to unit l2 norm.

    Raises
    ------
    ValueError
        If the vector has (numerically) zero norm and no direction.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("template must be a 1-d vector of length >= 2")
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("degenerate template: zero or non-finite norm")
    return v / norm


@dataclass(frozen=True)
class Dictionary:
    """An ordered bank of unit-norm waveform templates of common length.

    ``templates`` is a ``(num_templates, template_length)`` array whose rows
    each have unit l2 norm (within ``1e-9``).  Rows index neurons, 0-based.
    """

    templates: np.ndarray

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.templates, dtype=float))
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 2:
            raise ValueError("dictionary must be (C, l) with C >= 1 and l >= 2")
        norms = np.linalg.norm(t, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("all templates must have unit l2 norm (within 1e-9)")
        object.__setattr__(self, "templates", _readonly(t))

    @classmethod
    def from_vectors(cls, vectors) -> "Dictionary":
        """Build a dictionary by normalizing each row of ``vectors``."""
        rows = [normalize_template(v) for v in np.atleast_2d(np.asarray(vectors, float))]
        return cls(np.vstack(rows))

    @property
    def num_templates(self) -> int:
        return self.templates.shape[0]

    @property
    def template_length(self) -> int:
        return self.templates.shape[1]

    def template(self, c: int) -> np.ndarray:
        return self.templates[c]

    def peak_values(self) -> np.ndarray:
        """Signed value of each template at its largest-magnitude sample."""
        idx = np.argmax(np.abs(self.templates), axis=1)
        return self.templates[np.arange(self.num_templates), idx]

    def replace_template(self, c: int, values: np.ndarray) -> "Dictionary":
        t = np.array(self.templates)
        t[c] = values
        return Dictionary(t)


@dataclass(frozen=True)
class EventList:
    """Sparse spike code: parallel arrays of neuron id, position, amplitude.

    Events are canonicalized to (neuron, position) order on construction.
    Neuron ids are 0-based; positions are 0-based sample indices of the
    event onset (the first sample the template occupies).  Amplitudes are
    the code coefficients, nonzero by construction.
    """

    neurons: np.ndarray
    positions: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.neurons, dtype=np.int64).ravel()
        n = np.asarray(self.positions, dtype=np.int64).ravel()
        x = np.asarray(self.amplitudes, dtype=float).ravel()
        if not (c.size == n.size == x.size):
            raise ValueError("neurons, positions, amplitudes must have equal length")
        if c.size:
            if c.min() < 0 or n.min() < 0:
                raise ValueError("neuron ids and positions must be non-negative")
            if not np.all(np.isfinite(x)) or np.any(x == 0.0):
                raise ValueError("amplitudes must be finite and nonzero")
            order = np.lexsort((n, c))
            c, n, x = c[order], n[order], x[order]
            same = (np.diff(c) == 0) & (np.diff(n) == 0)
            if np.any(same):
                raise ValueError("duplicate (neuron, position) event")
        object.__setattr__(self, "neurons", _readonly(c, np.int64))
        object.__setattr__(self, "positions", _readonly(n, np.int64))
        object.__setattr__(self, "amplitudes", _readonly(x))

    @classmethod
    def empty(cls) -> "EventList":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))

    @classmethod
    def concatenate(cls, parts) -> "EventList":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.neurons for p in parts]),
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.amplitudes for p in parts]),
        )

    def __len__(self) -> int:
        return self.neurons.size

    def shifted(self, offset: int) -> "EventList":
        """Same events with all positions moved by ``offset`` samples."""
        if len(self) == 0:
            return self
        return EventList(self.neurons, self.positions + int(offset), self.amplitudes)

    def select(self, mask: np.ndarray) -> "EventList":
        return EventList(self.neurons[mask], self.positions[mask], self.amplitudes[mask])

    def for_neuron(self, c: int) -> "EventList":
        return self.select(self.neurons == c)

    def excluding_neuron(self, c: int) -> "EventList":
        return self.select(self.neurons != c)

    def with_amplitudes(self, amplitudes: np.ndarray) -> "EventList":
        """Same support with replaced amplitudes (entries of value 0 are dropped)."""
        x = np.asarray(amplitudes, dtype=float).ravel()
        if x.size != len(self):
            raise ValueError("amplitude vector does not match event count")
        keep = x != 0.0
        return EventList(self.neurons[keep], self.positions[keep], x[keep])

    def split_windows(self, window_length: int, num_windows: int) -> list["EventList"]:
        """Partition into per-window lists with window-local positions.

        Events at or past ``window_length * num_windows`` are rejected.
        """
        if len(self) and self.positions.max() >= window_length * num_windows:
            raise ValueError("event position outside the windowed range")
        j = self.positions // window_length
        local = self.positions - j * window_length
        out = []
        for k in range(num_windows):
            m = j == k
            out.append(EventList(self.neurons[m], local[m], self.amplitudes[m]))
        return out

    def counts_per_neuron(self, num_neurons: int) -> np.ndarray:
        return np.bincount(self.neurons, minlength=num_neurons)


@dataclass(frozen=True)
class WindowedSignal:
    """A trace cut into ``num_windows`` non-overlapping windows.

    ``data`` has shape ``(num_windows, window_length)``; row ``j`` holds
    samples ``[j*W, (j+1)*W)`` of the source trace.
    """

    data: np.ndarray
    sampling_rate_hz: float = field(default=1.0)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("windowed signal must be a (J, W) array")
        object.__setattr__(self, "data", _readonly(d))

    @property
    def num_windows(self) -> int:
        return self.data.shape[0]

    @property
    def window_length(self) -> int:
        return self.data.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.data[j]

    def concatenated(self) -> np.ndarray:
        return self.data.reshape(-1)


def window(signal: Signal, window_length: int) -> WindowedSignal:
    """Cut a signal into non-overlapping windows of ``window_length`` samples.

    The number of windows is ``floor(N / W)``; trailing samples that do not
    fill a whole window are discarded.
    """
    w = int(window_length)
    n = len(signal)
    if w <= 0 or w > n:
        raise ValueError(f"invalid window length {w} for a signal of {n} samples")
    j = n // w
    data = signal.samples[: j * w].reshape(j, w)
    return WindowedSignal(data, signal.sampling_rate_hz)


def error_distance(d1: Dictionary, d2: Dictionary) -> float:
    """Worst-template angular distance, ``max_c sqrt(1 - <h_c, g_c>^2)``.

    Templates are compared index to index; callers are responsible for
    aligning columns first (see :func:`convsort.metrics.assign_clusters`).
    The metric ignores sign flips and lies in [0, 1].
    """
    if d1.num_templates != d2.num_templates or d1.template_length != d2.template_length:
        raise ValueError("dictionaries differ in template count or length")
    dots = np.einsum("ij,ij->i", d1.templates, d2.templates)
    # rounding can push dots marginally past 1; clamp before the sqrt
    gaps = np.clip(1.0 - dots**2, 0.0, None)
    return float(np.sqrt(gaps.max()))
