"""Matrix-free convolutional operators.

The shift dictionary (every integer shift of every template, zero-padded to
window length) is never materialized.  Applying its transpose to a residual
is a bank of cross-correlations; applying it to a code is a sum of shifted,
scaled templates.  :class:`Correlator` packages the correlation with a choice
of time-domain or FFT kernel, and :class:`ShiftGram` tabulates inner products
between shifted templates so solvers can build Gram entries in O(1).
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .signals import Dictionary, EventList

__all__ = [
    "cross_correlate",
    "correlate_dictionary",
    "Correlator",
    "ShiftGram",
    "reconstruct",
    "inner_product_shifted",
    "objective",
]

# cost crossover between the direct and FFT kernels (empirical, see Correlator)
_DIRECT_COST_LIMIT = 1 << 18


def cross_correlate(template: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Valid-mode cross-correlation ``out[k] = sum_m h[m] * r[k+m]``.

    ``r`` has length W and ``template`` length l <= W; the result has length
    ``W - l + 1``, one entry per admissible shift.
    """
    h = np.asarray(template, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.size < h.size:
        raise ValueError("window shorter than template")
    return np.correlate(r, h, mode="valid")


class Correlator:
    """Cross-correlates one residual against every template of a dictionary.

    Parameters
    ----------
    dictionary : Dictionary
    window_length : int
        Length W of the residuals this instance will see.
    kernel : {"auto", "direct", "fft"}
        "direct" runs time-domain correlation per template; "fft" shares one
        forward transform of the residual across templates.  "auto" picks
        "fft" once the direct cost ``W * l`` outgrows the transform cost,
        or when templates are long (l > 64).
    """

    def __init__(self, dictionary: Dictionary, window_length: int, kernel: str = "auto"):
        w = int(window_length)
        l = dictionary.template_length
        if w < l:
            raise ValueError("window shorter than template")
        if kernel == "auto":
            kernel = "fft" if (l > 64 or w * l > _DIRECT_COST_LIMIT) else "direct"
        if kernel not in ("direct", "fft"):
            raise ValueError(f"unknown correlation kernel {kernel!r}")
        self.dictionary = dictionary
        self.window_length = w
        self.num_shifts = w - l + 1
        self.kernel = kernel
        if kernel == "fft":
            # circular correlation at length >= W leaves lags 0..W-l alias-free
            self._nfft = sfft.next_fast_len(w)
            self._template_ffts = np.conj(
                sfft.rfft(dictionary.templates, n=self._nfft, axis=1)
            )

    def profile(self, r: np.ndarray) -> np.ndarray:
        """Correlation profile, shape ``(C, W - l + 1)``; row c is ``h_c`` vs ``r``."""
        r = np.asarray(r, dtype=float)
        if r.size != self.window_length:
            raise ValueError("residual length does not match the correlator")
        if self.kernel == "direct":
            t = self.dictionary.templates
            out = np.empty((t.shape[0], self.num_shifts))
            for c in range(t.shape[0]):
                out[c] = np.correlate(r, t[c], mode="valid")
            return out
        rf = sfft.rfft(r, n=self._nfft)
        full = sfft.irfft(self._template_ffts * rf[None, :], n=self._nfft, axis=1)
        return full[:, : self.num_shifts]


def correlate_dictionary(
    d: Dictionary, r: np.ndarray, kernel: str = "auto"
) -> np.ndarray:
    """All-template correlation profile of ``r``; equals ``H^T r`` row-wise.

    Returns a ``(C, W - l + 1)`` array; entry ``(c, k)`` is the inner product
    of ``r`` with template c shifted to position k.
    """
    r = np.asarray(r, dtype=float)
    return Correlator(d, r.size, kernel=kernel).profile(r)


def reconstruct(d: Dictionary, code: EventList, window_length: int) -> np.ndarray:
    """Sum of shifted, scaled templates over one window; equals ``H X_j``.

    Every event position must satisfy ``position <= W - l`` so the template
    fits inside the window.
    """
    w = int(window_length)
    l = d.template_length
    out = np.zeros(w)
    if len(code) == 0:
        return out
    if code.positions.max() > w - l:
        raise ValueError("event does not fit inside the window")
    if code.neurons.max() >= d.num_templates:
        raise ValueError("event neuron id outside the dictionary")
    t = d.templates
    for c, n, x in zip(code.neurons, code.positions, code.amplitudes):
        out[n : n + l] += x * t[c]
    return out


def inner_product_shifted(d: Dictionary, c1: int, n1: int, c2: int, n2: int) -> float:
    """Inner product of template ``c1`` at shift ``n1`` with ``c2`` at ``n2``.

    Zero whenever the shifted supports are disjoint (``|n1 - n2| >= l``).
    """
    l = d.template_length
    delta = int(n2) - int(n1)
    if abs(delta) >= l:
        return 0.0
    h1 = d.templates[c1]
    h2 = d.templates[c2]
    if delta >= 0:
        return float(np.dot(h1[delta:], h2[: l - delta]))
    return float(np.dot(h1[: l + delta], h2[-delta:]))


class ShiftGram:
    """Inner products between all shifted template pairs, tabulated by lag.

    ``table[c1, c2, delta + l - 1]`` equals
    ``inner_product_shifted(d, c1, n, c2, n + delta)`` for any ``n`` and
    ``delta`` in ``[-(l-1), l-1]``.
    """

    def __init__(self, dictionary: Dictionary):
        t = dictionary.templates
        c, l = t.shape
        table = np.empty((c, c, 2 * l - 1))
        for i in range(c):
            for j in range(c):
                # full correlation: index (delta + l - 1) pairs h_i[m] with h_j[m - delta]
                table[i, j] = np.correlate(t[i], t[j], mode="full")
        self.table = table
        self.template_length = l
        self.num_templates = c

    def column(self, cs: np.ndarray, ns: np.ndarray, c_new: int, n_new: int) -> np.ndarray:
        """Gram entries of a new shifted atom against existing atoms."""
        delta = (np.asarray(ns) - int(n_new)) + (self.template_length - 1)
        ok = (delta >= 0) & (delta < 2 * self.template_length - 1)
        out = np.zeros(len(delta))
        if np.any(ok):
            out[ok] = self.table[int(c_new), np.asarray(cs)[ok], delta[ok]]
        return out

    def profile_segment(self, c: int, lag_start: int, lag_stop: int) -> np.ndarray:
        """Rows c' of ``<shift(c', n + lag), shift(c, n)>`` for lags in range.

        Lags index ``k - n`` shifted by ``l - 1``, so the segment aligns with
        a correlation profile slice that runs forward in k.
        """
        return self.table[int(c), :, lag_start:lag_stop]

    def max_coherence(self) -> float:
        """Largest |inner product| over distinct shifted-atom pairs."""
        l = self.template_length
        best = 0.0
        for i in range(self.num_templates):
            for j in range(self.num_templates):
                row = np.abs(self.table[i, j]).copy()
                if i == j:
                    row[l - 1] = 0.0  # exclude the atom with itself
                best = max(best, float(row.max()))
        return best


def objective(windows, d: Dictionary, code: EventList) -> float:
    """Squared Frobenius reconstruction error over all windows.

    ``windows`` is a :class:`convsort.signals.WindowedSignal`; ``code`` uses
    global positions.
    """
    per = code.split_windows(windows.window_length, windows.num_windows)
    total = 0.0
    for j in range(windows.num_windows):
        resid = windows.column(j) - reconstruct(d, per[j], windows.window_length)
        total += float(resid @ resid)
    return total
