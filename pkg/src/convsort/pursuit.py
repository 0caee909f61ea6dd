"""Greedy convolutional sparse coding.

:func:`comp_encode` is orthogonal matching pursuit specialized to the shift
dictionary: atom selection scans a bank of cross-correlations instead of a
dense projection, and the least-squares re-fit over the selected support is
maintained through a rank-1 Cholesky extension of the Gram matrix, whose
entries come from :class:`convsort.convops.ShiftGram` lookups.
:func:`cmp_encode` is the matching-pursuit variant (no re-projection, atoms
may repeat).  Both code one window at a time; :func:`comp_encode_all` maps a
windowed signal and globalizes positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .convops import Correlator, ShiftGram, correlate_dictionary, reconstruct
from .errors import IllConditionedSupportError, NoSelectableAtomError
from .signals import Dictionary, EventList, WindowedSignal

__all__ = [
    "StoppingRule",
    "SolverState",
    "select_atom",
    "update_least_squares",
    "comp_encode",
    "comp_encode_all",
    "cmp_encode",
]

# reject an atom whose squared Cholesky pivot (1 - ||w||^2) falls below this;
# for unit-norm atoms that flags a candidate nearly inside the selected span
PIVOT_SQ_TOL = 1e-10

# correlations at or below this scale count as "all zero" and end selection
_FLOOR_REL = 1e-12


@dataclass(frozen=True)
class StoppingRule:
    """Termination criteria for a pursuit run.

    Either ``max_events`` (sparsity cap) or ``residual_threshold`` (l2 norm
    of the residual) must be finite.  ``from_noise_level`` builds the usual
    calibration: stop once the residual drops to the expected norm of pure
    noise, ``sigma * sqrt(W)``.
    """

    max_events: int | None = None
    residual_threshold: float = 0.0

    def __post_init__(self):
        if self.max_events is not None and self.max_events < 1:
            raise ValueError("max_events must be >= 1 when given")
        if self.residual_threshold < 0:
            raise ValueError("residual_threshold must be non-negative")
        if self.max_events is None and not math.isfinite(self.residual_threshold):
            raise ValueError("at least one stopping criterion must be finite")

    @classmethod
    def from_noise_level(cls, sigma: float, window_length: int,
                         max_events: int | None = None) -> "StoppingRule":
        return cls(max_events=max_events,
                   residual_threshold=float(sigma) * math.sqrt(window_length))


@dataclass(frozen=True)
class SolverState:
    """Support, Cholesky factor, and coefficients of one pursuit in progress.

    The residual is derived on demand from the target and the current
    coefficients, so a state is cheap to carry and immutable.
    """

    target: np.ndarray
    dictionary: Dictionary
    atoms: tuple = ()
    chol: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    target_dots: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def initial(cls, target: np.ndarray, dictionary: Dictionary) -> "SolverState":
        y = np.asarray(target, dtype=float)
        if y.size < dictionary.template_length:
            raise ValueError("window shorter than template")
        return cls(target=y, dictionary=dictionary)

    @property
    def residual(self) -> np.ndarray:
        if not self.atoms:
            return np.array(self.target)
        cs, ns = zip(*self.atoms)
        code = EventList(np.array(cs), np.array(ns), self.coefficients)
        return self.target - reconstruct(self.dictionary, code, self.target.size)

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))

    def to_events(self) -> EventList:
        if not self.atoms:
            return EventList.empty()
        cs, ns = zip(*self.atoms)
        return EventList(np.array(cs), np.array(ns), self.coefficients).select(
            np.asarray(self.coefficients) != 0.0
        )


def select_atom(state: SolverState, d: Dictionary | None = None,
                exclude=()) -> tuple[int, int]:
    """Pick the (neuron, shift) whose correlation with the residual is largest.

    Ties break toward the smallest neuron id, then the smallest shift.
    Atoms already in the state (and any in ``exclude``) are skipped.

    Raises
    ------
    NoSelectableAtomError
        If every admissible correlation is zero (to rounding).
    """
    d = state.dictionary if d is None else d
    profile = correlate_dictionary(d, state.residual)
    return _masked_argmax(
        profile,
        set(state.atoms) | set(exclude),
        _selection_floor(state.target),
    )


def _selection_floor(target: np.ndarray) -> float:
    return _FLOOR_REL * max(1.0, float(np.linalg.norm(target)))


def _masked_argmax(profile: np.ndarray, skip, floor: float) -> tuple[int, int]:
    ab = np.abs(profile)
    num_shifts = profile.shape[1]
    for c, n in skip:
        if 0 <= c < profile.shape[0] and 0 <= n < num_shifts:
            ab[c, n] = -1.0
    q = int(np.argmax(ab))
    c, n = divmod(q, num_shifts)
    if ab[c, n] <= floor:
        raise NoSelectableAtomError("all candidate correlations are zero")
    return c, n


def update_least_squares(state: SolverState, new_atom: tuple[int, int],
                         gram: ShiftGram | None = None) -> SolverState:
    """Add one atom to the support and re-fit all coefficients.

    Extends the Cholesky factor of the support Gram matrix by one row and
    solves the normal equations through it, so the cost is quadratic in the
    support size rather than cubic.

    Raises
    ------
    ValueError
        If the atom is already in the support (duplicate atom).
    IllConditionedSupportError
        If the extended Gram matrix is numerically singular.
    """
    c, n = int(new_atom[0]), int(new_atom[1])
    if (c, n) in state.atoms:
        raise ValueError(f"duplicate atom {(c, n)}")
    d = state.dictionary
    l = d.template_length
    if not (0 <= c < d.num_templates and 0 <= n <= state.target.size - l):
        raise ValueError(f"atom {(c, n)} out of range")
    gram = ShiftGram(d) if gram is None else gram

    t = len(state.atoms)
    chol = np.zeros((t + 1, t + 1))
    if t:
        cs = np.fromiter((a[0] for a in state.atoms), np.int64, t)
        ns = np.fromiter((a[1] for a in state.atoms), np.int64, t)
        g = gram.column(cs, ns, c, n)
        w = solve_triangular(state.chol, g, lower=True, check_finite=False)
        pivot_sq = 1.0 - float(w @ w)
        if pivot_sq < PIVOT_SQ_TOL:
            raise IllConditionedSupportError(
                f"atom {(c, n)} is numerically inside the selected span"
            )
        chol[:t, :t] = state.chol
        chol[t, :t] = w
        chol[t, t] = math.sqrt(pivot_sq)
    else:
        chol[0, 0] = 1.0

    dots = np.append(state.target_dots, float(state.target[n:n + l] @ d.template(c)))
    z = solve_triangular(chol, dots, lower=True, check_finite=False)
    coeffs = solve_triangular(chol, z, lower=True, trans=1, check_finite=False)
    return SolverState(
        target=state.target,
        dictionary=d,
        atoms=state.atoms + ((c, n),),
        chol=chol,
        coefficients=coeffs,
        target_dots=dots,
    )


def comp_encode(target: np.ndarray, d: Dictionary, stop: StoppingRule,
                correlator: Correlator | None = None,
                gram: ShiftGram | None = None) -> EventList:
    """Code one window by convolutional orthogonal matching pursuit.

    Runs select/re-fit rounds until the residual norm reaches
    ``stop.residual_threshold``, the support reaches ``stop.max_events``, or
    no atom has a nonzero correlation left.  An atom whose addition would be
    numerically singular is masked and selection retried.  Positions in the
    returned events are local to the window.

    For repeated calls at one window length, pass a shared
    :class:`Correlator` and :class:`ShiftGram`.
    """
    y = np.asarray(target, dtype=float)
    correlator = Correlator(d, y.size, kernel="auto") if correlator is None else correlator
    gram = ShiftGram(d) if gram is None else gram
    l = d.template_length
    num_shifts = y.size - l + 1
    if correlator.num_shifts != num_shifts:
        raise ValueError("correlator does not match the window length")

    base_profile = correlator.profile(y)
    profile = np.array(base_profile)
    flat = profile.reshape(-1)
    table = gram.table

    floor = _selection_floor(y)
    y_norm_sq = float(y @ y)
    resid_norm_sq = y_norm_sq
    thresh_sq = stop.residual_threshold**2
    budget = stop.max_events if stop.max_events is not None else num_shifts * d.num_templates

    cap = 64
    chol = np.zeros((cap, cap))
    dots = np.zeros(cap)
    cs = np.zeros(cap, np.int64)
    ns = np.zeros(cap, np.int64)
    coeffs = np.zeros(0)
    excluded: list[int] = []
    t = 0

    while resid_norm_sq > thresh_sq and t < budget:
        ab = np.abs(profile)
        if excluded:
            ab.reshape(-1)[excluded] = -1.0
        q = int(np.argmax(ab))
        if ab.reshape(-1)[q] <= floor:
            break
        c, n = divmod(q, num_shifts)

        if t:
            g = gram.column(cs[:t], ns[:t], c, n)
            w = solve_triangular(chol[:t, :t], g, lower=True, check_finite=False)
            pivot_sq = 1.0 - float(w @ w)
            if pivot_sq < PIVOT_SQ_TOL:
                excluded.append(q)  # span only grows, so the mask can persist
                continue
        if t == cap:
            cap *= 2
            chol = _grow_square(chol, cap)
            dots = np.resize(dots, cap)
            cs = np.resize(cs, cap)
            ns = np.resize(ns, cap)
        if t:
            chol[t, :t] = w
            chol[t, t] = math.sqrt(pivot_sq)
        else:
            chol[0, 0] = 1.0
        cs[t], ns[t] = c, n
        dots[t] = base_profile[c, n]
        excluded.append(q)
        t += 1

        z = solve_triangular(chol[:t, :t], dots[:t], lower=True, check_finite=False)
        new_coeffs = solve_triangular(chol[:t, :t], z, lower=True, trans=1,
                                      check_finite=False)
        delta = np.array(new_coeffs)
        delta[: t - 1] -= coeffs
        coeffs = new_coeffs
        for i in range(t):
            dx = delta[i]
            if dx != 0.0:
                _subtract_column(profile, flat, table, cs[i], ns[i], dx, l, num_shifts)
        resid_norm_sq = max(0.0, y_norm_sq - float(dots[:t] @ coeffs))

    if t == 0:
        return EventList.empty()
    return EventList(cs[:t], ns[:t], coeffs).select(coeffs != 0.0)


def _grow_square(a: np.ndarray, cap: int) -> np.ndarray:
    out = np.zeros((cap, cap))
    out[: a.shape[0], : a.shape[1]] = a
    return out


def _subtract_column(profile, flat, table, c, n, x, l, num_shifts):
    """profile -= x * (correlation column of atom (c, n)), clipped to range.

    Profile entry (c', k) changes by x * <shift(c', k), shift(c, n)>, which
    is table[c, c', (k - n) + l - 1], increasing in k.
    """
    lo = n - l + 1
    hi = n + l
    a = 0
    if lo < 0:
        a = -lo
        lo = 0
    if hi > num_shifts:
        hi = num_shifts
    seg = table[c, :, a : a + (hi - lo)]
    profile[:, lo:hi] -= x * seg


def cmp_encode(target: np.ndarray, d: Dictionary, stop: StoppingRule,
               correlator: Correlator | None = None,
               gram: ShiftGram | None = None) -> EventList:
    """Code one window by convolutional matching pursuit.

    Each round subtracts the best-correlated atom scaled by its correlation,
    with no re-projection onto the selected span; the same atom may be picked
    again, and repeated picks are summed into a single event amplitude.
    ``stop.max_events`` bounds the number of distinct atoms.
    """
    y = np.asarray(target, dtype=float)
    correlator = Correlator(d, y.size, kernel="auto") if correlator is None else correlator
    gram = ShiftGram(d) if gram is None else gram
    l = d.template_length
    num_shifts = y.size - l + 1

    residual = np.array(y)
    profile = correlator.profile(y)
    flat = profile.reshape(-1)
    floor = _selection_floor(y)
    budget = stop.max_events if stop.max_events is not None else math.inf
    amplitudes: dict[tuple[int, int], float] = {}

    while float(residual @ residual) > stop.residual_threshold**2:
        q = int(np.argmax(np.abs(profile)))
        c, n = divmod(q, num_shifts)
        value = profile[c, n]
        if abs(value) <= floor:
            break
        if (c, n) not in amplitudes and len(amplitudes) >= budget:
            break
        amplitudes[(c, n)] = amplitudes.get((c, n), 0.0) + value
        residual[n : n + l] -= value * d.template(c)
        _subtract_column(profile, flat, gram.table, c, n, value, l, num_shifts)

    if not amplitudes:
        return EventList.empty()
    atoms = list(amplitudes)
    values = np.array([amplitudes[a] for a in atoms])
    cs = np.array([a[0] for a in atoms], np.int64)
    ns = np.array([a[1] for a in atoms], np.int64)
    return EventList(cs, ns, values).select(values != 0.0)


def comp_encode_all(windows: WindowedSignal, d: Dictionary, stop: StoppingRule,
                    n_jobs: int = 1, kernel: str = "auto") -> EventList:
    """Code every window independently and merge events at global positions.

    Window j's local position p becomes ``j * window_length + p``.  Windows
    share the immutable dictionary, so they may be dispatched to a worker
    pool (``n_jobs``); outputs are merged in window order either way.
    """
    correlator = Correlator(d, windows.window_length, kernel=kernel)
    gram = ShiftGram(d)
    w = windows.window_length

    def encode(j):
        try:
            return comp_encode(windows.column(j), d, stop, correlator, gram)
        except NoSelectableAtomError as exc:  # pragma: no cover - defensive
            raise NoSelectableAtomError(f"window {j}: {exc}") from exc

    if n_jobs == 1:
        parts = [encode(j) for j in range(windows.num_windows)]
    else:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=n_jobs)(
            delayed(encode)(j) for j in range(windows.num_windows)
        )
    return EventList.concatenate(
        part.shifted(j * w) for j, part in enumerate(parts)
    )
