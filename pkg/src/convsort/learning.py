"""Dictionary learning by per-template rank-1 updates.

One learning pass sweeps the templates in index order.  For each template it
gathers, at every event of that neuron, the observed signal patch and the
interference contributed by the other neurons' events (:func:`extract_patches`);
the difference is what this template must explain.  The best rank-1 fit of
that residual matrix (:func:`rank1_update`) gives the refreshed template and
event amplitudes, leaving the code support untouched.  :func:`learn`
alternates sparse coding over all windows with such a pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convops import objective, reconstruct
from .errors import NumericalError
from .pursuit import StoppingRule, comp_encode_all
from .signals import Dictionary, EventList, WindowedSignal, error_distance

__all__ = [
    "PatchSet",
    "LearnConfig",
    "extract_patches",
    "rank1_update",
    "cksvd_pass",
    "learn",
]


@dataclass(frozen=True)
class PatchSet:
    """Per-event patches for a single neuron.

    ``observations`` and ``interference`` are ``(l, S)`` matrices, one column
    per event of the neuron: the raw signal patch at the event, and the sum
    of the *other* neurons' reconstructions over the same samples.  Their
    difference is the residual this neuron's template must explain.
    ``event_indices`` locates each column in the originating event list
    (canonical order).
    """

    neuron: int
    observations: np.ndarray
    interference: np.ndarray
    amplitudes: np.ndarray
    windows: np.ndarray
    positions: np.ndarray
    event_indices: np.ndarray
    template_before: np.ndarray

    @property
    def count(self) -> int:
        return self.observations.shape[1]

    @property
    def residual_matrix(self) -> np.ndarray:
        return self.observations - self.interference


@dataclass(frozen=True)
class LearnConfig:
    """Settings for the alternating code/update loop.

    ``iterations`` sparse-coding + update rounds are always run unless
    ``early_stop`` is set, in which case the loop exits once the change of
    the dictionary distance to its initialization stays below ``tolerance``
    over five consecutive iterations.  ``reseed_unused`` replaces a template
    that coded no events with the strongest unexplained signal patch instead
    of leaving it untouched.
    """

    iterations: int = 20
    stopping: StoppingRule = field(default_factory=StoppingRule)
    tolerance: float = 1e-3
    record_history: bool = True
    early_stop: bool = False
    reseed_unused: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _gather_patches(windows: WindowedSignal, d: Dictionary,
                    neurons: np.ndarray, positions: np.ndarray,
                    amplitudes: np.ndarray, neuron: int) -> PatchSet:
    """Patch extraction over parallel event arrays (zero amplitudes allowed)."""
    l = d.template_length
    w = windows.window_length
    if positions.size and positions.max() >= w * windows.num_windows:
        raise ValueError("event position outside the windowed range")
    win_of = positions // w
    local = positions - win_of * w
    if local.size and local.max() > w - l:
        raise ValueError("event does not fit inside its window")

    obs, interf, amps, wins, poss, idxs = [], [], [], [], [], []
    mine_all = np.flatnonzero(neurons == neuron)
    for j in np.unique(win_of[mine_all]):
        in_window = win_of == j
        others = in_window & (neurons != neuron) & (amplitudes != 0.0)
        other_sum = np.zeros(w)
        for c, n, a in zip(neurons[others], local[others], amplitudes[others]):
            other_sum[n : n + l] += a * d.template(c)
        col = windows.column(j)
        for i in mine_all[win_of[mine_all] == j]:
            n = local[i]
            obs.append(col[n : n + l])
            interf.append(other_sum[n : n + l])
            amps.append(amplitudes[i])
            wins.append(j)
            poss.append(n)
            idxs.append(i)
    if not obs:
        empty = np.zeros((l, 0))
        return PatchSet(neuron, empty, np.array(empty), np.zeros(0),
                        np.zeros(0, np.int64), np.zeros(0, np.int64),
                        np.zeros(0, np.int64), np.array(d.template(neuron)))
    return PatchSet(
        neuron=neuron,
        observations=np.array(obs).T,
        interference=np.array(interf).T,
        amplitudes=np.array(amps),
        windows=np.array(wins, np.int64),
        positions=np.array(poss, np.int64),
        event_indices=np.array(idxs, np.int64),
        template_before=np.array(d.template(neuron)),
    )


def extract_patches(windows: WindowedSignal, d: Dictionary, code: EventList,
                    neuron: int) -> PatchSet:
    """Collect observation and interference patches at a neuron's events.

    ``code`` uses global positions.  Events of other neurons overlapping a
    patch contribute through their current templates and amplitudes; events
    of the neuron itself are never part of the interference.
    """
    if not (0 <= neuron < d.num_templates):
        raise ValueError("neuron id outside the dictionary")
    return _gather_patches(windows, d, code.neurons, code.positions,
                           np.array(code.amplitudes), neuron)


def rank1_update(patches: PatchSet) -> tuple[np.ndarray, np.ndarray]:
    """Best rank-1 fit of the patch residual matrix.

    Returns the refreshed unit-norm template and the new amplitude per
    event (in patch column order).  The sign is chosen to keep the template
    aligned with its previous version, with amplitudes flipped to match.

    Raises
    ------
    NumericalError
        If the patch set is empty or the residual matrix is all zero.
    """
    if patches.count == 0:
        raise NumericalError(f"neuron {patches.neuron}: empty patch set")
    e = patches.residual_matrix
    if not np.any(e):
        raise NumericalError(f"neuron {patches.neuron}: degenerate (zero) patches")
    u, s, vt = np.linalg.svd(e, full_matrices=False)
    template = u[:, 0]
    amplitudes = s[0] * vt[0]
    if float(template @ patches.template_before) < 0.0:
        template = -template
        amplitudes = -amplitudes
    return template, amplitudes


def cksvd_pass(windows: WindowedSignal, d: Dictionary, code: EventList,
               reseed_unused: bool = False) -> tuple[Dictionary, EventList]:
    """Refresh every template once, in index order.

    Each update sees the templates and amplitudes produced by the updates
    before it.  The code support is preserved; only amplitudes change.  A
    neuron without events (or with an all-zero residual) keeps its template,
    unless ``reseed_unused`` replaces it from the worst-explained window.
    """
    neurons = np.array(code.neurons)
    positions = np.array(code.positions)
    amplitudes = np.array(code.amplitudes)
    for c in range(d.num_templates):
        patches = _gather_patches(windows, d, neurons, positions, amplitudes, c)
        try:
            template, new_amps = rank1_update(patches)
        except NumericalError:
            if reseed_unused:
                seed = _strongest_unexplained_patch(
                    windows, d, neurons, positions, amplitudes
                )
                d = d.replace_template(c, seed)
            continue
        d = d.replace_template(c, template)
        amplitudes[patches.event_indices] = new_amps
    keep = amplitudes != 0.0
    updated = EventList(neurons[keep], positions[keep], amplitudes[keep])
    return d, updated


def _strongest_unexplained_patch(windows, d, neurons, positions, amplitudes):
    """Unit-norm segment of the residual with the most energy."""
    l = d.template_length
    w = windows.window_length
    win_of = positions // w
    local = positions - win_of * w
    best, best_energy = None, 0.0
    for j in range(windows.num_windows):
        resid = np.array(windows.column(j))
        m = win_of == j
        for c, n, a in zip(neurons[m], local[m], amplitudes[m]):
            resid[n : n + l] -= a * d.template(c)
        energy = np.convolve(resid**2, np.ones(l), mode="valid")
        k = int(np.argmax(energy))
        if energy[k] > best_energy:
            best_energy = float(energy[k])
            best = resid[k : k + l]
    if best is None:
        raise NumericalError("no residual energy to reseed from")
    return best / np.linalg.norm(best)


def learn(windows: WindowedSignal, d0: Dictionary, config: LearnConfig,
          ) -> tuple[Dictionary, EventList, list[dict]]:
    """Alternate sparse coding and template updates for a fixed iteration count.

    Each round codes every window against the current dictionary, then runs
    one update pass.  History rows record the iteration's reconstruction
    objective and the dictionary's distance to ``d0``.

    Raises
    ------
    NumericalError
        If a coding round produces no events at all (threshold too high for
        the signal, or a degenerate dictionary).
    """
    d = d0
    code = EventList.empty()
    history: list[dict] = []
    distances: list[float] = []
    for t in range(1, config.iterations + 1):
        code = comp_encode_all(windows, d, config.stopping, n_jobs=config.n_jobs)
        if len(code) == 0:
            raise NumericalError(
                f"iteration {t}: coding produced no events; "
                "the residual threshold may exceed the signal energy"
            )
        d, code = cksvd_pass(windows, d, code, reseed_unused=config.reseed_unused)
        dist = error_distance(d, d0)
        distances.append(dist)
        if config.record_history:
            history.append(
                {
                    "iteration": t,
                    "objective": objective(windows, d, code),
                    "error_distance_to_init": dist,
                }
            )
        if config.early_stop and len(distances) >= 6:
            recent = np.abs(np.diff(distances[-6:]))
            if np.all(recent < config.tolerance):
                break
    return d, code, history
