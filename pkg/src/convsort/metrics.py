"""Sorting quality metrics and the threshold/PCA/K-means baseline sorter.

Detected events are matched one-to-one to ground truth per neuron within a
sample tolerance; the two error figures are the fraction of true spikes left
unmatched (true miss) and the fraction of detections matching nothing (false
alarm).  The baseline pipeline detects threshold crossings, projects aligned
snippets onto principal components, clusters with K-means, and maps clusters
to neurons by the permutation with the smallest summed error.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .signals import Dictionary, EventList, Signal

__all__ = [
    "SortReport",
    "match_spikes",
    "rates",
    "threshold_sweep",
    "detect_threshold_crossings",
    "extract_snippets",
    "pca_project",
    "kmeans_cluster",
    "assign_clusters",
    "baseline_sort",
]

POOLED_ID = -1


@dataclass(frozen=True)
class SortReport:
    """Per-neuron miss/false-alarm rates plus the matching behind them.

    ``per_neuron`` maps neuron id to ``(true_miss, false_alarm)``;
    ``matches`` maps neuron id to a list of matched
    ``(true_position, detected_position)`` pairs; ``counts`` maps neuron id
    to ``(num_true, num_detected, num_matched)``.  ``threshold`` echoes the
    amplitude cut the detections were filtered at, if any.
    """

    per_neuron: dict
    matches: dict
    counts: dict
    threshold: float = 0.0

    @property
    def pooled(self) -> tuple[float, float]:
        """Rates with all neurons' counts pooled."""
        total_true = sum(t for t, _, _ in self.counts.values())
        total_det = sum(d for _, d, _ in self.counts.values())
        total_matched = sum(m for _, _, m in self.counts.values())
        miss = (total_true - total_matched) / total_true if total_true else 0.0
        fa = (total_det - total_matched) / total_det if total_det else 0.0
        return miss, fa

    @property
    def summed_error(self) -> float:
        """Sum of (miss + false alarm) over neurons; the sweep objective."""
        return float(sum(m + f for m, f in self.per_neuron.values()))


def match_spikes(truth: EventList, detected: EventList, tol_samples: int) -> dict:
    """Greedy one-to-one matching per neuron, nearest pairs first.

    Candidate pairs within ``tol_samples`` are taken in order of |position
    difference| (ties: earlier true event, then earlier detection); a pair is
    accepted only if both endpoints are still unmatched.  Returns a dict
    mapping neuron id to a list of (true_position, detected_position) pairs.
    """
    if tol_samples < 0:
        raise ValueError("tolerance must be non-negative")
    out: dict[int, list[tuple[int, int]]] = {}
    neurons = sorted(set(truth.neurons.tolist()) | set(detected.neurons.tolist()))
    for c in neurons:
        t_pos = truth.for_neuron(c).positions
        d_pos = detected.for_neuron(c).positions
        pairs = []
        start = 0
        for i, tp in enumerate(t_pos):
            while start < d_pos.size and d_pos[start] < tp - tol_samples:
                start += 1
            k = start
            while k < d_pos.size and d_pos[k] <= tp + tol_samples:
                pairs.append((abs(int(d_pos[k]) - int(tp)), int(tp), int(d_pos[k]), i, k))
                k += 1
        pairs.sort()
        used_t: set[int] = set()
        used_d: set[int] = set()
        accepted = []
        for _, tp, dp, i, k in pairs:
            if i in used_t or k in used_d:
                continue
            used_t.add(i)
            used_d.add(k)
            accepted.append((tp, dp))
        out[c] = sorted(accepted)
    return out


def rates(matching: dict, truth: EventList, detected: EventList,
          threshold: float = 0.0) -> SortReport:
    """Turn a matching into per-neuron miss and false-alarm rates.

    Empty denominators give rate 0 (no true spikes means nothing was missed;
    no detections means nothing was falsely reported).
    """
    per_neuron = {}
    counts = {}
    neurons = sorted(set(truth.neurons.tolist()) | set(detected.neurons.tolist()))
    for c in neurons:
        n_true = int(np.sum(truth.neurons == c))
        n_det = int(np.sum(detected.neurons == c))
        n_match = len(matching.get(c, []))
        miss = (n_true - n_match) / n_true if n_true else 0.0
        fa = (n_det - n_match) / n_det if n_det else 0.0
        per_neuron[c] = (miss, fa)
        counts[c] = (n_true, n_det, n_match)
    return SortReport(per_neuron=per_neuron, matches=dict(matching),
                      counts=counts, threshold=threshold)


def threshold_sweep(truth: EventList, detected: EventList, dictionary: Dictionary,
                    thresholds, tol_samples: int) -> list[dict]:
    """Rates as a function of an amplitude threshold on detections.

    A detection survives threshold ``t`` when its rendered peak magnitude
    ``|amplitude * template_peak|`` is at least ``t``.  Returns one row per
    (threshold, neuron) plus a pooled row (neuron_id -1) per threshold.
    """
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    peaks = np.abs(dictionary.peak_values())
    rendered = np.abs(detected.amplitudes) * peaks[detected.neurons] if len(detected) else np.zeros(0)
    rows = []
    for theta in thresholds:
        kept = detected.select(rendered >= theta) if len(detected) else detected
        report = rates(match_spikes(truth, kept, tol_samples), truth, kept, threshold=theta)
        for c in sorted(report.per_neuron):
            miss, fa = report.per_neuron[c]
            rows.append(
                {"neuron_id": int(c), "threshold": float(theta),
                 "true_miss": miss, "false_alarm": fa}
            )
        miss, fa = report.pooled
        rows.append(
            {"neuron_id": POOLED_ID, "threshold": float(theta),
             "true_miss": miss, "false_alarm": fa}
        )
    return rows


def detect_threshold_crossings(signal: Signal, threshold: float,
                               template_length: int) -> np.ndarray:
    """Positions of putative spikes: one local |extremum| per crossing.

    Scans for samples where |signal| exceeds the threshold, aligns each hit
    to the largest-|.| sample within the following template length, and
    suppresses further crossings within one template length of the first.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    x = signal.samples
    above = np.flatnonzero(np.abs(x) > threshold)
    out = []
    next_ok = 0
    for i in above:
        if i < next_ok:
            continue
        seg = np.abs(x[i : i + template_length])
        out.append(int(i + np.argmax(seg)))
        next_ok = i + template_length
    return np.asarray(out, dtype=np.int64)


def extract_snippets(signal: Signal, positions: np.ndarray,
                     template_length: int) -> tuple[np.ndarray, np.ndarray]:
    """Snippets of one template length centered on each position.

    Positions whose snippet would run off either end are dropped; returns
    the kept positions and the (count, template_length) snippet matrix.
    """
    x = signal.samples
    half = template_length // 2
    kept, rows = [], []
    for p in np.asarray(positions, dtype=np.int64):
        start = p - half
        if start < 0 or start + template_length > x.size:
            continue
        kept.append(int(p))
        rows.append(x[start : start + template_length])
    if not rows:
        return np.zeros(0, np.int64), np.zeros((0, template_length))
    return np.asarray(kept, np.int64), np.vstack(rows)


def pca_project(snippets: np.ndarray, num_components: int) -> tuple[np.ndarray, float]:
    """Scores of centered snippets on their top principal directions.

    Returns the (count, p) score matrix and the fraction of total variance
    the p components capture.  If fewer snippets than components exist, the
    component count shrinks to the snippet count.
    """
    s = np.asarray(snippets, dtype=float)
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValueError("need a nonempty snippet matrix")
    p = min(int(num_components), s.shape[0], s.shape[1])
    centered = s - s.mean(axis=0, keepdims=True)
    u, sing, vt = np.linalg.svd(centered, full_matrices=False)
    scores = centered @ vt[:p].T
    total = float(np.sum(sing**2))
    captured = float(np.sum(sing[:p] ** 2) / total) if total > 0 else 1.0
    return scores, captured


def kmeans_cluster(features: np.ndarray, num_clusters: int,
                   seed) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's K-means with farthest-point seeding.

    The first center is a uniformly random point (seeded); each next center
    is the point farthest from all chosen so far.  Iterates until the
    assignment stops changing or 300 rounds.  An emptied cluster keeps its
    previous centroid.

    Raises
    ------
    NumericalError
        If there are fewer points than clusters.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    k = int(num_clusters)
    if k < 1 or k > n:
        raise NumericalError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    min_d = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        centers[i] = x[int(np.argmax(min_d))]
        min_d = np.minimum(min_d, np.sum((x - centers[i]) ** 2, axis=1))

    labels = np.full(n, -1)
    for _ in range(300):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for i in range(k):
            members = x[labels == i]
            if members.size:
                centers[i] = members.mean(axis=0)
    return labels, centers


def kmeans_inertia(features: np.ndarray, labels: np.ndarray,
                   centers: np.ndarray) -> float:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return float(np.sum((x - centers[labels]) ** 2))


def assign_clusters(truth: EventList, positions: np.ndarray, labels: np.ndarray,
                    num_labels: int, tol_samples: int) -> tuple[dict, SortReport]:
    """Map cluster labels to true neurons by the best permutation.

    Every permutation of labels onto the true neuron ids is scored by the
    summed (miss + false alarm) over neurons; the lowest sum wins.  Returns
    the winning label->neuron mapping and its report.
    """
    neuron_ids = sorted(set(truth.neurons.tolist()))
    best_map: dict[int, int] = {}
    best_report: SortReport | None = None
    positions = np.asarray(positions, dtype=np.int64)
    for perm in itertools.permutations(neuron_ids, min(num_labels, len(neuron_ids))):
        mapping = {label: neuron for label, neuron in zip(range(num_labels), perm)}
        mapped = [mapping.get(int(lbl), -1) for lbl in labels]
        keep = np.array([m >= 0 for m in mapped], dtype=bool)
        if not np.any(keep):
            continue
        detected = EventList(
            np.array([m for m in mapped if m >= 0]),
            positions[keep],
            np.ones(int(keep.sum())),
        )
        report = rates(match_spikes(truth, detected, tol_samples), truth, detected)
        if best_report is None or report.summed_error < best_report.summed_error:
            best_report = report
            best_map = mapping
    if best_report is None:
        raise NumericalError("no cluster assignment possible")
    return best_map, best_report


def baseline_sort(signal: Signal, truth: EventList, threshold: float,
                  num_components: int, num_clusters: int, template_length: int,
                  tol_samples: int, seed, restarts: int = 10) -> SortReport:
    """Threshold -> snippet -> PCA -> K-means -> best-permutation report.

    K-means runs ``restarts`` seeded attempts and keeps the lowest inertia.
    The returned report carries the detection threshold used.
    """
    detections = detect_threshold_crossings(signal, threshold, template_length)
    positions, snippets = extract_snippets(signal, detections, template_length)
    if positions.size < num_clusters:
        raise NumericalError("not enough threshold crossings to cluster")
    scores, _captured = pca_project(snippets, num_components)

    root = np.random.SeedSequence(seed)
    best = None
    for child in root.spawn(restarts):
        labels, centers = kmeans_cluster(scores, num_clusters, child)
        inertia = kmeans_inertia(scores, labels, centers)
        if best is None or inertia < best[0]:
            best = (inertia, labels)
    _, report = assign_clusters(truth, positions, best[1], num_clusters, tol_samples)
    return SortReport(per_neuron=report.per_neuron, matches=report.matches,
                      counts=report.counts, threshold=threshold)