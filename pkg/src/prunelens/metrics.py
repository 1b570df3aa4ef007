"""Decision Margin, Option Frequency, KL option dynamics, transition detection.

All metrics operate on a DecisionTrace and report per layer. Layers are
addressed on the dense axis (original indices), mirroring how pruned
models are plotted against their unpruned parent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataError
from .probes import DecisionTrace

KL_ALPHA_DEFAULT = 1e-6


@dataclass(frozen=True)
class LayerMetricsRow:
    local_layer: int
    dense_layer: int
    dm: float
    of: tuple[float, ...]
    kl: float
    accuracy: float


@dataclass(frozen=True)
class TransitionReport:
    """First dense-axis layer of sustained positive DM, or None."""

    transition: int | None
    sustain: int | None
    layers: tuple[int, ...]
    dm: tuple[float, ...]


def _layer_scores(trace: DecisionTrace, layer) -> np.ndarray:
    if layer == "final":
        k = len(trace.topology) - 1
    else:
        if layer not in trace.topology.retained:
            raise ArgumentError(f"layer {layer} not in trace topology")
        k = trace.topology.retained.index(layer)
    return trace.scores[k]


def sample_margins(scores: np.ndarray, correct: np.ndarray) -> np.ndarray:
    """Per-sample z_correct - max(z_distractor)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise DataError("scores must be N x M with M >= 2")
    n = scores.shape[0]
    z_c = scores[np.arange(n), correct]
    masked = scores.copy()
    masked[np.arange(n), correct] = -np.inf
    return z_c - masked.max(axis=1)


def decision_margin(trace: DecisionTrace, layer) -> float:
    """Mean gap between the correct option and its strongest distractor."""
    scores = _layer_scores(trace, layer)
    return float(np.mean(sample_margins(scores, trace.correct)))


def option_frequency(trace: DecisionTrace, layer) -> np.ndarray:
    """Empirical distribution of argmax-predicted options (ties -> lowest)."""
    scores = _layer_scores(trace, layer)
    preds = np.argmax(scores, axis=1)
    m = scores.shape[1]
    counts = np.bincount(preds, minlength=m).astype(np.float64)
    return counts / counts.sum()


def kl_to_labels(of, labels, alpha: float = KL_ALPHA_DEFAULT) -> float:
    """KL(OF || labels) with additive smoothing on both sides.

    Empirical OF regularly has exact zeros (distributional collapse), so
    both distributions get +alpha and are renormalized before the sum.
    At alpha = 0 the 0*ln(0) terms are dropped by convention.
    """
    p = np.asarray(of, dtype=np.float64)
    q = np.asarray(labels, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ArgumentError("of and labels must be equal-length vectors")
    if alpha < 0:
        raise ArgumentError("alpha must be nonnegative")
    p = (p + alpha) / np.sum(p + alpha)
    q = (q + alpha) / np.sum(q + alpha)
    mask = p > 0
    if np.any(q[mask] == 0):
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def layer_accuracy(trace: DecisionTrace, layer) -> float:
    scores = _layer_scores(trace, layer)
    return float(np.mean(np.argmax(scores, axis=1) == trace.correct))


def layer_rows(trace: DecisionTrace, labels_dist, alpha: float = KL_ALPHA_DEFAULT):
    """One LayerMetricsRow per retained layer, on the dense axis."""
    rows = []
    for k, dense in enumerate(trace.topology.retained):
        of = option_frequency(trace, dense)
        rows.append(LayerMetricsRow(
            local_layer=k,
            dense_layer=dense,
            dm=decision_margin(trace, dense),
            of=tuple(float(x) for x in of),
            kl=kl_to_labels(of, labels_dist, alpha),
            accuracy=layer_accuracy(trace, dense),
        ))
    return rows


def detect_transition(dm_profile, layers=None, sustain: int | None = None) -> TransitionReport:
    """Smallest layer with DM > 0 there and at the evaluated layers after it.

    By default positivity must be sustained through the final layer; with
    ``sustain=w`` only w consecutive positive layers are required (windows
    truncated at the profile end still qualify).
    """
    dm = [float(x) for x in dm_profile]
    if len(dm) == 0:
        raise ArgumentError("empty DM profile")
    if layers is None:
        layers = list(range(len(dm)))
    layers = [int(x) for x in layers]
    if len(layers) != len(dm):
        raise ArgumentError("layers and profile lengths differ")
    if sustain is not None and sustain < 1:
        raise ArgumentError("sustain window must be >= 1")
    n = len(dm)
    transition = None
    for i in range(n):
        end = n if sustain is None else min(n, i + sustain)
        if all(v > 0 for v in dm[i:end]):
            transition = layers[i]
            break
    return TransitionReport(transition=transition, sustain=sustain,
                            layers=tuple(layers), dm=tuple(dm))


def transition_from_trace(trace: DecisionTrace, sustain: int | None = None) -> TransitionReport:
    profile = [decision_margin(trace, dense) for dense in trace.topology.retained]
    return detect_transition(profile, layers=trace.topology.retained, sustain=sustain)
