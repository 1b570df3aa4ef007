"""Linear CKA between layer sets of two models and best-match curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .probes import DecisionTrace, PooledTrace

SIGNALS = ("pooled", "decision")


def linear_cka(x, y) -> float:
    """Linear CKA on column-centered inputs, feature-space form.

    ||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F); 0 when either centered
    matrix vanishes. Invariant to orthogonal transforms and isotropic
    scaling of either argument.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ArgumentError("inputs must be 2-d with a shared sample dimension")
    if x.shape[0] < 2:
        raise ArgumentError("need at least 2 samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    num = np.linalg.norm(yc.T @ xc, "fro") ** 2
    dx = np.linalg.norm(xc.T @ xc, "fro")
    dy = np.linalg.norm(yc.T @ yc, "fro")
    if dx == 0.0 or dy == 0.0:
        return 0.0
    return float(num / (dx * dy))


@dataclass(frozen=True)
class AlignmentMatrix:
    values: np.ndarray
    row_layers: tuple[int, ...]
    col_layers: tuple[int, ...]
    signal: str


@dataclass(frozen=True)
class AlignmentCurve:
    row_layers: tuple[int, ...]
    best_cols: tuple[int, ...]
    best_values: tuple[float, ...]


def _signal_arrays(traces, signal: str):
    dtrace, ptrace = traces
    if signal == "decision":
        return dtrace.topology, dtrace.sample_ids, dtrace.decision
    if signal == "pooled":
        if ptrace is None:
            raise ArgumentError("pooled signal absent from this trace")
        return ptrace.topology, ptrace.sample_ids, ptrace.pooled
    raise ArgumentError(f"unknown signal {signal!r}; expected one of {SIGNALS}")


def alignment_matrix(traces_a, traces_b, signal: str = "pooled") -> AlignmentMatrix:
    """CKA of every (layer of a) x (layer of b) pair for one signal.

    Both traces must come from the same samples in the same order;
    rows are a's retained layers, columns are b's.
    """
    topo_a, ids_a, arrays_a = _signal_arrays(traces_a, signal)
    topo_b, ids_b, arrays_b = _signal_arrays(traces_b, signal)
    if ids_a != ids_b:
        raise ArgumentError("traces were captured over different sample sets")
    values = np.empty((len(arrays_a), len(arrays_b)), dtype=np.float64)
    for i, xa in enumerate(arrays_a):
        for j, xb in enumerate(arrays_b):
            values[i, j] = linear_cka(xa, xb)
    return AlignmentMatrix(values=values, row_layers=topo_a.retained,
                           col_layers=topo_b.retained, signal=signal)


def best_match(matrix: AlignmentMatrix) -> AlignmentCurve:
    """Per row: the dense column of maximal CKA (ties -> shallower layer)."""
    if matrix.values.size == 0:
        raise ArgumentError("empty alignment matrix")
    idx = np.argmax(matrix.values, axis=1)
    cols = tuple(matrix.col_layers[int(j)] for j in idx)
    vals = tuple(float(matrix.values[i, int(j)]) for i, j in enumerate(idx))
    return AlignmentCurve(row_layers=matrix.row_layers, best_cols=cols, best_values=vals)
