"""Correlation analysis and plot-ready artifact emission.

Every CSV uses repr-style float formatting so artifacts are byte-identical
across reruns and re-parse at full precision. run.json records the inputs,
seed, and format versions (never timestamps or thread counts), so a run is
reproducible from it alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import ArgumentError
from .model import WEIGHTS_VERSION
from .numerics import pearson
from .rng import stream
from .trace_io import BUNDLE_VERSION

PERMUTATIONS_DEFAULT = 10_000


@dataclass(frozen=True)
class CorrelationReport:
    points: tuple[tuple[float, float], ...]
    r: float
    p: float
    permutations: int


def correlate(points, permutations: int = PERMUTATIONS_DEFAULT,
              seed: int = 0) -> CorrelationReport:
    """Pearson r over (transition layer, critical threshold) points with a
    two-sided permutation p-value at the 1/(permutations+1) floor."""
    pts = tuple((float(a), float(b)) for a, b in points)
    if len(pts) < 3:
        raise ArgumentError("correlate needs at least 3 points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    r = pearson(x, y)
    gen = stream(seed, "correlate")
    hits = 0
    for _ in range(permutations):
        r_perm = pearson(x, y[gen.permutation(len(y))])
        if abs(r_perm) >= abs(r) - 1e-12:
            hits += 1
    p = (1 + hits) / (permutations + 1)
    return CorrelationReport(points=pts, r=float(r), p=float(p),
                             permutations=permutations)


def critical_threshold(steps, tau: float, dense_accuracy: float,
                       n_dense: int) -> float:
    """Largest pruning ratio whose accuracy stays within tau of dense."""
    best = 0.0
    for s in steps:
        if s.accuracy >= dense_accuracy - tau:
            ratio = 1.0 - len(s.topology) / n_dense
            best = max(best, ratio)
    return best


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) or isinstance(x, np.floating):
        return repr(float(x))
    return str(x)


def write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def write_layers_csv(path: str, rows) -> None:
    if not rows:
        raise ArgumentError("no layer rows")
    m = len(rows[0].of)
    header = (["local_layer", "dense_layer", "dm"]
              + [f"of_{j}" for j in range(m)] + ["kl", "acc"])
    write_csv(path, header, [
        [r.local_layer, r.dense_layer, r.dm, *r.of, r.kl, r.accuracy]
        for r in rows])


def write_transition_json(path: str, report) -> None:
    payload = {
        "transition": report.transition,
        "sustain": report.sustain,
        "layers": list(report.layers),
        "dm": [repr(float(x)) for x in report.dm],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def write_trajectory_csv(path: str, steps, n_dense: int) -> None:
    header = ["step", "removed_layer", "remaining_depth", "pruning_ratio",
              "accuracy", "restart", "anchor"]
    write_csv(path, header, [
        [s.step, s.removed_layer, len(s.topology),
         1.0 - len(s.topology) / n_dense, s.accuracy, s.restart, s.anchor]
        for s in steps])


def removal_order(steps, n_dense: int):
    """Cumulative removed-id lists, one per step, in removal order.

    After a restart the removed set changes wholesale; ids surviving from
    the previous order keep their positions and newcomers append in
    ascending index order.
    """
    order: list[int] = []
    out = []
    for s in steps:
        removed_now = [i for i in range(n_dense) if i not in s.topology]
        order = [i for i in order if i in removed_now]
        for i in sorted(removed_now):
            if i not in order:
                order.append(i)
        out.append(list(order))
    return out


def write_removed_ids_csv(path: str, steps, n_dense: int) -> None:
    header = ["remain", "n_removed", "pruning_ratio", "removed_ids"]
    rows = []
    for s, ids in zip(steps, removal_order(steps, n_dense)):
        rows.append([len(s.topology), len(ids), 1.0 - len(s.topology) / n_dense,
                     "[" + " ".join(str(i) for i in ids) + "]"])
    write_csv(path, header, rows)


def write_cka_csv(path: str, matrix) -> None:
    header = ["pruned_layer"] + [str(c) for c in matrix.col_layers]
    rows = [[matrix.row_layers[i], *matrix.values[i]]
            for i in range(matrix.values.shape[0])]
    write_csv(path, header, rows)


def write_best_match_csv(path: str, curve) -> None:
    write_csv(path, ["pruned_layer", "best_dense_layer", "cka"],
              [[r, c, v] for r, c, v in
               zip(curve.row_layers, curve.best_cols, curve.best_values)])


def write_noise_csv(path: str, rows) -> None:
    write_csv(path, ["phase", "variance", "trial", "final_dm", "dm_drop"],
              [[r.phase, r.variance, r.trial, r.final_dm, r.dm_drop]
               for r in rows])


def write_correlation_csv(path: str, report: CorrelationReport) -> None:
    header = ["transition_layer", "critical_threshold", "r", "p", "permutations"]
    rows = [[a, b, report.r, report.p, report.permutations]
            for a, b in report.points]
    write_csv(path, header, rows)


def write_run_json(path: str, command: str, config: dict, seed: int) -> None:
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {
            "prunelens": __version__,
            "trace_bundle": BUNDLE_VERSION,
            "weights_bundle": WEIGHTS_VERSION,
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def read_points_csv(path: str):
    """Points file: header transition_layer,critical_threshold."""
    points = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        try:
            ix = header.index("transition_layer")
            iy = header.index("critical_threshold")
        except ValueError as e:
            raise ArgumentError(f"{path}: missing required columns") from e
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                points.append((float(parts[ix]), float(parts[iy])))
            except (ValueError, IndexError) as e:
                raise ArgumentError(f"{path}: line {lineno}: {e}") from e
    return points
