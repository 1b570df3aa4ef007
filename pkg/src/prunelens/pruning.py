"""Block Influence scoring and greedy Iterative Pruning with restart.

Each iteration recomputes BI on the current topology, removes the argmin
layer, and re-evaluates calibration accuracy. An accuracy drop above the
collapse threshold triggers a restart: the trajectory is abandoned and
pruning resumes from an anchored depth, either by one-shot removal of the
lowest-BI layers of the dense model (``dense-global``) or from the best
logged state at that depth (``best-state``). A collapse re-triggered at
the same depth aborts with a report instead of looping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, CollapseError, ConfigError
from .model import HiddenTrace, TransformerModel, Topology, forward, full_topology
from .metrics import (decision_margin, layer_rows, option_frequency,
                      transition_from_trace, TransitionReport)
from .numerics import cosine
from .probes import capture
from .rng import stream
from .tasks import evaluate_accuracy


@dataclass(frozen=True)
class BIScores:
    layers: tuple[int, ...]
    values: np.ndarray
    batch_count: int
    position_count: int

    @property
    def means(self) -> np.ndarray:
        return self.values / max(self.position_count, 1)


def block_influence(trace: HiddenTrace) -> BIScores:
    """BI per retained layer: sum over tokens of 1 - clip01(cos(in, out))."""
    if len(trace.layers) == 0 or len(trace.embedded) == 0:
        raise ArgumentError("empty hidden trace")
    n_samples = len(trace.embedded)
    n_positions = sum(s.shape[0] for s in trace.embedded)
    values = np.zeros(len(trace.layers), dtype=np.float64)
    for k in range(len(trace.layers)):
        prev = trace.embedded if k == 0 else trace.layers[k - 1]
        cur = trace.layers[k]
        total = 0.0
        for i in range(n_samples):
            before, after = prev[i], cur[i]
            for s in range(before.shape[0]):
                c = cosine(before[s], after[s])
                total += 1.0 - min(1.0, max(0.0, c))
        values[k] = total
    return BIScores(layers=trace.topology.retained, values=values,
                    batch_count=n_samples, position_count=n_positions)


def select_layer(scores: BIScores) -> int:
    """Dense index of the minimum-BI layer; ties -> lowest dense index."""
    if len(scores.layers) == 0:
        raise ArgumentError("empty BI scores")
    return scores.layers[int(np.argmin(scores.values))]


@dataclass(frozen=True)
class IPConfig:
    l_target: int
    tau: float = 0.05
    calib_samples: int = 256
    seed: int = 0
    restart_mode: str = "dense-global"
    workers: int = 1

    def __post_init__(self):
        if self.l_target < 1:
            raise ConfigError("l_target must be >= 1")
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.restart_mode not in ("dense-global", "best-state"):
            raise ConfigError(f"unknown restart mode {self.restart_mode!r}")


@dataclass(frozen=True)
class TrajectoryStep:
    step: int
    removed_layer: int
    topology: tuple[int, ...]
    accuracy: float
    dm_profile: tuple[tuple[int, float], ...]
    of_snapshot: tuple[tuple[float, ...], ...]
    restart: bool
    anchor: int


def _calibration(samples, config: IPConfig):
    if config.calib_samples >= len(samples):
        return list(samples)
    gen = stream(config.seed, "ip", "calibration")
    idx = sorted(gen.choice(len(samples), size=config.calib_samples, replace=False))
    return [samples[i] for i in idx]


def _bi_on(model, topology, calib, workers):
    prompts = [list(s.prompt) for s in calib]
    _, trace = forward(model, topology, prompts, workers=workers)
    return block_influence(trace)


def _metrics_snapshot(model, topology, samples, workers):
    dtrace, _ = capture(model, topology, samples, workers=workers)
    dm = tuple((dense, decision_margin(dtrace, dense))
               for dense in topology.retained)
    of = tuple(tuple(float(x) for x in option_frequency(dtrace, dense))
               for dense in topology.retained)
    return dm, of


def run_ip(model: TransformerModel, samples, config: IPConfig,
           accuracy_fn=None) -> list[TrajectoryStep]:
    """Greedy iterative pruning down to l_target retained layers.

    ``accuracy_fn(topology) -> float`` overrides calibration evaluation
    (used by tests to inject accuracy cliffs); the default evaluates
    final-layer accuracy on the full sample set.
    """
    n_dense = model.config.n_layers
    if not (1 <= config.l_target < n_dense):
        raise ConfigError("l_target must be in [1, n_layers)")
    if len(samples) == 0:
        raise ArgumentError("calibration set is empty")
    calib = _calibration(samples, config)

    if accuracy_fn is None:
        def accuracy_fn(topology):
            return evaluate_accuracy(model, topology, samples, workers=config.workers)

    dense_bi = None  # computed lazily for dense-global restarts

    topology = full_topology(model.config)
    acc_prev = accuracy_fn(topology)
    steps: list[TrajectoryStep] = []
    anchor = n_dense
    collapse_depths: set[int] = set()
    step_no = 0

    while len(topology) > config.l_target:
        step_no += 1
        scores = _bi_on(model, topology, calib, config.workers)
        removed = select_layer(scores)
        candidate = topology.without(removed)
        acc_cur = accuracy_fn(candidate)

        if acc_prev - acc_cur > config.tau:
            anchor = len(candidate)
            if anchor in collapse_depths:
                raise CollapseError(
                    f"collapse re-triggered at depth {anchor}",
                    report={"depth": anchor, "removed": removed,
                            "accuracy_before": acc_prev, "accuracy_after": acc_cur,
                            "steps_logged": len(steps)},
                )
            collapse_depths.add(anchor)
            if config.restart_mode == "dense-global":
                if dense_bi is None:
                    dense_bi = _bi_on(model, full_topology(model.config), calib,
                                      config.workers)
                order = sorted(range(n_dense),
                               key=lambda i: (dense_bi.values[i], i))
                drop = set(order[: n_dense - anchor])
                topology = Topology(tuple(i for i in range(n_dense) if i not in drop))
            else:
                at_depth = [s for s in steps if len(s.topology) == anchor]
                if at_depth:
                    best = max(at_depth, key=lambda s: s.accuracy)
                    topology = Topology(best.topology)
                else:
                    topology = candidate
            acc_prev = accuracy_fn(topology)
            dm, of = _metrics_snapshot(model, topology, samples, config.workers)
            steps.append(TrajectoryStep(
                step=step_no, removed_layer=removed, topology=topology.retained,
                accuracy=acc_prev, dm_profile=dm, of_snapshot=of,
                restart=True, anchor=anchor))
        else:
            topology = candidate
            acc_prev = acc_cur
            dm, of = _metrics_snapshot(model, topology, samples, config.workers)
            steps.append(TrajectoryStep(
                step=step_no, removed_layer=removed, topology=topology.retained,
                accuracy=acc_cur, dm_profile=dm, of_snapshot=of,
                restart=False, anchor=anchor))
    return steps


@dataclass(frozen=True)
class AblationReport:
    removed: tuple[int, ...]
    topology: tuple[int, ...]
    accuracy: float
    rows: tuple
    transition: TransitionReport


def ablate(model: TransformerModel, samples, labels_dist, layers,
           sustain=None, workers: int = 1) -> AblationReport:
    """Evaluate the model with an explicit dense-index set removed."""
    layers = sorted(set(int(x) for x in layers))
    n = model.config.n_layers
    if any(x < 0 or x >= n for x in layers):
        raise ArgumentError("ablation index out of range")
    retained = tuple(i for i in range(n) if i not in layers)
    if len(retained) == 0:
        raise ArgumentError("cannot remove every layer")
    topology = Topology(retained)
    dtrace, _ = capture(model, topology, samples, workers=workers)
    rows = layer_rows(dtrace, labels_dist)
    transition = transition_from_trace(dtrace, sustain=sustain)
    acc = float(np.mean(np.argmax(dtrace.scores[-1], axis=1) == dtrace.correct))
    return AblationReport(removed=tuple(layers), topology=retained,
                          accuracy=acc, rows=tuple(rows), transition=transition)
