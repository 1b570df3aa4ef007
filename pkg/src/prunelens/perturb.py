"""Standardized noise injection into layer hidden states.

Injected noise follows h' = h + sqrt(v) * sigma(h_l) * z with z standard
normal and sigma(h_l) the scalar standard deviation of layer l's clean
activations over the evaluation batch, computed once before injection.
Draws come from counter-based streams keyed by
(seed, trial, layer, sample, position), so results are independent of
thread scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .metrics import decision_margin
from .model import TransformerModel, Topology, forward, full_topology
from .probes import capture
from .rng import stream


@dataclass(frozen=True)
class NoiseConfig:
    target_layers: tuple[int, ...]
    variance: float
    seed: int = 0
    trials: int = 1

    def __post_init__(self):
        if self.variance < 0:
            raise ArgumentError("variance must be >= 0")
        if self.trials < 1:
            raise ArgumentError("trials must be >= 1")
        object.__setattr__(self, "target_layers",
                           tuple(sorted(set(int(x) for x in self.target_layers))))


@dataclass(frozen=True)
class InjectResult:
    layers: tuple[int, ...]
    clean_dm: tuple[float, ...]
    trial_dm: tuple[tuple[float, ...], ...]
    mean_dm: tuple[float, ...]
    std_dm: tuple[float, ...]
    sigma: dict


def layer_sigma(model: TransformerModel, topology: Topology, samples,
                workers: int = 1) -> dict:
    """Scalar std of each retained layer's activations on the clean batch."""
    prompts = [list(s.prompt) for s in samples]
    _, trace = forward(model, topology, prompts, workers=workers)
    sigma = {}
    for k, dense in enumerate(topology.retained):
        flat = np.concatenate([st.ravel() for st in trace.layers[k]])
        sigma[dense] = float(np.std(flat))
    return sigma


def inject(model: TransformerModel, samples, config: NoiseConfig,
           topology: Topology | None = None, workers: int = 1) -> InjectResult:
    """Per-trial DM profiles under noise on the target layers, plus summary."""
    if topology is None:
        topology = full_topology(model.config)
    bad = [x for x in config.target_layers if x not in topology.retained]
    if bad:
        raise ArgumentError(f"target layers {bad} not in topology")
    if len(samples) == 0:
        raise ArgumentError("no samples")

    clean_trace, _ = capture(model, topology, samples, workers=workers)
    clean_dm = tuple(decision_margin(clean_trace, dense)
                     for dense in topology.retained)
    sigma = layer_sigma(model, topology, samples, workers=workers)

    targets = set(config.target_layers)
    scale_by_layer = {l: float(np.sqrt(config.variance)) * sigma[l] for l in targets}

    trial_profiles = []
    for trial in range(config.trials):
        if config.variance == 0.0:
            noise_fn = None
        else:
            def noise_fn(layer, sample_idx, state, _trial=trial):
                if layer not in targets:
                    return state
                scale = scale_by_layer[layer]
                if scale == 0.0:
                    return state
                out = state.copy()
                for pos in range(state.shape[0]):
                    z = stream(config.seed, "noise", _trial, layer, sample_idx,
                               pos).standard_normal(state.shape[1])
                    out[pos] += scale * z
                return out
        dtrace, _ = capture(model, topology, samples, workers=workers,
                            noise_fn=noise_fn)
        trial_profiles.append(tuple(decision_margin(dtrace, dense)
                                    for dense in topology.retained))

    arr = np.asarray(trial_profiles, dtype=np.float64)
    return InjectResult(
        layers=topology.retained,
        clean_dm=clean_dm,
        trial_dm=tuple(trial_profiles),
        mean_dm=tuple(float(x) for x in arr.mean(axis=0)),
        std_dm=tuple(float(x) for x in arr.std(axis=0)),
        sigma=sigma,
    )


@dataclass(frozen=True)
class SweepRow:
    phase: str
    variance: float
    trial: int
    final_dm: float
    dm_drop: float


def sweep(model: TransformerModel, samples, variances, split_layer: int,
          trials: int = 4, seed: int = 0, topology: Topology | None = None,
          workers: int = 1) -> list[SweepRow]:
    """Whole-phase joint injection: silent (< split) vs decisive (>= split).

    Reports the final-layer DM drop relative to the clean run for every
    (phase, variance, trial) cell.
    """
    if topology is None:
        topology = full_topology(model.config)
    if split_layer not in topology.retained:
        raise ArgumentError("split layer must be a retained layer")
    if any(v < 0 for v in variances):
        raise ArgumentError("variances must be nonnegative")
    silent = tuple(l for l in topology.retained if l < split_layer)
    decisive = tuple(l for l in topology.retained if l >= split_layer)
    if not silent or not decisive:
        raise ArgumentError("split produces an empty phase")

    clean_trace, _ = capture(model, topology, samples, workers=workers)
    clean_final = decision_margin(clean_trace, "final")

    rows = []
    for phase, layers in (("silent", silent), ("decisive", decisive)):
        for v in variances:
            cfg = NoiseConfig(target_layers=layers, variance=float(v),
                              seed=seed, trials=trials)
            result = inject(model, samples, cfg, topology=topology, workers=workers)
            for t, profile in enumerate(result.trial_dm):
                final_dm = profile[-1]
                rows.append(SweepRow(phase=phase, variance=float(v), trial=t,
                                     final_dm=final_dm,
                                     dm_drop=clean_final - final_dm))
    return rows
