"""Logit-lens readout and per-layer representation capture.

Intermediate residual states are projected through the model's *final*
pre-head normalization gain and LM head, so readouts at every depth share
one feature-scaling regime. The decision position is the last prompt
token: the next-token distribution there selects the answer option.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigError
from .model import TransformerModel, Topology, forward
from .numerics import normalize


@dataclass
class DecisionTrace:
    """Per retained layer: decision-position states (N x d) and option scores (N x M)."""

    topology: Topology
    sample_ids: tuple[str, ...]
    decision: list[np.ndarray]
    scores: list[np.ndarray]
    correct: np.ndarray
    norm_kind: str = "rms"

    @property
    def n_layers(self) -> int:
        return len(self.topology)


@dataclass
class PooledTrace:
    """Per retained layer: sequence-mean-pooled states (N x d)."""

    topology: Topology
    sample_ids: tuple[str, ...]
    pooled: list[np.ndarray]


def lens(model: TransformerModel, state) -> np.ndarray:
    """Vocabulary logits for one hidden state: head(final_norm(state))."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (model.config.d_model,):
        raise ArgumentError(f"state must have length d_model={model.config.d_model}")
    normed = normalize(state, model.final_norm_gain, model.config.norm)
    return normed @ model.head.T.astype(np.float64)


def option_scores_from_state(model: TransformerModel, state, label_ids,
                             log_probs: bool = False) -> np.ndarray:
    """Label-token scores read from one decision-position state."""
    if len(set(label_ids)) != len(label_ids):
        raise ConfigError("option label tokens collide")
    logits = lens(model, state)
    if log_probs:
        m = float(np.max(logits))
        logz = m + float(np.log(np.sum(np.exp(logits - m))))
        logits = logits - logz
    return logits[np.asarray(label_ids, dtype=np.int64)].copy()


def capture(model: TransformerModel, topology: Topology, samples,
            workers: int = 1, noise_fn=None, log_probs: bool = False):
    """One forward per sample; fills decision, pooled, and score traces.

    Returns (DecisionTrace, PooledTrace). Results are assembled in sample
    order regardless of worker count.
    """
    samples = list(samples)
    if len(samples) == 0:
        raise ArgumentError("no samples to capture")
    from .tasks import label_token_ids  # local import to avoid a module cycle

    labels_per_sample = [label_token_ids(s) for s in samples]

    def one(i):
        s = samples[i]
        _, trace = forward(model, topology, [list(s.prompt)], noise_fn=(
            None if noise_fn is None else (lambda layer, _si, st: noise_fn(layer, i, st))))
        dpos = len(s.prompt) - 1
        dec, pool, sc = [], [], []
        for k in range(len(topology)):
            state = trace.layers[k][0]
            dec.append(state[dpos].copy())
            pool.append(state.mean(axis=0))
            sc.append(option_scores_from_state(model, state[dpos],
                                               labels_per_sample[i], log_probs))
        return dec, pool, sc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_ex:
            per_sample = list(pool_ex.map(one, range(len(samples))))
    else:
        per_sample = [one(i) for i in range(len(samples))]

    n_layers = len(topology)
    decision = [np.stack([per_sample[i][0][k] for i in range(len(samples))])
                for k in range(n_layers)]
    pooled = [np.stack([per_sample[i][1][k] for i in range(len(samples))])
              for k in range(n_layers)]
    scores = [np.stack([per_sample[i][2][k] for i in range(len(samples))])
              for k in range(n_layers)]
    ids = tuple(s.id for s in samples)
    correct = np.asarray([s.correct for s in samples], dtype=np.int64)
    dtrace = DecisionTrace(topology=topology, sample_ids=ids, decision=decision,
                           scores=scores, correct=correct,
                           norm_kind=model.config.norm.kind)
    ptrace = PooledTrace(topology=topology, sample_ids=ids, pooled=pooled)
    return dtrace, ptrace
