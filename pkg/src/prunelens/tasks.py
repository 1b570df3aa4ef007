"""Multiple-choice task ingestion, option scoring, and accuracy.

Tasks arrive as UTF-8 line-delimited JSON records with fields
``id``, ``question``, ``options`` (list of strings) and ``answer_idx``.
Text is tokenized with a byte-level tokenizer (token id == byte value,
ids 256+ reserved), which sidesteps any real LLM tokenizer: real-model
runs enter through trace bundles already tokenized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigError, DataError
from .model import TransformerModel, Topology, forward
from . import probes

BYTE_VOCAB = 256
RESERVED_TOKENS = 44
TOKENIZER_VOCAB = BYTE_VOCAB + RESERVED_TOKENS


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_tokens(ids) -> str:
    return bytes(int(i) for i in ids if i < BYTE_VOCAB).decode("utf-8", "replace")


@dataclass(frozen=True)
class MCQSample:
    id: str
    prompt: tuple[int, ...]
    options: tuple[tuple[int, ...], ...]
    correct: int

    def __post_init__(self):
        if len(self.options) < 2:
            raise DataError(f"sample {self.id}: needs at least 2 options")
        if not (0 <= self.correct < len(self.options)):
            raise DataError(f"sample {self.id}: answer_idx out of range")
        if len(self.prompt) == 0 or any(len(o) == 0 for o in self.options):
            raise DataError(f"sample {self.id}: empty token sequence")


@dataclass(frozen=True)
class OptionScores:
    scores: np.ndarray
    mode: str


def label_distribution(samples) -> np.ndarray:
    """Empirical frequency of correct indices over the dataset."""
    if len(samples) == 0:
        raise ArgumentError("no samples")
    m = len(samples[0].options)
    counts = np.zeros(m, dtype=np.float64)
    for s in samples:
        counts[s.correct] += 1.0
    return counts / counts.sum()


def load_mcq(path: str):
    """Parse a task file; returns (samples, label distribution)."""
    samples = []
    m_seen = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                options = rec["options"]
                if len(options) == 0:
                    raise DataError("empty options")
                sample = MCQSample(
                    id=str(rec.get("id", f"line{lineno}")),
                    prompt=tuple(encode_text(rec["question"])),
                    options=tuple(tuple(encode_text(o)) for o in options),
                    correct=int(rec["answer_idx"]),
                )
            except (KeyError, json.JSONDecodeError, TypeError, DataError) as e:
                raise DataError(f"{path}: line {lineno}: {e}") from e
            if m_seen is None:
                m_seen = len(sample.options)
            elif len(sample.options) != m_seen:
                raise DataError(f"{path}: line {lineno}: option count differs from first sample")
            samples.append(sample)
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples, label_distribution(samples)


def label_token_ids(sample: MCQSample) -> list[int]:
    """First token of each option; collisions are a configuration error."""
    ids = [opt[0] for opt in sample.options]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"sample {sample.id}: option label tokens collide")
    return ids


def _resolve_layer(topology: Topology, layer) -> int:
    if layer == "final":
        return len(topology) - 1
    if layer not in topology.retained:
        raise ArgumentError(f"layer {layer} not in topology")
    return topology.retained.index(layer)


def score_options(model: TransformerModel, topology: Topology, sample: MCQSample,
                  layer="final", mode: str = "label", log_probs: bool = False) -> OptionScores:
    """Per-option scores z at one retained layer.

    label mode: lensed logit of each option's label token at the decision
    position (last prompt token). length-normalized mode: mean lensed
    log-probability over the option's tokens under teacher forcing.
    """
    if mode not in ("label", "length-normalized"):
        raise ArgumentError(f"unknown scoring mode {mode!r}")
    local = _resolve_layer(topology, layer)
    if mode == "label":
        labels = label_token_ids(sample)
        _, trace = forward(model, topology, [list(sample.prompt)])
        state = trace.layers[local][0][len(sample.prompt) - 1]
        scores = probes.option_scores_from_state(model, state, labels, log_probs)
        return OptionScores(scores=scores, mode="label-token" + ("/logprob" if log_probs else ""))

    scores = np.empty(len(sample.options), dtype=np.float64)
    for j, option in enumerate(sample.options):
        seq = list(sample.prompt) + list(option)
        _, trace = forward(model, topology, [seq])
        states = trace.layers[local][0]
        logps = []
        for t, tok in enumerate(option):
            pos = len(sample.prompt) - 1 + t
            logits = probes.lens(model, states[pos])
            logps.append(float(logits[tok] - _logsumexp(logits)))
        scores[j] = float(np.mean(logps))
    return OptionScores(scores=scores, mode="length-normalized")


def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def accuracy(scores, samples) -> float:
    """Mean argmax correctness; ties break toward the lowest option index."""
    if len(scores) == 0 or len(scores) != len(samples):
        raise ArgumentError("scores and samples must be nonempty and aligned")
    hits = 0
    for sc, sample in zip(scores, samples):
        vec = sc.scores if isinstance(sc, OptionScores) else np.asarray(sc)
        if int(np.argmax(vec)) == sample.correct:
            hits += 1
    return hits / len(samples)


def evaluate_accuracy(model: TransformerModel, topology: Topology, samples,
                      workers: int = 1) -> float:
    """Final-layer accuracy over a sample set (one forward per sample)."""
    dtrace, _ = probes.capture(model, topology, samples, workers=workers)
    final_scores = dtrace.scores[-1]
    hits = sum(int(np.argmax(final_scores[i])) == s.correct
               for i, s in enumerate(samples))
    return hits / len(samples)
