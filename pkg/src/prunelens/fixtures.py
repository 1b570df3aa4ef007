"""Engineered models and tasks with known decision dynamics.

The staged model plants a silent-to-decisive transition at a chosen layer:
blocks before it push a fixed wrong-option direction into the residual
stream, blocks from it onward read a cue planted at the decision position
and write the correct option's direction at much larger magnitude. On the
bundled task this yields a dense DM profile that is negative strictly
before the transition layer and positive from it onward, silent-phase
option-frequency collapse onto option 0 (KL spike), and decisive-phase
OF equal to the label distribution (KL ~ 0).

Coordinate layout (d_model partitioned):
  [0, M)            cue: one-hot per option, planted in label-token embeddings
  [M, 2M)           label readout: LM-head row for label token j reads M+j
  [2M, 2M+K)        content: random per-token features, mixed by silent blocks
  [2M+K, 2M+K+2L)   per-block signature pairs written by every block

Cue-driven gates suppress mixing and signature channels at the decision
position, so decision-token representations evolve only through the
planted bias and cue-gated writes, while pooled representations track the
identity of executed blocks; this reproduces the pooled-vs-decision CKA
decoupling seen when decisive blocks are pruned.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ArgumentError, ConfigError
from .model import BlockWeights, ModelConfig, TransformerModel, build_synthetic, zero_residual_branches
from .numerics import NormKind
from .rng import stream
from .tasks import MCQSample, encode_text

STAGED_LABEL_TOKENS = (65, 66, 67, 68)  # byte values of "A".."D"

CUE_SCALE = 2.0
CUE_READ = 3.0
SILENT_BIAS = 0.4
WRITE_GAIN = 2.5
MIX_WRITE = 0.3
SIG_BASE = 0.5
SIG_RHO = 1.6
GATE = 30.0


def staged_config(n_layers: int = 8, seed: int = 7) -> ModelConfig:
    return ModelConfig(n_layers=n_layers, d_model=32, n_heads=4, d_ff=64,
                       vocab_size=300, max_seq=32, norm=NormKind("rms"),
                       seed=seed)


def plant_staged_fixture(config: ModelConfig, transition_at: int,
                         label_tokens=STAGED_LABEL_TOKENS) -> TransformerModel:
    """Model whose dense DM profile flips sign exactly at transition_at."""
    n, d, ff, v = config.n_layers, config.d_model, config.d_ff, config.vocab_size
    if not (0 < transition_at < n):
        raise ArgumentError("transition_at must be inside (0, n_layers)")
    label_tokens = tuple(int(t) for t in label_tokens)
    m = len(label_tokens)
    if m < 2:
        raise ArgumentError("need at least two label tokens")
    if len(set(label_tokens)) != m:
        raise ArgumentError("label tokens must be distinct")
    if any(t < 0 or t >= v for t in label_tokens):
        raise ArgumentError("label token outside vocabulary")

    n_content = d - 2 * m - 2 * n
    if n_content < 2:
        raise ConfigError("d_model too small for the staged coordinate layout")
    if ff < m + n_content + 2:
        raise ConfigError("d_ff too small for the staged channel layout")
    cue = slice(0, m)
    label = slice(m, 2 * m)
    content = slice(2 * m, 2 * m + n_content)
    sig_base = 2 * m + n_content
    seed = config.seed

    tok_emb = np.zeros((v, d))
    for t in range(v):
        tok_emb[t, content] = stream(seed, "staged", "emb", t).uniform(
            -0.7, 0.7, n_content)
    for j, tok in enumerate(label_tokens):
        tok_emb[tok, j] = CUE_SCALE

    head = np.zeros((v, d))
    for j, tok in enumerate(label_tokens):
        head[tok, m + j] = 1.0

    blocks = []
    for layer in range(n):
        w1 = np.zeros((ff, d))
        b1 = np.zeros(ff)
        w2 = np.zeros((d, ff))
        b2 = np.zeros(d)

        for t in range(2):  # depth-signature channels, every block
            ch = m + n_content + t
            w1[ch, content] = stream(seed, "staged", "sigread", layer, t).uniform(
                -1.0, 1.0, n_content)
            w1[ch, cue] = -GATE
            w2[sig_base + 2 * layer + t, ch] = SIG_BASE * SIG_RHO ** layer

        if layer < transition_at:
            b2[m + 0] = SILENT_BIAS  # constant wrong-option push
            for c in range(n_content):
                ch = m + c
                w1[ch, content] = stream(seed, "staged", "mixread", layer, c).uniform(
                    -1.0, 1.0, n_content)
                w1[ch, cue] = -GATE
                w2[content, ch] = MIX_WRITE * stream(
                    seed, "staged", "mixwrite", layer, c).uniform(-1.0, 1.0, n_content)
        else:
            for j in range(m):
                w1[j, j] = CUE_READ  # read cue j
                w2[m + j, j] = WRITE_GAIN  # write option j's label direction

        blocks.append(BlockWeights(
            attn_norm_gain=np.ones(d, dtype=np.float32),
            wq=np.zeros((d, d), dtype=np.float32),
            wk=np.zeros((d, d), dtype=np.float32),
            wv=np.zeros((d, d), dtype=np.float32),
            wo=np.zeros((d, d), dtype=np.float32),
            ffn_norm_gain=np.ones(d, dtype=np.float32),
            w1=w1.astype(np.float32), b1=b1.astype(np.float32),
            w2=w2.astype(np.float32), b2=b2.astype(np.float32),
        ))

    return TransformerModel(
        config=config,
        tok_emb=tok_emb.astype(np.float32),
        pos_emb=np.zeros((config.max_seq, d), dtype=np.float32),
        blocks=blocks,
        final_norm_gain=np.ones(d, dtype=np.float32),
        head=head.astype(np.float32),
    )


def staged_records(n_samples: int = 12, label_tokens=STAGED_LABEL_TOKENS,
                   seed: int = 13):
    """Bundled fixture task records: answers cycle through the options.

    Each question carries a per-sample random filler word (so content
    features vary across samples) and ends with the cue character — the
    correct option's label letter — at the decision position. Option 0's
    share is 1/M < 1/2, so the silent-phase bias yields a strictly
    negative DM.
    """
    m = len(label_tokens)
    records = []
    for i in range(n_samples):
        c = i % m
        letter = chr(label_tokens[c])
        gen = stream(seed, "staged-task", i)
        filler = "".join(chr(97 + int(x)) for x in gen.integers(0, 26, size=10))
        records.append({
            "id": f"staged-{i:03d}",
            "question": f"{filler} {i:02d} pick {letter}",
            "options": [chr(t) for t in label_tokens],
            "answer_idx": c,
        })
    return records


def staged_samples(n_samples: int = 12, label_tokens=STAGED_LABEL_TOKENS,
                   seed: int = 13):
    return [MCQSample(
        id=rec["id"],
        prompt=tuple(encode_text(rec["question"])),
        options=tuple(tuple(encode_text(o)) for o in rec["options"]),
        correct=rec["answer_idx"],
    ) for rec in staged_records(n_samples, label_tokens, seed)]


def write_staged_task(path: str, n_samples: int = 12,
                      label_tokens=STAGED_LABEL_TOKENS, seed: int = 13) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in staged_records(n_samples, label_tokens, seed):
            f.write(json.dumps(rec) + "\n")


def identity_block_model(n_layers: int = 6, identity_layer: int = 2,
                         seed: int = 11) -> TransformerModel:
    """Random synthetic model with one exact identity block (BI = 0 there)."""
    cfg = ModelConfig(n_layers=n_layers, d_model=32, n_heads=4, d_ff=48,
                      vocab_size=300, max_seq=32, norm=NormKind("rms"), seed=seed)
    return zero_residual_branches(build_synthetic(cfg), identity_layer)
