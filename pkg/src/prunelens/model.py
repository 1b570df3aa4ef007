"""Minimal decoder-only transformer with independently removable blocks.

Blocks are pre-norm (norm -> sublayer -> residual add), so skipping a block
is exactly an identity map on the residual stream. Weights are stored as
float32 arrays (the on-disk precision); forward math runs in float64.
There is no KV cache and no training path: batches are desk scale and each
sample is processed in a single causal pass.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ArgumentError, ConfigError, CorruptFileError, DataError, VersionError
from .numerics import NormKind, normalize
from .rng import stream

WEIGHTS_VERSION = "weights-bundle/1"


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_seq: int
    norm: NormKind = field(default_factory=NormKind)
    seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")


@dataclass
class BlockWeights:
    attn_norm_gain: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ffn_norm_gain: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class TransformerModel:
    config: ModelConfig
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    blocks: list[BlockWeights]
    final_norm_gain: np.ndarray
    head: np.ndarray


@dataclass(frozen=True)
class Topology:
    """Strictly increasing list of retained original (dense) layer indices."""

    retained: tuple[int, ...]

    def __post_init__(self):
        r = tuple(int(i) for i in self.retained)
        object.__setattr__(self, "retained", r)
        if len(r) == 0:
            raise ArgumentError("topology must retain at least one layer")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ArgumentError("topology indices must be strictly increasing")

    def validate_against(self, config: ModelConfig) -> None:
        if self.retained[0] < 0 or self.retained[-1] >= config.n_layers:
            raise ArgumentError("topology index out of range")

    def without(self, dense_index: int) -> "Topology":
        if dense_index not in self.retained:
            raise ArgumentError(f"layer {dense_index} not in topology")
        return Topology(tuple(i for i in self.retained if i != dense_index))

    def __len__(self):
        return len(self.retained)


def full_topology(config: ModelConfig) -> Topology:
    return Topology(tuple(range(config.n_layers)))


@dataclass
class HiddenTrace:
    """Residual-stream states: post-embedding plus one entry per executed block."""

    topology: Topology
    embedded: list[np.ndarray]
    layers: list[list[np.ndarray]]

    def states_at(self, k: int) -> list[np.ndarray]:
        return self.layers[k]


BLOCK_TENSORS = ("attn_norm_gain", "wq", "wk", "wv", "wo",
                 "ffn_norm_gain", "w1", "b1", "w2", "b2")


def _f32(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


def _uniform(gen: np.random.Generator, shape, scale: float) -> np.ndarray:
    return _f32(gen.uniform(-scale, scale, size=shape))


def build_synthetic(config: ModelConfig) -> TransformerModel:
    """Seeded synthetic model; (config, seed) fully determines every weight.

    Each tensor gets its own counter-based stream keyed by tensor name, so
    the draw for one tensor never depends on the shapes of the others.
    """
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    proj_scale = float(np.sqrt(3.0 / d))
    ff_scale = float(np.sqrt(3.0 / ff))

    def gen(name):
        return stream(config.seed, "model", name)

    blocks = []
    for layer in range(config.n_layers):
        p = f"block{layer:02d}."
        blocks.append(BlockWeights(
            attn_norm_gain=_f32(1.0 + gen(p + "attn_norm_gain").uniform(-0.1, 0.1, d)),
            wq=_uniform(gen(p + "wq"), (d, d), proj_scale),
            wk=_uniform(gen(p + "wk"), (d, d), proj_scale),
            wv=_uniform(gen(p + "wv"), (d, d), proj_scale),
            wo=_uniform(gen(p + "wo"), (d, d), proj_scale),
            ffn_norm_gain=_f32(1.0 + gen(p + "ffn_norm_gain").uniform(-0.1, 0.1, d)),
            w1=_uniform(gen(p + "w1"), (ff, d), proj_scale),
            b1=_f32(np.zeros(ff)),
            w2=_uniform(gen(p + "w2"), (d, ff), ff_scale),
            b2=_f32(np.zeros(d)),
        ))
    return TransformerModel(
        config=config,
        tok_emb=_uniform(gen("tok_emb"), (v, d), 0.5),
        pos_emb=_uniform(gen("pos_emb"), (config.max_seq, d), 0.1),
        blocks=blocks,
        final_norm_gain=_f32(1.0 + gen("final_norm_gain").uniform(-0.1, 0.1, d)),
        head=_uniform(gen("head"), (v, d), proj_scale),
    )


def zero_residual_branches(model: TransformerModel, layer: int) -> TransformerModel:
    """Copy of the model whose block `layer` adds exactly zero to the stream.

    With pre-norm blocks this makes the block an exact identity, which is
    the oracle for skip-forward equivalence and forces BI = 0.
    """
    if layer < 0 or layer >= model.config.n_layers:
        raise ArgumentError("layer out of range")
    blocks = list(model.blocks)
    b = blocks[layer]
    blocks[layer] = replace(
        b,
        wo=np.zeros_like(b.wo),
        w2=np.zeros_like(b.w2),
        b2=np.zeros_like(b.b2),
    )
    return replace(model, blocks=blocks)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _run_block(x: np.ndarray, b: BlockWeights, norm: NormKind, n_heads: int) -> np.ndarray:
    s, d = x.shape
    hd = d // n_heads
    y = normalize(x, b.attn_norm_gain, norm)
    q = (y @ b.wq.T.astype(np.float64)).reshape(s, n_heads, hd).transpose(1, 0, 2)
    k = (y @ b.wk.T.astype(np.float64)).reshape(s, n_heads, hd).transpose(1, 0, 2)
    vv = (y @ b.wv.T.astype(np.float64)).reshape(s, n_heads, hd).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(hd)
    mask = np.triu(np.full((s, s), -np.inf), k=1)
    scores = scores + mask
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w = w / w.sum(axis=-1, keepdims=True)
    ctx = (w @ vv).transpose(1, 0, 2).reshape(s, d)
    x = x + ctx @ b.wo.T.astype(np.float64)

    y2 = normalize(x, b.ffn_norm_gain, norm)
    h = _silu(y2 @ b.w1.T.astype(np.float64) + b.b1.astype(np.float64))
    return x + h @ b.w2.T.astype(np.float64) + b.b2.astype(np.float64)


def _forward_one(model, topology, ids, noise_fn, sample_index):
    cfg = model.config
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise DataError("token sequence must be a nonempty 1-d id list")
    if ids.size > cfg.max_seq:
        raise DataError(f"sequence length {ids.size} exceeds max_seq {cfg.max_seq}")
    if np.any(ids < 0) or np.any(ids >= cfg.vocab_size):
        raise DataError("token id out of range")
    x = model.tok_emb[ids].astype(np.float64) + model.pos_emb[: ids.size].astype(np.float64)
    embedded = x.copy()
    states = []
    for layer in topology.retained:
        x = _run_block(x, model.blocks[layer], cfg.norm, cfg.n_heads)
        if noise_fn is not None:
            x = noise_fn(layer, sample_index, x)
        states.append(x.copy())
    logits = normalize(x, model.final_norm_gain, cfg.norm) @ model.head.T.astype(np.float64)
    return embedded, states, logits


def forward(model: TransformerModel, topology: Topology, batch,
            workers: int = 1, noise_fn=None):
    """Run retained blocks in ascending order over a batch of id sequences.

    Returns (per-sample final logits, HiddenTrace). `noise_fn`, when given,
    is called as noise_fn(dense_layer, sample_index, state) after each
    executed block and must return the (possibly perturbed) state.
    """
    topology.validate_against(model.config)
    batch = list(batch)
    if len(batch) == 0:
        raise ArgumentError("empty batch")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda iv: _forward_one(model, topology, iv[1], noise_fn, iv[0]),
                enumerate(batch)))
    else:
        results = [_forward_one(model, topology, ids, noise_fn, i)
                   for i, ids in enumerate(batch)]
    embedded = [r[0] for r in results]
    layer_states = [[r[1][k] for r in results] for k in range(len(topology))]
    logits = [r[2] for r in results]
    trace = HiddenTrace(topology=topology, embedded=embedded, layers=layer_states)
    return logits, trace


def model_checksum(model: TransformerModel) -> str:
    """SHA-256 over every tensor's float32 bytes in canonical order."""
    h = hashlib.sha256()
    for name, tensor in iter_tensors(model):
        h.update(name.encode())
        h.update(_f32(tensor).tobytes())
    return h.hexdigest()


def iter_tensors(model: TransformerModel):
    yield "tok_emb", model.tok_emb
    yield "pos_emb", model.pos_emb
    for layer, b in enumerate(model.blocks):
        for tname in BLOCK_TENSORS:
            yield f"block{layer:02d}.{tname}", getattr(b, tname)
    yield "final_norm_gain", model.final_norm_gain
    yield "head", model.head


def save_weights(model: TransformerModel, path: str) -> dict:
    """Write manifest.json + weights.bin (concatenated row-major LE float32)."""
    os.makedirs(path, exist_ok=True)
    cfg = model.config
    table = []
    offset = 0
    chunks = []
    for name, tensor in iter_tensors(model):
        raw = _f32(tensor).tobytes()
        table.append({
            "name": name,
            "shape": list(tensor.shape),
            "offset": offset,
            "length": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "version": WEIGHTS_VERSION,
        "config": {
            "n_layers": cfg.n_layers, "d_model": cfg.d_model, "n_heads": cfg.n_heads,
            "d_ff": cfg.d_ff, "vocab_size": cfg.vocab_size, "max_seq": cfg.max_seq,
            "norm_kind": cfg.norm.kind, "norm_epsilon": cfg.norm.epsilon,
            "seed": cfg.seed,
        },
        "endianness": "little",
        "tensors": table,
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(os.path.join(path, "weights.bin"), "wb") as f:
        f.write(b"".join(chunks))
    return {"path": path, "tensors": len(table), "bytes": offset}


def load_weights(path: str) -> TransformerModel:
    """Load a weight bundle; verifies sizes and per-tensor checksums."""
    try:
        with open(os.path.join(path, "manifest.json")) as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise CorruptFileError(f"missing manifest: {e}") from e
    version = manifest.get("version", "")
    major = version.split("/")[0]
    if major != WEIGHTS_VERSION.split("/")[0] or version != WEIGHTS_VERSION:
        raise VersionError(f"unsupported weights version {version!r}")
    c = manifest["config"]
    config = ModelConfig(
        n_layers=c["n_layers"], d_model=c["d_model"], n_heads=c["n_heads"],
        d_ff=c["d_ff"], vocab_size=c["vocab_size"], max_seq=c["max_seq"],
        norm=NormKind(c["norm_kind"], c["norm_epsilon"]), seed=c["seed"],
    )
    with open(os.path.join(path, "weights.bin"), "rb") as f:
        blob = f.read()
    tensors = {}
    for entry in manifest["tensors"]:
        lo, n = entry["offset"], entry["length"]
        raw = blob[lo:lo + n]
        if len(raw) != n:
            raise CorruptFileError(f"tensor {entry['name']} truncated")
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CorruptFileError(f"tensor {entry['name']} checksum mismatch")
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
        tensors[entry["name"]] = arr
    expected = [name for name, _ in _expected_tensor_names(config)]
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise CorruptFileError(f"missing tensors: {missing[:4]}")
    blocks = []
    for layer in range(config.n_layers):
        kw = {t: tensors[f"block{layer:02d}.{t}"] for t in BLOCK_TENSORS}
        blocks.append(BlockWeights(**kw))
    return TransformerModel(
        config=config,
        tok_emb=tensors["tok_emb"],
        pos_emb=tensors["pos_emb"],
        blocks=blocks,
        final_norm_gain=tensors["final_norm_gain"],
        head=tensors["head"],
    )


def _expected_tensor_names(config: ModelConfig):
    yield "tok_emb", None
    yield "pos_emb", None
    for layer in range(config.n_layers):
        for t in BLOCK_TENSORS:
            yield f"block{layer:02d}.{t}", None
    yield "final_norm_gain", None
    yield "head", None
