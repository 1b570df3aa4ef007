"""Portable activation-trace bundles (format ``trace-bundle/1``).

A bundle is a directory holding ``manifest.json`` plus one little-endian
binary file per array: per retained layer the decision-token states
(N x d_model, float32), optionally the pooled states (N x d_model,
float32), the option scores (N x M, float32), and a ``labels.bin``
(N uint32 correct indices). Checksums make the bundle self-verifying, so
traces exported from real models and synthetic traces are interchangeable
downstream.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import ArgumentError, CorruptBundleError, VersionError
from .model import Topology
from .probes import DecisionTrace, PooledTrace

BUNDLE_VERSION = "trace-bundle/1"


def _checksum(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _write_array(path, name, arr, dtype, table):
    raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    fname = name + ".bin"
    with open(os.path.join(path, fname), "wb") as f:
        f.write(raw)
    table[name] = {
        "file": fname,
        "shape": list(arr.shape),
        "dtype": np.dtype(dtype).str,
        "byte_length": len(raw),
        "sha256": _checksum(raw),
    }


def write_bundle(dtrace: DecisionTrace, ptrace: PooledTrace | None, labels,
                 path: str, model_name: str = "synthetic") -> dict:
    """Serialize traces + labels; returns a manifest summary."""
    if dtrace is None or len(dtrace.decision) == 0:
        raise ArgumentError("empty decision trace")
    labels = np.asarray(labels, dtype=np.uint32)
    n = dtrace.decision[0].shape[0]
    m = dtrace.scores[0].shape[1]
    if labels.shape != (n,):
        raise ArgumentError("labels must have one entry per sample")
    if np.any(labels >= m):
        raise ArgumentError("label index out of range")
    if ptrace is not None and ptrace.sample_ids != dtrace.sample_ids:
        raise ArgumentError("pooled trace covers different samples")

    os.makedirs(path, exist_ok=True)
    table: dict = {}
    signals = ["decision", "scores"] + (["pooled"] if ptrace is not None else [])
    for k in range(len(dtrace.decision)):
        _write_array(path, f"decision_{k:03d}", dtrace.decision[k], "<f4", table)
        _write_array(path, f"scores_{k:03d}", dtrace.scores[k], "<f4", table)
        if ptrace is not None:
            _write_array(path, f"pooled_{k:03d}", ptrace.pooled[k], "<f4", table)
    _write_array(path, "labels", labels, "<u4", table)

    manifest = {
        "version": BUNDLE_VERSION,
        "model_name": model_name,
        "n_layers": len(dtrace.decision),
        "d_model": int(dtrace.decision[0].shape[1]),
        "m_options": int(m),
        "n_samples": int(n),
        "signals": sorted(signals),
        "norm_kind": dtrace.norm_kind,
        "endianness": "little",
        "dense_layers": list(dtrace.topology.retained),
        "sample_ids": list(dtrace.sample_ids),
        "arrays": table,
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return {"path": path, "n_layers": manifest["n_layers"],
            "n_samples": n, "m_options": m, "signals": manifest["signals"]}


def _read_array(path, name, manifest):
    entry = manifest["arrays"].get(name)
    if entry is None:
        raise CorruptBundleError(f"array {name!r} missing from manifest")
    fpath = os.path.join(path, entry["file"])
    try:
        with open(fpath, "rb") as f:
            raw = f.read()
    except FileNotFoundError as e:
        raise CorruptBundleError(f"array file {entry['file']!r} missing") from e
    if len(raw) != entry["byte_length"]:
        raise CorruptBundleError(f"array {name!r}: byte length mismatch")
    if _checksum(raw) != entry["sha256"]:
        raise CorruptBundleError(f"array {name!r}: checksum mismatch")
    expected = int(np.prod(entry["shape"])) * np.dtype(entry["dtype"]).itemsize
    if expected != entry["byte_length"]:
        raise CorruptBundleError(f"array {name!r}: shape inconsistent with bytes")
    return np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])


def read_bundle(path: str):
    """Load and verify a bundle; returns (DecisionTrace, PooledTrace|None, labels)."""
    try:
        with open(os.path.join(path, "manifest.json")) as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise CorruptBundleError(f"missing manifest: {e}") from e
    except json.JSONDecodeError as e:
        raise CorruptBundleError(f"unreadable manifest: {e}") from e
    version = manifest.get("version", "")
    if version != BUNDLE_VERSION:
        raise VersionError(f"unsupported bundle version {version!r}")

    n_layers = manifest["n_layers"]
    n, m = manifest["n_samples"], manifest["m_options"]
    topology = Topology(tuple(manifest["dense_layers"]))
    ids = tuple(str(x) for x in manifest.get("sample_ids",
                                             [str(i) for i in range(n)]))
    has_pooled = "pooled" in manifest["signals"]

    decision, scores, pooled = [], [], []
    for k in range(n_layers):
        d = _read_array(path, f"decision_{k:03d}", manifest).astype(np.float64)
        s = _read_array(path, f"scores_{k:03d}", manifest).astype(np.float64)
        if d.shape != (n, manifest["d_model"]) or s.shape != (n, m):
            raise CorruptBundleError(f"layer {k}: unexpected array shape")
        decision.append(d)
        scores.append(s)
        if has_pooled:
            p = _read_array(path, f"pooled_{k:03d}", manifest).astype(np.float64)
            if p.shape != (n, manifest["d_model"]):
                raise CorruptBundleError(f"layer {k}: unexpected pooled shape")
            pooled.append(p)

    labels = _read_array(path, "labels", manifest).astype(np.int64)
    if labels.shape != (n,):
        raise CorruptBundleError("labels shape mismatch")
    if np.any(labels >= m):
        raise CorruptBundleError("label index out of range")

    dtrace = DecisionTrace(topology=topology, sample_ids=ids, decision=decision,
                           scores=scores, correct=labels,
                           norm_kind=manifest.get("norm_kind", "rms"))
    ptrace = (PooledTrace(topology=topology, sample_ids=ids, pooled=pooled)
              if has_pooled else None)
    return dtrace, ptrace, labels
