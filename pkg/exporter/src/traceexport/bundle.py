"""trace-bundle/1 writer.

This mirrors the on-disk contract of the analysis toolkit's trace reader:
manifest.json plus one little-endian binary per array (float32 states and
scores, uint32 labels), each entry carrying shape, byte length, and a
sha256 checksum. The format is the sole coupling between the exporter and
the analysis side.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

BUNDLE_VERSION = "trace-bundle/1"


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
        "sha256": hashlib.sha256(raw).hexdigest(),
    }


def write_bundle(path, *, model_name, dense_layers, sample_ids, decision,
                 pooled, scores, labels, norm_kind, extra=None) -> dict:
    """Write a complete bundle; returns the manifest."""
    os.makedirs(path, exist_ok=True)
    n_layers = len(decision)
    n, d = decision[0].shape
    m = scores[0].shape[1]
    table: dict = {}
    for k in range(n_layers):
        _write_array(path, f"decision_{k:03d}", decision[k], "<f4", table)
        _write_array(path, f"scores_{k:03d}", scores[k], "<f4", table)
        _write_array(path, f"pooled_{k:03d}", pooled[k], "<f4", table)
    _write_array(path, "labels", np.asarray(labels), "<u4", table)
    manifest = {
        "version": BUNDLE_VERSION,
        "model_name": model_name,
        "n_layers": n_layers,
        "d_model": int(d),
        "m_options": int(m),
        "n_samples": int(n),
        "signals": ["decision", "pooled", "scores"],
        "norm_kind": norm_kind,
        "endianness": "little",
        "dense_layers": list(dense_layers),
        "sample_ids": list(sample_ids),
        "arrays": table,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest
