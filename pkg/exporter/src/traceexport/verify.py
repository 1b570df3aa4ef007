"""Self-contained bundle verification.

Recomputes checksums and shape consistency from the manifest and, when the
sidecar is present, recomputes the per-layer decision margin from the
stored scores and compares it against the exporter's reference values.
A missing sidecar degrades to structural checks with a warning.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .bundle import BUNDLE_VERSION
from .export import SIDECAR_NAME


@dataclass
class VerifyReport:
    passed: bool = True
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def fail(self, message):
        self.passed = False
        self.failures.append(message)

    def warn(self, message):
        self.warnings.append(message)


def _read_array(path, name, manifest, report):
    entry = manifest.get("arrays", {}).get(name)
    if entry is None:
        report.fail(f"array {name!r} missing from manifest")
        return None
    fpath = os.path.join(path, entry["file"])
    if not os.path.exists(fpath):
        report.fail(f"array file {entry['file']!r} missing")
        return None
    raw = open(fpath, "rb").read()
    if len(raw) != entry["byte_length"]:
        report.fail(f"array {name!r}: byte length {len(raw)} != {entry['byte_length']}")
        return None
    if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
        report.fail(f"array {name!r}: checksum mismatch")
        return None
    expected = int(np.prod(entry["shape"])) * np.dtype(entry["dtype"]).itemsize
    if expected != entry["byte_length"]:
        report.fail(f"array {name!r}: shape inconsistent with byte length")
        return None
    return np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])


def verify(path: str) -> VerifyReport:
    report = VerifyReport()
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        report.fail("manifest.json missing")
        return report
    try:
        manifest = json.load(open(manifest_path))
    except json.JSONDecodeError as e:
        report.fail(f"manifest unreadable: {e}")
        return report
    if manifest.get("version") != BUNDLE_VERSION:
        report.fail(f"unsupported version {manifest.get('version')!r}")
        return report

    n_layers = manifest["n_layers"]
    n, m, d = manifest["n_samples"], manifest["m_options"], manifest["d_model"]
    scores = []
    for k in range(n_layers):
        dec = _read_array(path, f"decision_{k:03d}", manifest, report)
        if dec is not None and dec.shape != (n, d):
            report.fail(f"decision_{k:03d}: shape {dec.shape} != {(n, d)}")
        poo = _read_array(path, f"pooled_{k:03d}", manifest, report)
        if poo is not None and poo.shape != (n, d):
            report.fail(f"pooled_{k:03d}: shape {poo.shape} != {(n, d)}")
        sc = _read_array(path, f"scores_{k:03d}", manifest, report)
        if sc is not None and sc.shape != (n, m):
            report.fail(f"scores_{k:03d}: shape {sc.shape} != {(n, m)}")
        scores.append(sc)
    labels = _read_array(path, "labels", manifest, report)
    if labels is not None:
        if labels.shape != (n,):
            report.fail(f"labels: shape {labels.shape} != {(n,)}")
        elif np.any(labels >= m):
            report.fail("labels: index out of range")

    sidecar_path = os.path.join(path, SIDECAR_NAME)
    if not os.path.exists(sidecar_path):
        report.warn("sidecar missing: structural checks only")
        return report
    if labels is None or any(s is None for s in scores):
        return report
    sidecar = json.load(open(sidecar_path))
    tolerance = sidecar.get("tolerance", 1e-4)
    for k in range(n_layers):
        ref = sidecar["dm"].get(str(k))
        if ref is None:
            report.fail(f"sidecar: missing dm for layer {k}")
            continue
        got = _dm(scores[k].astype(np.float64), labels)
        if abs(got - ref) > tolerance:
            report.fail(f"layer {k}: stored-score DM {got!r} deviates from "
                        f"sidecar {ref!r} beyond {tolerance}")
    final_argmax = [int(np.argmax(scores[-1][i])) for i in range(n)]
    if final_argmax != list(sidecar.get("final_argmax", final_argmax)):
        report.fail("final-layer argmax differs from sidecar")
    return report


def _dm(layer_scores, labels):
    total = 0.0
    for i, c in enumerate(labels):
        row = layer_scores[i]
        best_other = max(v for j, v in enumerate(row) if j != c)
        total += float(row[c]) - float(best_other)
    return total / len(labels)
