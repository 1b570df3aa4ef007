#!/usr/bin/env python3
"""Regenerate frozen fixture data.

Writes data/staged_task.jsonl (the bundled fixture task) and
tests/data/golden_logits.json (golden forward outputs for a small synthetic
model, frozen once and used to pin build_synthetic + forward against
regressions). Run from the repo root.
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from prunelens.fixtures import write_staged_task
from prunelens.model import ModelConfig, build_synthetic, forward, full_topology, model_checksum
from prunelens.numerics import NormKind

ROOT = os.path.join(os.path.dirname(__file__), "..")

GOLDEN_CONFIG = dict(n_layers=6, d_model=32, n_heads=4, d_ff=48,
                     vocab_size=64, max_seq=16, seed=5)
GOLDEN_PROMPT = [3, 17, 42, 63, 0, 9]


def main():
    task_path = os.path.join(ROOT, "data", "staged_task.jsonl")
    write_staged_task(task_path)
    print("wrote", task_path)

    config = ModelConfig(norm=NormKind("rms"), **GOLDEN_CONFIG)
    model = build_synthetic(config)
    logits, _ = forward(model, full_topology(config), [GOLDEN_PROMPT])
    payload = {
        "config": GOLDEN_CONFIG,
        "norm": "rms",
        "prompt": GOLDEN_PROMPT,
        "model_sha256": model_checksum(model),
        "final_logits": [[repr(float(v)) for v in row] for row in logits[0]],
    }
    out = os.path.join(ROOT, "tests", "data", "golden_logits.json")
    with open(out, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    print("wrote", out)


if __name__ == "__main__":
    main()
