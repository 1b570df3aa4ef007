#!/usr/bin/env python3
"""End-to-end demo on the staged fixture.

Emits the fixture model + task, then runs the full analysis battery into
out/staged_demo/: per-layer decision metrics, a greedy pruning trajectory,
targeted ablation of the planted transition layer, the phase noise sweep,
CKA alignment of a decisive-phase-pruned topology against dense, and a
correlation report over synthetic (transition, threshold) points.
Everything is deterministic; rerunning reproduces identical artifacts.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from prunelens.cli import main

OUT = os.path.join(os.path.dirname(__file__), "..", "out", "staged_demo")


def run(args):
    print("$ prunelens " + " ".join(args))
    code = main(args)
    if code != 0:
        sys.exit(code)


def step(args):
    run(args + ["--seed", "7"])


if __name__ == "__main__":
    fixture = os.path.join(OUT, "fixture")
    step(["fixture", "--out", fixture, "--transition-at", "4"])
    model = ["--weights", os.path.join(fixture, "staged_model"),
             "--task", os.path.join(fixture, "staged_task.jsonl")]

    step(["analyze", *model, "--out", os.path.join(OUT, "analyze")])
    step(["prune", *model, "--target", "2", "--tau", "1.0",
          "--out", os.path.join(OUT, "prune")])
    step(["ablate", *model, "--layers", "4",
          "--out", os.path.join(OUT, "ablate")])
    step(["noise", *model, "--variances", "0.02,0.5", "--split", "4",
          "--trials", "4", "--out", os.path.join(OUT, "noise")])
    step(["align", *model, "--topology", "0,1,2,3,7",
          "--out", os.path.join(OUT, "align")])

    points = os.path.join(OUT, "points.csv")
    os.makedirs(OUT, exist_ok=True)
    with open(points, "w") as f:
        f.write("transition_layer,critical_threshold\n")
        for i in range(12):
            f.write(f"{10 + i},{0.9 - 0.05 * i}\n")
    step(["correlate", "--points", points, "--out", os.path.join(OUT, "correlate")])

    print(f"\nartifacts under {os.path.normpath(OUT)}")
