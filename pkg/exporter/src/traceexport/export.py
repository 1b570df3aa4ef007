"""Capture per-layer decision traces from a pretrained checkpoint.

Hidden states are taken with forward hooks after each decoder block
(post-residual), then projected through the checkpoint's own final
normalization layer and LM head — the same lens convention at every
depth, so the final layer's readout coincides with the model's real
output distribution. All analytic work beyond the sidecar decision-margin
reference lives in the analysis toolkit; this module only records.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from .bundle import write_bundle

SIDECAR_NAME = "sidecar.json"
SIDECAR_TOLERANCE = 1e-4


class CheckpointError(RuntimeError):
    """Checkpoint could not be loaded in this environment."""


class TaskError(ValueError):
    """Task file or option labels incompatible with the checkpoint."""


@dataclass(frozen=True)
class ExportJob:
    checkpoint: str
    task: str
    n_samples: int
    out: str
    scoring: str = "auto"  # auto | label-token | length-normalized
    device: str = "cpu"

    def __post_init__(self):
        if self.n_samples < 1:
            raise TaskError("n_samples must be >= 1")
        if self.scoring not in ("auto", "label-token", "length-normalized"):
            raise TaskError(f"unknown scoring mode {self.scoring!r}")


def _locate(model):
    """Find (decoder blocks, final norm, lm head, norm kind tag)."""
    candidates = (
        ("transformer", "h", "ln_f"),
        ("model", "layers", "norm"),
        ("gpt_neox", "layers", "final_layer_norm"),
    )
    for attr, layers_name, norm_name in candidates:
        trunk = getattr(model, attr, None)
        if trunk is None:
            continue
        layers = getattr(trunk, layers_name, None)
        final_norm = getattr(trunk, norm_name, None)
        if layers is not None and final_norm is not None:
            break
    else:
        raise CheckpointError("unsupported architecture: no decoder layer stack found")
    head = getattr(model, "lm_head", None) or getattr(model, "embed_out", None)
    if head is None:
        raise CheckpointError("unsupported architecture: no LM head found")
    kind = "layer" if isinstance(final_norm, torch.nn.LayerNorm) else "rms"
    return list(layers), final_norm, head, kind


def load_task(path):
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                options = rec["options"]
                answer = int(rec["answer_idx"])
            except (KeyError, ValueError) as e:
                raise TaskError(f"{path}: line {lineno}: {e}") from e
            if len(options) < 2 or not (0 <= answer < len(options)):
                raise TaskError(f"{path}: line {lineno}: bad options/answer")
            records.append({"id": str(rec.get("id", f"line{lineno}")),
                            "question": rec["question"],
                            "options": [str(o) for o in options],
                            "answer_idx": answer})
    if not records:
        raise TaskError(f"{path}: no samples")
    return records


def _load_checkpoint(job):
    from transformers import AutoModelForCausalLM, AutoTokenizer
    try:
        tokenizer = AutoTokenizer.from_pretrained(job.checkpoint)
        model = AutoModelForCausalLM.from_pretrained(
            job.checkpoint, dtype=torch.float32)
    except Exception as e:
        raise CheckpointError(f"cannot load checkpoint {job.checkpoint!r}: {e}") from e
    model.to(job.device)
    model.eval()
    return tokenizer, model


def _resolve_scoring(job, tokenizer, records):
    option_ids = {}
    multi = None
    for rec in records:
        for opt in rec["options"]:
            if opt in option_ids:
                continue
            ids = tokenizer.encode(opt, add_special_tokens=False)
            option_ids[opt] = ids
            if len(ids) != 1 and multi is None:
                multi = opt
    if job.scoring == "label-token" and multi is not None:
        raise TaskError(
            f"option {multi!r} does not tokenize to a single token; "
            "label-token scoring impossible")
    if job.scoring == "auto":
        return ("label-token" if multi is None else "length-normalized"), option_ids
    return job.scoring, option_ids


def _lens(final_norm, head, state):
    return head(final_norm(state))


@torch.no_grad()
def export(job: ExportJob) -> dict:
    """Run the export; returns a manifest summary dict."""
    tokenizer, model = _load_checkpoint(job)
    layers, final_norm, head, norm_kind = _locate(model)
    records = load_task(job.task)[: job.n_samples]
    scoring, option_ids = _resolve_scoring(job, tokenizer, records)

    n_layers = len(layers)
    captured: list[torch.Tensor] = []
    hooks = []

    def hook(_module, _inputs, output):
        out = output[0] if isinstance(output, tuple) else output
        captured.append(out.detach())

    for layer in layers:
        hooks.append(layer.register_forward_hook(hook))

    decision = [[] for _ in range(n_layers)]
    pooled = [[] for _ in range(n_layers)]
    scores = [[] for _ in range(n_layers)]
    labels = []
    ids = []
    try:
        for rec in records:
            prompt_ids = tokenizer.encode(rec["question"], add_special_tokens=False)
            if len(prompt_ids) == 0:
                raise TaskError(f"sample {rec['id']}: empty prompt after tokenization")
            dpos = len(prompt_ids) - 1

            captured.clear()
            input_ids = torch.tensor([prompt_ids], device=job.device)
            model(input_ids)
            states = list(captured)
            if len(states) != n_layers:
                raise CheckpointError("hook capture count != layer count")

            for k in range(n_layers):
                h = states[k][0]
                decision[k].append(h[dpos].float().cpu().numpy())
                pooled[k].append(h.mean(dim=0).float().cpu().numpy())

            if scoring == "label-token":
                label_ids = [option_ids[o][0] for o in rec["options"]]
                if len(set(label_ids)) != len(label_ids):
                    raise TaskError(f"sample {rec['id']}: option label tokens collide")
                for k in range(n_layers):
                    logits = _lens(final_norm, head, states[k][0][dpos])
                    scores[k].append(
                        logits[torch.tensor(label_ids)].float().cpu().numpy())
            else:
                option_scores = [[] for _ in range(n_layers)]
                for opt in rec["options"]:
                    opt_ids = option_ids[opt]
                    seq = torch.tensor([prompt_ids + opt_ids], device=job.device)
                    captured.clear()
                    model(seq)
                    opt_states = list(captured)
                    for k in range(n_layers):
                        h = opt_states[k][0]
                        logps = []
                        for t, tok in enumerate(opt_ids):
                            pos = len(prompt_ids) - 1 + t
                            logits = _lens(final_norm, head, h[pos])
                            logps.append(torch.log_softmax(logits, dim=-1)[tok])
                        option_scores[k].append(float(torch.stack(logps).mean()))
                for k in range(n_layers):
                    scores[k].append(np.asarray(option_scores[k], dtype=np.float64))

            labels.append(rec["answer_idx"])
            ids.append(rec["id"])
    finally:
        for h in hooks:
            h.remove()

    decision = [np.stack(d) for d in decision]
    pooled = [np.stack(p) for p in pooled]
    scores = [np.stack(s) for s in scores]

    manifest = write_bundle(
        job.out,
        model_name=os.path.basename(os.path.normpath(job.checkpoint)),
        dense_layers=list(range(n_layers)),
        sample_ids=ids,
        decision=decision,
        pooled=pooled,
        scores=scores,
        labels=np.asarray(labels, dtype=np.uint32),
        norm_kind=norm_kind,
        extra={"scoring_mode": scoring},
    )

    sidecar = {
        "tolerance": SIDECAR_TOLERANCE,
        "scoring_mode": scoring,
        "dm": {str(k): _reference_dm(scores[k], labels) for k in range(n_layers)},
        "final_argmax": [int(np.argmax(scores[-1][i])) for i in range(len(ids))],
    }
    with open(os.path.join(job.out, SIDECAR_NAME), "w") as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)

    return {"path": job.out, "n_layers": n_layers, "n_samples": len(ids),
            "m_options": int(scores[0].shape[1]), "scoring_mode": scoring,
            "norm_kind": norm_kind}


def _reference_dm(layer_scores, labels):
    """Exporter-side decision margin over full-precision scores."""
    total = 0.0
    for i, c in enumerate(labels):
        row = layer_scores[i]
        best_other = max(v for j, v in enumerate(row) if j != c)
        total += float(row[c]) - float(best_other)
    return total / len(labels)
