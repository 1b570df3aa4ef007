"""Command-line entry points.

Commands: analyze, prune, ablate, noise, align, correlate, fixture.
Each writes its CSV artifacts plus a deterministic run.json (inputs, seed,
format versions — no timestamps, no thread counts) into the output
directory; identical configs produce byte-identical artifact trees.

Flags override values from an optional key=value config file. The output
directory defaults to $PRUNELENS_OUTPUT_ROOT/<command>.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import alignment, fixtures, metrics, perturb, probes, pruning, report, tasks, trace_io
from .errors import ArgumentError, ConfigError, ToolkitError
from .model import (ModelConfig, Topology, build_synthetic, full_topology,
                    load_weights, save_weights)
from .numerics import NormKind

ENV_OUTPUT_ROOT = "PRUNELENS_OUTPUT_ROOT"


class ArtifactDir:
    """Tracks written artifacts so a failed run leaves no partial output."""

    def __init__(self, path):
        self.path = path
        self.created: list[str] = []
        os.makedirs(path, exist_ok=True)

    def file(self, name: str) -> str:
        full = os.path.join(self.path, name)
        self.created.append(full)
        return full

    def subdir(self, name: str) -> str:
        full = os.path.join(self.path, name)
        self.created.append(full)
        return full

    def discard(self):
        import shutil
        for f in reversed(self.created):
            if os.path.isdir(f):
                shutil.rmtree(f, ignore_errors=True)
            elif os.path.exists(f):
                os.unlink(f)


def _parse_config_file(path: str) -> dict:
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("["):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _parse_synthetic_spec(spec: str) -> ModelConfig:
    fields = {}
    for part in spec.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"bad synthetic spec fragment {part!r}")
        k, v = part.split("=", 1)
        fields[k.strip()] = v.strip()
    norm = NormKind(fields.pop("norm", "rms"))
    try:
        ints = {k: int(v) for k, v in fields.items()}
    except ValueError as e:
        raise ConfigError(f"bad synthetic spec value: {e}") from e
    required = ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq")
    missing = [k for k in required if k not in ints]
    if missing:
        raise ConfigError(f"synthetic spec missing fields: {missing}")
    return ModelConfig(norm=norm, **ints)


class Resolver:
    """Flag value > config-file value > default."""

    def __init__(self, args, file_values):
        self.args = vars(args)
        self.file = file_values

    def get(self, key, default=None, cast=None):
        v = self.args.get(key)
        if v is None:
            v = self.file.get(key)
        if v is None:
            return default
        return cast(v) if cast is not None and isinstance(v, str) else v


def _load_model(res: Resolver):
    sources = [s for s in ("synthetic", "weights", "bundle")
               if res.get(s) is not None]
    if len(sources) != 1:
        raise ArgumentError("exactly one model source required "
                            "(--synthetic | --weights | --bundle)")
    source = sources[0]
    if source == "synthetic":
        return build_synthetic(_parse_synthetic_spec(res.get("synthetic"))), source
    if source == "weights":
        return load_weights(res.get("weights")), source
    return res.get("bundle"), source


def _load_task(res: Resolver):
    path = res.get("task")
    if path is None:
        raise ArgumentError("--task is required for this command")
    return tasks.load_mcq(path)


def _parse_int_list(text: str):
    text = text.strip()
    if not text:
        return []
    return [int(x) for x in text.replace(" ", "").split(",") if x != ""]


def _bool_flag(res, key):
    v = res.get(key, default=False)
    if isinstance(v, str):
        return v.lower() in ("1", "true", "yes")
    return bool(v)


def _common_config(res: Resolver, keys) -> dict:
    cfg = {}
    for key in keys:
        v = res.get(key)
        if v is not None:
            cfg[key] = v
    return cfg


def _trace_for_analysis(res, model_or_bundle, source, seed, workers):
    if source == "bundle":
        dtrace, ptrace, _labels = trace_io.read_bundle(model_or_bundle)
        m = dtrace.scores[0].shape[1]
        counts = np.bincount(dtrace.correct, minlength=m).astype(np.float64)
        return dtrace, ptrace, counts / counts.sum()
    samples, dist = _load_task(res)
    topo_spec = res.get("topology")
    topology = (Topology(tuple(_parse_int_list(topo_spec)))
                if topo_spec else full_topology(model_or_bundle.config))
    scoring = res.get("scoring", default="label")
    log_probs = _bool_flag(res, "log_probs")
    dtrace, ptrace = probes.capture(model_or_bundle, topology, samples,
                                    workers=workers, log_probs=log_probs)
    if scoring == "length-normalized":
        for k, dense in enumerate(topology.retained):
            mat = np.stack([tasks.score_options(
                model_or_bundle, topology, s, layer=dense,
                mode="length-normalized").scores for s in samples])
            dtrace.scores[k] = mat
    elif scoring != "label":
        raise ArgumentError(f"unknown scoring mode {scoring!r}")
    return dtrace, ptrace, dist


def cmd_analyze(res: Resolver, out: ArtifactDir, seed: int, workers: int):
    model_or_bundle, source = _load_model(res)
    dtrace, _p, dist = _trace_for_analysis(res, model_or_bundle, source, seed, workers)
    alpha = res.get("alpha", default=metrics.KL_ALPHA_DEFAULT, cast=float)
    sustain = res.get("sustain", cast=int)
    rows = metrics.layer_rows(dtrace, dist, alpha=alpha)
    transition = metrics.detect_transition(
        [r.dm for r in rows], layers=[r.dense_layer for r in rows], sustain=sustain)
    report.write_layers_csv(out.file("layers.csv"), rows)
    report.write_transition_json(out.file("transition.json"), transition)
    return _common_config(res, ("synthetic", "weights", "bundle", "task",
                                "topology", "alpha", "sustain", "scoring",
                                "log_probs"))


def cmd_prune(res: Resolver, out: ArtifactDir, seed: int, workers: int):
    model, source = _load_model(res)
    if source == "bundle":
        raise ArgumentError("prune needs a model source, not a trace bundle")
    samples, _dist = _load_task(res)
    target = res.get("target", cast=int)
    if target is None:
        raise ArgumentError("--target is required")
    cfg = pruning.IPConfig(
        l_target=target,
        tau=res.get("tau", default=0.05, cast=float),
        calib_samples=res.get("calib", default=256, cast=int),
        seed=seed,
        restart_mode=res.get("restart_mode", default="dense-global"),
        workers=workers,
    )
    steps = pruning.run_ip(model, samples, cfg)
    n_dense = model.config.n_layers
    report.write_trajectory_csv(out.file("trajectory.csv"), steps, n_dense)
    report.write_removed_ids_csv(out.file("removed_ids.csv"), steps, n_dense)
    return _common_config(res, ("synthetic", "weights", "task", "target",
                                "tau", "calib", "restart_mode"))


def cmd_ablate(res: Resolver, out: ArtifactDir, seed: int, workers: int):
    model, source = _load_model(res)
    if source == "bundle":
        raise ArgumentError("ablate needs a model source, not a trace bundle")
    samples, dist = _load_task(res)
    spec = res.get("layers")
    if spec is None:
        raise ArgumentError("--layers is required")
    layers = _parse_int_list(spec)
    sustain = res.get("sustain", cast=int)
    rep = pruning.ablate(model, samples, dist, layers, sustain=sustain,
                         workers=workers)
    report.write_layers_csv(out.file("layers.csv"), rep.rows)
    report.write_transition_json(out.file("transition.json"), rep.transition)
    import json as _json
    with open(out.file("summary.json"), "w") as f:
        _json.dump({"removed": list(rep.removed), "accuracy": rep.accuracy,
                    "transition": rep.transition.transition},
                   f, indent=1, sort_keys=True)
    return _common_config(res, ("synthetic", "weights", "task", "layers", "sustain"))


def cmd_noise(res: Resolver, out: ArtifactDir, seed: int, workers: int):
    model, source = _load_model(res)
    if source == "bundle":
        raise ArgumentError("noise needs a model source, not a trace bundle")
    samples, _dist = _load_task(res)
    spec = res.get("variances")
    split = res.get("split", cast=int)
    if spec is None or split is None:
        raise ArgumentError("--variances and --split are required")
    variances = [float(x) for x in spec.replace(" ", "").split(",") if x]
    trials = res.get("trials", default=4, cast=int)
    rows = perturb.sweep(model, samples, variances, split_layer=split,
                         trials=trials, seed=seed, workers=workers)
    report.write_noise_csv(out.file("noise.csv"), rows)
    return _common_config(res, ("synthetic", "weights", "task", "variances",
                                "split", "trials"))


def cmd_align(res: Resolver, out: ArtifactDir, seed: int, workers: int):
    bundle_a, bundle_b = res.get("bundle_a"), res.get("bundle_b")
    if (bundle_a is None) != (bundle_b is None):
        raise ArgumentError("--bundle-a and --bundle-b go together")
    if bundle_a is not None:
        da, pa, _ = trace_io.read_bundle(bundle_a)
        db, pb, _ = trace_io.read_bundle(bundle_b)
        traces_a, traces_b = (da, pa), (db, pb)
    else:
        model, source = _load_model(res)
        if source == "bundle":
            raise ArgumentError("align takes --bundle-a/--bundle-b for bundles")
        samples, _dist = _load_task(res)
        limit = res.get("cka_samples", cast=int)
        if limit is not None:
            samples = samples[:limit]
        topo_spec = res.get("topology")
        if topo_spec is None:
            raise ArgumentError("--topology is required with a model source")
        pruned_topo = Topology(tuple(_parse_int_list(topo_spec)))
        traces_a = probes.capture(model, pruned_topo, samples, workers=workers)
        traces_b = probes.capture(model, full_topology(model.config), samples,
                                  workers=workers)
    for signal in alignment.SIGNALS:
        try:
            mat = alignment.alignment_matrix(traces_a, traces_b, signal)
        except ArgumentError as e:
            if "pooled signal absent" in str(e):
                continue
            raise
        report.write_cka_csv(out.file(f"cka_{signal}.csv"), mat)
        report.write_best_match_csv(out.file(f"best_{signal}.csv"),
                                    alignment.best_match(mat))
    return _common_config(res, ("synthetic", "weights", "task", "topology",
                                "bundle_a", "bundle_b", "cka_samples"))


def cmd_correlate(res: Resolver, out: ArtifactDir, seed: int, workers: int):
    points_path = res.get("points")
    if points_path is None:
        raise ArgumentError("--points is required")
    points = report.read_points_csv(points_path)
    permutations = res.get("permutations", default=report.PERMUTATIONS_DEFAULT,
                           cast=int)
    rep = report.correlate(points, permutations=permutations, seed=seed)
    report.write_correlation_csv(out.file("correlation.csv"), rep)
    return _common_config(res, ("points", "permutations"))


def cmd_fixture(res: Resolver, out: ArtifactDir, seed: int, workers: int):
    n_layers = res.get("n_layers", default=8, cast=int)
    transition_at = res.get("transition_at", default=4, cast=int)
    n_samples = res.get("samples", default=12, cast=int)
    cfg = fixtures.staged_config(n_layers=n_layers, seed=seed)
    model = fixtures.plant_staged_fixture(cfg, transition_at)
    save_weights(model, out.subdir("staged_model"))
    fixtures.write_staged_task(out.file("staged_task.jsonl"), n_samples=n_samples)
    return _common_config(res, ("n_layers", "transition_at", "samples"))


COMMANDS = {
    "analyze": cmd_analyze,
    "prune": cmd_prune,
    "ablate": cmd_ablate,
    "noise": cmd_noise,
    "align": cmd_align,
    "correlate": cmd_correlate,
    "fixture": cmd_fixture,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunelens",
        description="Decision-margin diagnostics for layer-pruned transformers")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file; flags override")
        p.add_argument("--out", help=f"output dir (default ${ENV_OUTPUT_ROOT}/<command>)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--synthetic", help="model spec: n_layers=..,d_model=..,...")
        p.add_argument("--weights", help="weight-bundle directory")
        p.add_argument("--bundle", help="trace-bundle directory")
        p.add_argument("--task", help="task jsonl file")
        p.add_argument("--topology", help="comma-separated retained dense indices")
        p.add_argument("--sustain", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--scoring", choices=["label", "length-normalized"])
        p.add_argument("--log-probs", dest="log_probs", action="store_const",
                       const=True)
        p.add_argument("--target", type=int)
        p.add_argument("--tau", type=float)
        p.add_argument("--calib", type=int)
        p.add_argument("--restart-mode", dest="restart_mode",
                       choices=["dense-global", "best-state"])
        p.add_argument("--layers")
        p.add_argument("--variances")
        p.add_argument("--split", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--bundle-a", dest="bundle_a")
        p.add_argument("--bundle-b", dest="bundle_b")
        p.add_argument("--cka-samples", dest="cka_samples", type=int)
        p.add_argument("--points")
        p.add_argument("--permutations", type=int)
        p.add_argument("--n-layers", dest="n_layers", type=int)
        p.add_argument("--transition-at", dest="transition_at", type=int)
        p.add_argument("--samples", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    file_values = {}
    if args.config:
        try:
            file_values = _parse_config_file(args.config)
        except (OSError, ToolkitError) as e:
            print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
            return 1
    res = Resolver(args, file_values)
    out_path = res.get("out")
    if out_path is None:
        root = os.environ.get(ENV_OUTPUT_ROOT)
        if root is None:
            print(f"error: ArgumentError: --out not given and ${ENV_OUTPUT_ROOT} unset",
                  file=sys.stderr)
            return 1
        out_path = os.path.join(root, args.command)
    seed = res.get("seed", default=0, cast=int)
    workers = res.get("workers", default=1, cast=int)
    out = ArtifactDir(out_path)
    try:
        config = COMMANDS[args.command](res, out, seed, workers)
        report.write_run_json(out.file("run.json"), args.command, config, seed)
    except Exception as e:
        out.discard()
        message = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
