import json
import os

import numpy as np
import pytest
import torch

from traceexport.export import CheckpointError, ExportJob, TaskError, export
from traceexport.verify import verify

# cross-component oracle: the analysis toolkit reads what the exporter wrote
from prunelens import metrics as pl_metrics
from prunelens import trace_io as pl_trace_io


def make_checkpoint(path, n_layer=4, n_embd=32, seed=41):
    """Tiny local GPT-2-style checkpoint with a one-char-per-token vocabulary."""
    from tokenizers import Tokenizer, models
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    os.makedirs(path, exist_ok=True)
    vocab = {chr(i): i - 32 for i in range(32, 127)}
    vocab["[UNK]"] = len(vocab)
    tok = Tokenizer(models.BPE(vocab=vocab, merges=[], unk_token="[UNK]"))
    PreTrainedTokenizerFast(tokenizer_object=tok,
                            unk_token="[UNK]").save_pretrained(path)
    config = GPT2Config(vocab_size=len(vocab), n_positions=64, n_embd=n_embd,
                        n_layer=n_layer, n_head=4, bos_token_id=None,
                        eos_token_id=None)
    torch.manual_seed(seed)
    GPT2LMHeadModel(config).save_pretrained(path)
    return path


def write_task(path, n=16, options=("A", "B", "C", "D")):
    words = ["copper", "quartz", "maple", "basalt", "heron", "prism",
             "violet", "tundra", "ember", "lichen", "osprey", "garnet",
             "juniper", "cobalt", "thistle", "marble"]
    with open(path, "w") as f:
        for i in range(n):
            rec = {"id": f"q{i:03d}",
                   "question": f"{words[i % len(words)]} {i:02d} choose",
                   "options": list(options),
                   "answer_idx": i % len(options)}
            f.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    return make_checkpoint(str(tmp_path_factory.mktemp("ckpt") / "tiny"))


@pytest.fixture(scope="module")
def task_file(tmp_path_factory):
    return write_task(str(tmp_path_factory.mktemp("task") / "task.jsonl"))


@pytest.fixture(scope="module")
def exported(checkpoint, task_file, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("bundle") / "tiny-export")
    summary = export(ExportJob(checkpoint=checkpoint, task=task_file,
                               n_samples=16, out=out))
    return out, summary


class TestExport:
    def test_summary_shape(self, exported):
        _, summary = exported
        assert summary["n_layers"] == 4
        assert summary["n_samples"] == 16
        assert summary["m_options"] == 4
        assert summary["scoring_mode"] == "label-token"
        assert summary["norm_kind"] == "layer"

    def test_primary_reads_bundle_and_dm_matches_sidecar(self, exported):
        # [SECONDARY] acceptance: per-layer DM computed by the analysis
        # toolkit from the bundle agrees with the exporter sidecar to 1e-4
        out, _ = exported
        dtrace, ptrace, labels = pl_trace_io.read_bundle(out)
        assert ptrace is not None
        sidecar = json.load(open(os.path.join(out, "sidecar.json")))
        for k, dense in enumerate(dtrace.topology.retained):
            primary_dm = pl_metrics.decision_margin(dtrace, dense)
            assert primary_dm == pytest.approx(sidecar["dm"][str(k)], abs=1e-4)

    def test_final_argmax_agrees_with_runtime(self, exported, checkpoint, task_file):
        # lens-at-depth consistency: the final layer's stored scores pick the
        # same label as the model's own next-token distribution, 16/16
        from transformers import AutoModelForCausalLM, AutoTokenizer
        out, _ = exported
        dtrace, _, _ = pl_trace_io.read_bundle(out)
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = AutoModelForCausalLM.from_pretrained(checkpoint)
        model.eval()
        records = [json.loads(l) for l in open(task_file)]
        agree = 0
        with torch.no_grad():
            for i, rec in enumerate(records):
                ids = tokenizer.encode(rec["question"], add_special_tokens=False)
                logits = model(torch.tensor([ids])).logits[0, -1]
                label_ids = [tokenizer.encode(o, add_special_tokens=False)[0]
                             for o in rec["options"]]
                runtime_pick = int(np.argmax([float(logits[t]) for t in label_ids]))
                bundle_pick = int(np.argmax(dtrace.scores[-1][i]))
                agree += int(runtime_pick == bundle_pick)
        assert agree == 16

    def test_single_sample_bundle(self, checkpoint, task_file, tmp_path):
        out = str(tmp_path / "one")
        summary = export(ExportJob(checkpoint=checkpoint, task=task_file,
                                   n_samples=1, out=out))
        assert summary["n_samples"] == 1
        dtrace, _, labels = pl_trace_io.read_bundle(out)
        assert dtrace.scores[0].shape == (1, 4)

    def test_multi_token_option_forced_label_mode_fails(self, checkpoint, tmp_path):
        task = write_task(str(tmp_path / "multi.jsonl"), n=4,
                          options=("Alpha", "Beta", "Gamma", "Delta"))
        with pytest.raises(TaskError, match="Alpha"):
            export(ExportJob(checkpoint=checkpoint, task=task, n_samples=4,
                             out=str(tmp_path / "o"), scoring="label-token"))

    def test_multi_token_option_auto_falls_back(self, checkpoint, tmp_path):
        task = write_task(str(tmp_path / "multi.jsonl"), n=3,
                          options=("ax", "by", "cz", "dw"))
        out = str(tmp_path / "o")
        summary = export(ExportJob(checkpoint=checkpoint, task=task,
                                   n_samples=3, out=out))
        assert summary["scoring_mode"] == "length-normalized"
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["scoring_mode"] == "length-normalized"
        dtrace, _, _ = pl_trace_io.read_bundle(out)
        assert np.all(dtrace.scores[-1] <= 0)  # log-probabilities

    def test_missing_checkpoint_is_environment_error(self, task_file, tmp_path):
        with pytest.raises(CheckpointError):
            export(ExportJob(checkpoint=str(tmp_path / "nope"), task=task_file,
                             n_samples=2, out=str(tmp_path / "o")))


class TestVerify:
    def test_fresh_export_passes(self, exported):
        out, _ = exported
        report = verify(out)
        assert report.passed
        assert report.failures == []

    def test_flipped_byte_fails_with_checksum_name(self, checkpoint, task_file,
                                                   tmp_path):
        out = str(tmp_path / "b")
        export(ExportJob(checkpoint=checkpoint, task=task_file, n_samples=3,
                         out=out))
        target = os.path.join(out, "scores_001.bin")
        blob = bytearray(open(target, "rb").read())
        blob[5] ^= 0x10
        open(target, "wb").write(bytes(blob))
        report = verify(out)
        assert not report.passed
        assert any("checksum" in f and "scores_001" in f for f in report.failures)

    def test_missing_sidecar_degrades_with_warning(self, checkpoint, task_file,
                                                   tmp_path):
        out = str(tmp_path / "b")
        export(ExportJob(checkpoint=checkpoint, task=task_file, n_samples=3,
                         out=out))
        os.unlink(os.path.join(out, "sidecar.json"))
        report = verify(out)
        assert report.passed
        assert any("sidecar" in w for w in report.warnings)

    def test_cli_verify_exit_codes(self, exported):
        from traceexport.cli import main
        out, _ = exported
        assert main(["verify", "--bundle", out]) == 0
        assert main(["verify", "--bundle", out + "-nonexistent"]) == 1


class TestCliExport:
    def test_cli_round_trip(self, checkpoint, task_file, tmp_path, capsys):
        from traceexport.cli import main
        out = str(tmp_path / "cli-bundle")
        code = main(["export", "--checkpoint", checkpoint, "--task", task_file,
                     "--n", "4", "--out", out])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["n_samples"] == 4
        assert main(["verify", "--bundle", out]) == 0
