import json
import os

import numpy as np
import pytest

from prunelens.alignment import alignment_matrix
from prunelens.errors import ArgumentError, CorruptBundleError, VersionError
from prunelens.metrics import decision_margin, kl_to_labels, option_frequency
from prunelens.model import full_topology
from prunelens.probes import capture
from prunelens.trace_io import read_bundle, write_bundle


@pytest.fixture()
def written(staged, tmp_path):
    model, samples = staged
    dtrace, ptrace = capture(model, full_topology(model.config), samples)
    path = str(tmp_path / "bundle")
    summary = write_bundle(dtrace, ptrace, dtrace.correct, path)
    return dtrace, ptrace, path, summary


class TestRoundTrip:
    def test_metrics_survive_float32(self, written, staged_labels):
        dtrace, _, path, _ = written
        loaded, pooled, labels = read_bundle(path)
        assert pooled is not None
        assert loaded.sample_ids == dtrace.sample_ids
        for dense in loaded.topology.retained:
            assert decision_margin(loaded, dense) == pytest.approx(
                decision_margin(dtrace, dense), abs=1e-6)
            assert np.allclose(option_frequency(loaded, dense),
                               option_frequency(dtrace, dense))
        assert kl_to_labels(option_frequency(loaded, 0), staged_labels) >= 0

    def test_arrays_bit_exact_at_float32(self, written):
        dtrace, ptrace, path, _ = written
        loaded, pooled, _ = read_bundle(path)
        for k in range(len(dtrace.decision)):
            assert np.array_equal(loaded.decision[k],
                                  dtrace.decision[k].astype(np.float32))
            assert np.array_equal(pooled.pooled[k],
                                  ptrace.pooled[k].astype(np.float32))

    def test_downstream_alignment_accepts_reloaded(self, written, staged_traces):
        _, _, path, _ = written
        loaded = read_bundle(path)
        mat = alignment_matrix((loaded[0], loaded[1]), staged_traces, "decision")
        assert np.all(np.diag(mat.values) > 0.999)

    def test_empty_trace_rejected(self, tmp_path):
        with pytest.raises(ArgumentError):
            write_bundle(None, None, [], str(tmp_path / "b"))


class TestCorruption:
    def test_flipped_byte_detected(self, written):
        _, _, path, _ = written
        target = os.path.join(path, "decision_002.bin")
        blob = bytearray(open(target, "rb").read())
        blob[7] ^= 0x01
        open(target, "wb").write(bytes(blob))
        with pytest.raises(CorruptBundleError, match="checksum"):
            read_bundle(path)

    def test_hand_edited_shape_detected(self, written):
        _, _, path, _ = written
        mpath = os.path.join(path, "manifest.json")
        manifest = json.load(open(mpath))
        manifest["arrays"]["decision_000"]["shape"][0] += 1
        json.dump(manifest, open(mpath, "w"))
        with pytest.raises(CorruptBundleError):
            read_bundle(path)

    def test_missing_labels_file(self, written):
        _, _, path, _ = written
        os.unlink(os.path.join(path, "labels.bin"))
        with pytest.raises(CorruptBundleError, match="labels"):
            read_bundle(path)

    def test_unknown_version(self, written):
        _, _, path, _ = written
        mpath = os.path.join(path, "manifest.json")
        manifest = json.load(open(mpath))
        manifest["version"] = "trace-bundle/2"
        json.dump(manifest, open(mpath, "w"))
        with pytest.raises(VersionError):
            read_bundle(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CorruptBundleError):
            read_bundle(str(tmp_path / "nothing"))


class TestPartialBundles:
    def test_decision_only_bundle(self, staged, tmp_path, staged_traces):
        model, samples = staged
        dtrace, _ = staged_traces
        path = str(tmp_path / "b")
        summary = write_bundle(dtrace, None, dtrace.correct, path)
        assert "pooled" not in summary["signals"]
        loaded, pooled, _ = read_bundle(path)
        assert pooled is None
        with pytest.raises(ArgumentError, match="pooled"):
            alignment_matrix((loaded, pooled), (loaded, pooled), "pooled")

    def test_bundle_is_self_describing(self, written, staged_labels):
        # everything needed for DM/OF/KL/CKA comes from the directory alone
        _, _, path, _ = written
        loaded, pooled, labels = read_bundle(path)
        m = loaded.scores[0].shape[1]
        counts = np.bincount(labels, minlength=m).astype(float)
        dist = counts / counts.sum()
        assert np.allclose(dist, staged_labels)
        for dense in loaded.topology.retained:
            of = option_frequency(loaded, dense)
            assert kl_to_labels(of, dist) >= 0.0
        mat = alignment_matrix((loaded, pooled), (loaded, pooled), "pooled")
        assert mat.values.shape == (8, 8)
