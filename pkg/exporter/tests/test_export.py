import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from conftest import ASSETS, write_png
from tcd_exporter.export import (
    ExportError,
    ExportSession,
    SampleSpec,
    engine_cli,
    export,
    load_session,
)
from tcd_exporter.host import ToyLayeredLM

HEADER = struct.Struct("<4sHHII")


def parse_records(blob, num_layers, vocab_size):
    """Reference parse of a sample payload, independent of both packages."""
    records = {}
    pos = 0
    stride = HEADER.size + num_layers * vocab_size * 4
    while pos < len(blob):
        magic, version, l, v, step = HEADER.unpack_from(blob, pos)
        assert magic == b"TCDT" and version == 1 and (l, v) == (num_layers, vocab_size)
        rows = np.frombuffer(blob, dtype="<f4", count=l * v, offset=pos + HEADER.size)
        records[step] = rows.reshape(l, v)
        pos += stride
    return records


class TestHost:
    def test_deterministic(self):
        host = ToyLayeredLM(seed=3)
        toks = host.tokenize("is there a cat in the image?")
        assert host.layer_logits(toks, None).tobytes() == host.layer_logits(toks, None).tobytes()

    def test_mature_row_is_the_models_own_readout(self):
        # The hook path applied to the last block must reproduce the plain
        # forward readout exactly; otherwise replayed greedy would drift.
        host = ToyLayeredLM(seed=5)
        toks = host.tokenize("what is the last captcha number in the image?")
        stack = host.layer_logits(toks, None)
        greedy, stacks = host.greedy_generate(toks, None, 1)
        assert stacks[0].tobytes() == stack.tobytes()
        assert greedy[0] == int(np.argmax(stack[-1]))

    def test_layers_disagree(self):
        host = ToyLayeredLM(seed=9)
        stack = host.layer_logits(host.tokenize("is there a dog?"), None)
        assert stack.shape[0] == 4
        assert not np.array_equal(stack[0], stack[-1])

    def test_rejects_empty_sequence(self):
        with pytest.raises(ValueError):
            ToyLayeredLM().layer_logits([], None)


class TestSessionConfig:
    def test_roundtrip(self, session_dir):
        session = load_session(session_dir)
        assert session.steps == 6
        assert len(session.samples) == 3
        assert session.candidate_layers == (1, 2, 3)

    def test_expected_answer_must_tokenize(self, tmp_path):
        with pytest.raises(ExportError, match="expected answer"):
            ExportSession(
                out=str(tmp_path),
                samples=[SampleSpec("s0", None, "q")],
                expected_answer="zebra-token",
            )

    def test_needs_samples(self, tmp_path):
        with pytest.raises(ExportError, match="samples"):
            ExportSession(out=str(tmp_path), samples=[])


class TestExport:
    def test_archive_passes_engine_validator_with_greedy_replay(self, session_dir):
        session = load_session(session_dir)
        out = export(session)
        proc = engine_cli(["trace", "validate", str(out)])
        report = json.loads(proc.stdout)
        assert report["ok"] is True
        assert report["samples"] == 3
        assert report["steps_total"] == 18
        assert report["greedy_checked"] == 3
        print("[acceptance] PASS exporter archive validates; greedy replay equal "
              "(3 samples x 6 steps)")

    def test_recorded_greedy_matches_stored_mature_rows(self, session_dir):
        # Same check as the validator, done here with an independent parser.
        session = load_session(session_dir)
        out = export(session)
        manifest = json.loads((out / "manifest.json").read_text())
        for entry in manifest["samples"]:
            blob = (out / "samples" / f"{entry['id']}.tcdt").read_bytes()
            assert zlib.crc32(blob) == entry["crc32"]
            records = parse_records(blob, manifest["num_layers"], len(manifest["vocab"]))
            assert 0xFFFFFFFF in records, "probe record missing"
            replayed = [int(np.argmax(records[i][-1])) for i in range(entry["steps"])]
            assert replayed == entry["greedy_tokens"]

    def test_probe_image_byte_identical_to_engine_cli(self, session_dir, tmp_path):
        session = load_session(session_dir)
        out = export(session)
        sample = session.samples[0]
        reference = tmp_path / "reference.png"
        engine_cli(
            [
                "watermark",
                "--in", sample.image,
                "--wm", session.watermark_image,
                "--out", str(reference),
                "--alpha", "0.8",
                "--anchor", "0.9,0.9",
                "--scale", "1.0",
            ]
        )
        produced = out / "probe_images" / f"{sample.sample_id}.png"
        assert produced.read_bytes() == reference.read_bytes()
        print("[acceptance] PASS probe image byte-identical to engine watermark output")

    def test_alpha_zero_prepass_equals_unwatermarked_stack(self, tmp_path):
        image = write_png(tmp_path / "img.png", seed=42)
        session = ExportSession(
            out=str(tmp_path / "trace"),
            samples=[SampleSpec("s0", str(image), "Is there a dog?")],
            watermark_image=str(ASSETS / "f6ww8.png"),
            alpha=0.0,
            steps=5,
        )
        out = export(session)
        manifest = json.loads((out / "manifest.json").read_text())
        blob = (out / "samples" / "s0.tcdt").read_bytes()
        records = parse_records(blob, manifest["num_layers"], len(manifest["vocab"]))

        host = ToyLayeredLM(seed=session.model_seed, num_layers=session.num_layers)
        from PIL import Image

        pixels = np.asarray(Image.open(image).convert("RGB"), dtype=np.uint8)
        direct = host.layer_logits(host.tokenize(session.probe_question), pixels)
        assert records[0xFFFFFFFF].tobytes() == direct.tobytes()

    def test_watermark_in_main_pass_flag(self, tmp_path):
        image = write_png(tmp_path / "img.png", seed=87)
        kwargs = dict(
            samples=[SampleSpec("s0", str(image), "Is there a cat?")],
            watermark_image=str(ASSETS / "f6ww8.png"),
            alpha=0.9,
            steps=3,
        )
        plain = export(ExportSession(out=str(tmp_path / "plain"), **kwargs))
        marked = export(
            ExportSession(out=str(tmp_path / "marked"), watermark_in_main_pass=True, **kwargs)
        )
        blob_plain = (plain / "samples" / "s0.tcdt").read_bytes()
        blob_marked = (marked / "samples" / "s0.tcdt").read_bytes()
        manifest = json.loads((plain / "manifest.json").read_text())
        n, v = manifest["num_layers"], len(manifest["vocab"])
        # Identical probe stacks, different main-pass stacks.
        assert parse_records(blob_plain, n, v)[0xFFFFFFFF].tobytes() == \
            parse_records(blob_marked, n, v)[0xFFFFFFFF].tobytes()
        assert parse_records(blob_plain, n, v)[0].tobytes() != \
            parse_records(blob_marked, n, v)[0].tobytes()

    def test_no_temp_files_left_behind(self, session_dir):
        session = load_session(session_dir)
        out = export(session)
        leftovers = list(Path(out).rglob("*.tmp"))
        assert leftovers == []

    def test_manifest_records_candidate_layers_and_readout(self, session_dir):
        session = load_session(session_dir)
        out = export(session)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["candidate_layers"] == [1, 2, 3]
        assert manifest["meta"]["early_exit_readout"] == "final_norm_then_head"
        assert manifest["meta"]["expected_answer"] == "8"

    def test_engine_can_decode_exported_sample(self, session_dir):
        session = load_session(session_dir)
        out = export(session)
        proc = engine_cli(
            ["decode", "--trace", str(out), "--sample", "s0", "--k", "3", "--max-tokens", "5"]
        )
        tail = proc.stdout[proc.stdout.index('{\n') :]
        summary = json.loads(tail)
        assert len(summary["tokens"]) == 5
        assert summary["recorded_greedy"][:5] == summary["baseline_tokens"]

    def test_deterministic_across_runs(self, session_dir, tmp_path):
        session = load_session(session_dir)
        session.out = str(tmp_path / "t1")
        blobs1 = _payload_bytes(export(session))
        session.out = str(tmp_path / "t2")
        blobs2 = _payload_bytes(export(session))
        assert blobs1 == blobs2


def _payload_bytes(root):
    return {p.name: p.read_bytes() for p in sorted((Path(root) / "samples").glob("*.tcdt"))}


class TestExportCli:
    def test_session_run_with_validation(self, session_dir, tmp_path, capsys):
        from tcd_exporter.cli import main

        out = tmp_path / "cli-trace"
        assert main(["--session", str(session_dir), "--out", str(out), "--validate"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["validator"]["ok"] is True
        assert (out / "manifest.json").is_file()

    def test_missing_session_is_data_error(self):
        from tcd_exporter.cli import main

        assert main(["--session", "/no/such/session.json"]) == 2
