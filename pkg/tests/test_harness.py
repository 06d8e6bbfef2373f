import json

import pytest

from tcd.errors import ConfigError, ParameterError
from tcd.harness import load_dataset, run_suite, validate_dataset
from tcd.synth import (
    build_amber_dataset,
    build_mme_dataset,
    build_pope_dataset,
    write_synthetic_trace,
)


class TestDatasetValidation:
    def test_unknown_suite(self):
        with pytest.raises(ConfigError, match="suite"):
            validate_dataset({"suite": "nope", "samples": [{}]})

    def test_empty_samples(self):
        with pytest.raises(ParameterError, match="samples"):
            validate_dataset({"suite": "pope", "samples": []})

    def test_bad_label(self):
        manifest = build_pope_dataset(4, seed=1)
        manifest["samples"][0]["label"] = "maybe"
        with pytest.raises(ConfigError, match="label"):
            validate_dataset(manifest)

    def test_load_roundtrip(self, tmp_path):
        manifest = build_pope_dataset(4, seed=1)
        path = tmp_path / "ds.json"
        path.write_text(json.dumps(manifest))
        assert load_dataset(path)["suite"] == "pope"

    def test_load_bad_json(self, tmp_path):
        path = tmp_path / "ds.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_dataset(path)


class TestPopeSuite:
    def test_fused_beats_baseline_by_construction(self):
        manifest = build_pope_dataset(24, seed=3)
        result = run_suite(manifest)
        assert result.report["tcd"]["accuracy"] == 1.0
        assert result.report["baseline"]["accuracy"] == pytest.approx(0.5)
        assert result.report["n"] == 24

    def test_reports_micro_and_macro(self):
        result = run_suite(build_pope_dataset(12, seed=5))
        for side in ("tcd", "baseline"):
            report = result.report[side]
            assert set(report["splits"]) == {"random", "popular", "adversarial"}
            assert "macro" in report
            assert 0.0 <= report["macro"]["accuracy"] <= 1.0

    def test_deterministic_across_runs_and_jobs(self):
        manifest = build_pope_dataset(12, seed=9)
        a = run_suite(manifest, jobs=1)
        b = run_suite(manifest, jobs=4)
        assert a.report == b.report
        assert a.per_sample == b.per_sample

    def test_per_sample_records_shape(self):
        result = run_suite(build_pope_dataset(4, seed=2))
        record = result.per_sample[0]
        assert {"id", "visual_layer", "tcd_text", "baseline_text", "termination"} <= set(record)
        assert record["visual_layer"] >= 2

    def test_prepass_recovers_fixture_probe_layer(self):
        manifest = build_pope_dataset(8, seed=4)
        result = run_suite(manifest)
        by_id = {e["id"]: e for e in manifest["samples"]}
        for record in result.per_sample:
            expected = by_id[record["id"]]["synthetic"]["injections"][0]["layer"]
            assert record["visual_layer"] == expected


class TestMmeSuite:
    def test_scores_within_range_and_fused_wins(self):
        result = run_suite(build_mme_dataset(10, seed=6))
        tcd = result.report["tcd"]
        base = result.report["baseline"]
        assert set(tcd["subtasks"]) == {"existence", "count"}
        for value in tcd["subtasks"].values():
            assert 0.0 <= value <= 200.0
        assert tcd["total"] >= base["total"]
        assert tcd["total"] == pytest.approx(400.0)  # fixture is fully recoverable

    def test_unpaired_image_rejected(self):
        manifest = build_mme_dataset(4, seed=6)
        manifest["samples"] = manifest["samples"][:-1]
        with pytest.raises(ParameterError, match="contributes"):
            run_suite(manifest)


class TestAmberSuite:
    def test_fused_reduces_hallucination(self):
        result = run_suite(build_amber_dataset(16, seed=8))
        tcd = result.report["tcd"]
        base = result.report["baseline"]
        assert tcd["chair"] < base["chair"]
        assert tcd["hal_rate"] < base["hal_rate"]
        assert tcd["chair"] == 0.0
        assert 0.0 <= base["chair"] <= 1.0
        assert tcd["cover"] == 1.0


class TestTraceBackedSuite:
    def test_missing_trace_sample_skipped_with_warning(self, tmp_path):
        write_synthetic_trace(tmp_path / "tr", seed=5, samples=2, steps=4)
        manifest = {
            "suite": "pope",
            "trace_dir": str(tmp_path / "tr"),
            "watermark": {"expected_answer": "8"},
            "decode": {"lambda": 1.0, "beta": 0.1, "k": 2, "max_tokens": 1},
            "samples": [
                {"id": "s000", "question": "Is there a dog in the image?", "label": "yes"},
                {"id": "missing", "question": "Is there a cat in the image?", "label": "no"},
            ],
        }
        result = run_suite(manifest)
        assert result.report["n"] == 1
        assert len(result.report["skipped"]) == 1
        assert result.report["skipped"][0]["id"] == "missing"
