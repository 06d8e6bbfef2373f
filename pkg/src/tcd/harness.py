"""Suite runner: dataset manifests in, metric reports and per-sample logs out.

A dataset manifest is a JSON object with a ``suite`` ("pope", "mme" or
"amber"), optional shared decode/watermark settings, and a list of samples.
Each sample supplies either an inline synthetic model config or a trace
sample id resolved against the manifest's trace directory. Samples are
independent; aggregation is order-free, so results do not depend on worker
count.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import resolve_stop_tokens
from .decode import DecodeConfig, decode_greedy, decode_mature_greedy
from .errors import ConfigError, ParameterError, ReplayExhausted, TraceError
from .image import DEFAULT_PROBE_QUESTION, ImageBuffer, WatermarkSpec, load_image
from .metrics import (
    BinarySample,
    GenerativeSample,
    amber_metrics,
    binary_metrics,
    extract_objects,
    mme_score,
    parse_binary_answer,
)
from .model import DecodeContext, SyntheticModel, TraceModel, read_trace
from .select import run_watermark_prepass
from .synth import config_from_entry

SUITES = ("pope", "mme", "amber")


@dataclass(frozen=True)
class SuiteResult:
    report: dict
    per_sample: tuple[dict, ...]


def load_dataset(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"dataset {path} is not valid JSON: {exc}") from exc
    return validate_dataset(manifest)


def validate_dataset(manifest: dict) -> dict:
    if not isinstance(manifest, dict):
        raise ConfigError("dataset manifest must be a JSON object")
    suite = manifest.get("suite")
    if suite not in SUITES:
        raise ConfigError(f"suite: must be one of {SUITES}, got {suite!r}")
    samples = manifest.get("samples")
    if not samples:
        raise ParameterError("dataset has no samples")
    for entry in samples:
        if "id" not in entry or "question" not in entry:
            raise ConfigError(f"sample entry missing id/question: {entry!r}")
        if suite in ("pope", "mme") and entry.get("label") not in ("yes", "no"):
            raise ConfigError(f"sample {entry.get('id')!r}: label must be yes/no")
        if suite == "mme" and ("image_id" not in entry or "subtask" not in entry):
            raise ConfigError(f"sample {entry.get('id')!r}: mme samples need image_id and subtask")
        if suite == "amber" and "gt_objects" not in entry:
            raise ConfigError(f"sample {entry.get('id')!r}: amber samples need gt_objects")
    return manifest


def _dataset_decode_config(manifest: dict, cfg: DecodeConfig | None, vocab) -> DecodeConfig:
    if cfg is not None:
        return cfg
    spec = dict(manifest.get("decode", {}))
    return DecodeConfig(
        lam=float(spec.get("lambda", 1.0)),
        beta=float(spec.get("beta", 0.1)),
        tau=float(spec.get("tau", 1.0)),
        gain_mode=spec.get("gain", "change"),
        candidate_k=int(spec.get("k", 20)),
        fusion_mode=spec.get("fusion", "tri"),
        amateur_mode=spec.get("amateur", "per-step"),
        max_tokens=int(spec.get("max_tokens", 16)),
        stop_tokens=resolve_stop_tokens(spec.get("stop_tokens", ()), vocab),
    )


def _watermark_spec(manifest: dict, wm: WatermarkSpec | None) -> WatermarkSpec | None:
    if wm is not None:
        return wm
    raw = manifest.get("watermark")
    if raw is None:
        return None
    image = None
    if raw.get("image"):
        image = load_image(raw["image"])
    # Placement fields only matter when a pixel asset is present; the probe
    # question and expected answer drive synthetic and replay prepasses.
    if image is None:
        image = ImageBuffer.from_array(np.zeros((1, 1, 3), dtype=np.uint8))
    return WatermarkSpec(
        image=image,
        alpha=float(raw.get("alpha", 0.8)),
        anchor=tuple(raw.get("anchor", (0.9, 0.9))),
        scale=float(raw.get("scale", 1.0)),
        probe_question=raw.get("probe_question") or DEFAULT_PROBE_QUESTION,
        expected_answer=raw.get("expected_answer", "8"),
    )


def _build_model(manifest: dict, entry: dict, trace_archive):
    if "synthetic" in entry:
        return SyntheticModel(config_from_entry(entry["synthetic"]))
    if trace_archive is None:
        raise ConfigError(f"sample {entry['id']!r}: no synthetic config and no trace dir")
    return TraceModel(trace_archive, entry.get("trace_sample", entry["id"]))


def _prompt(entry: dict, manifest: dict) -> str:
    suffix = manifest.get("prompt_suffix") or ""
    question = entry["question"]
    return f"{question}\n{suffix}" if suffix else question


def _generated_text(tokens, vocab) -> str:
    return " ".join(vocab[t] for t in tokens)


def _run_sample(manifest, entry, trace_archive, cfg, wm, sample_image):
    model = _build_model(manifest, entry, trace_archive)
    decode_cfg = _dataset_decode_config(manifest, cfg, model.vocab)
    prepass = run_watermark_prepass(model, sample_image, wm, mode=decode_cfg.gain_mode)
    ctx = DecodeContext(question=_prompt(entry, manifest), image=sample_image, prefix=())
    try:
        result = decode_greedy(model, ctx, prepass.visual, decode_cfg)
    except ReplayExhausted as exc:
        result = exc.partial
    try:
        baseline = decode_mature_greedy(model, ctx, decode_cfg)
    except ReplayExhausted as exc:
        baseline = exc.partial
    record = {
        "id": entry["id"],
        "question": entry["question"],
        "visual_layer": prepass.visual,
        "amateur_layers": [s.amateur for s in result.steps],
        "plausible_sizes": [s.plausible_count for s in result.steps],
        "tcd_tokens": list(result.tokens),
        "tcd_text": _generated_text(result.tokens, model.vocab),
        "baseline_tokens": list(baseline.tokens),
        "baseline_text": _generated_text(baseline.tokens, model.vocab),
        "termination": result.termination,
    }
    return record


def run_suite(
    manifest: dict,
    cfg: DecodeConfig | None = None,
    wm: WatermarkSpec | None = None,
    jobs: int = 1,
) -> SuiteResult:
    """Evaluate every sample and aggregate suite metrics.

    Per sample: probe prepass picks the visual layer, fused decoding and the
    mature-greedy baseline both run, and answers are parsed per suite rules.
    Missing trace samples are skipped with a warning entry, never fatal.
    """
    manifest = validate_dataset(manifest)
    suite = manifest["suite"]
    wm_spec = _watermark_spec(manifest, wm)
    if wm_spec is None:
        raise ConfigError("dataset defines no watermark probe and none was supplied")
    trace_archive = None
    if manifest.get("trace_dir"):
        trace_archive = read_trace(manifest["trace_dir"])

    records: list[dict] = []
    skipped: list[dict] = []

    def worker(entry):
        sample_image = load_image(entry["image"]) if entry.get("image") else None
        return _run_sample(manifest, entry, trace_archive, cfg, wm_spec, sample_image)

    entries = list(manifest["samples"])
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {entry["id"]: pool.submit(worker, entry) for entry in entries}
            for entry in entries:
                try:
                    records.append(futures[entry["id"]].result())
                except TraceError as exc:
                    skipped.append({"id": entry["id"], "reason": str(exc)})
    else:
        for entry in entries:
            try:
                records.append(worker(entry))
            except TraceError as exc:
                skipped.append({"id": entry["id"], "reason": str(exc)})

    records.sort(key=lambda r: r["id"])
    by_id = {r["id"]: r for r in records}
    live_entries = [e for e in entries if e["id"] in by_id]

    if suite == "pope":
        report = _pope_report(manifest, live_entries, by_id)
    elif suite == "mme":
        report = _mme_report(manifest, live_entries, by_id)
    else:
        report = _amber_report(manifest, live_entries, by_id)
    report["suite"] = suite
    report["name"] = manifest.get("name", "")
    report["n"] = len(records)
    report["skipped"] = skipped
    return SuiteResult(report=report, per_sample=tuple(records))


def _binary_samples(entries, by_id, key):
    return [
        BinarySample(
            sample_id=e["id"],
            gold=e["label"],
            predicted=parse_binary_answer(by_id[e["id"]][key]),
        )
        for e in entries
    ]


def _pope_report(manifest, entries, by_id) -> dict:
    out = {}
    for side, key in (("tcd", "tcd_text"), ("baseline", "baseline_text")):
        samples = _binary_samples(entries, by_id, key)
        pooled = binary_metrics(samples)
        splits = {}
        for split in sorted({e.get("split") for e in entries if e.get("split")}):
            subset = [
                s for s, e in zip(samples, entries) if e.get("split") == split
            ]
            if subset:
                splits[split] = binary_metrics(subset)
        side_report = dict(pooled)
        if splits:
            side_report["splits"] = splits
            # Pooled numbers are micro; the per-split mean is reported too
            # since the aggregate convention differs between harnesses.
            side_report["macro"] = {
                m: sum(s[m] for s in splits.values()) / len(splits)
                for m in ("accuracy", "precision", "recall", "f1")
            }
        out[side] = side_report
    return out


def _mme_report(manifest, entries, by_id) -> dict:
    out = {}
    for side, key in (("tcd", "tcd_text"), ("baseline", "baseline_text")):
        samples = {e["id"]: s for e, s in zip(entries, _binary_samples(entries, by_id, key))}
        groups: dict[str, dict] = {}
        for e in entries:
            groups.setdefault(e["image_id"], {"subtask": e["subtask"], "samples": []})
            groups[e["image_id"]]["samples"].append(samples[e["id"]])
        subtask_pairs: dict[str, list] = {}
        for image_id, group in groups.items():
            if len(group["samples"]) != 2:
                raise ParameterError(
                    f"image {image_id!r} contributes {len(group['samples'])} questions, need 2"
                )
            subtask_pairs.setdefault(group["subtask"], []).append(tuple(group["samples"]))
        scores = {
            subtask: mme_score(pairs, subtask) for subtask, pairs in sorted(subtask_pairs.items())
        }
        out[side] = {"subtasks": scores, "total": sum(scores.values())}
    return out


def _amber_report(manifest, entries, by_id) -> dict:
    lexicon = manifest.get("object_lexicon", [])
    out = {}
    for side, key in (("tcd", "tcd_text"), ("baseline", "baseline_text")):
        samples = [
            GenerativeSample(
                sample_id=e["id"],
                mentioned=extract_objects(by_id[e["id"]][key], lexicon),
                gt=frozenset(e["gt_objects"]),
                cog_prone=frozenset(e.get("cog_prone", ())),
            )
            for e in entries
        ]
        out[side] = amber_metrics(samples)
    return out
