"""Command-line surface: one binary, subcommand per capability.

Exit codes: 0 success, 1 validation error (bad flags, bad config values),
2 data error (missing or broken files). Primary outputs are JSON, JSON
lines, and CSV on stdout or under --out; timestamps appear only in run
metadata and are dropped under --deterministic.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, parse_config
from .decode import decode_greedy, decode_mature_greedy
from .errors import DataError, ParameterError, ReplayExhausted, TcdError
from .harness import load_dataset, run_suite
from .image import ImageBuffer, WatermarkSpec, embed_watermark, load_image, save_image
from .model import DecodeContext, LayerLogitStack, TraceModel, read_trace, token_id, validate_trace
from .select import (
    default_candidates,
    run_watermark_prepass,
    select_amateur_layer,
    select_visual_layer,
)
from .synth import build_dataset, write_synthetic_trace


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors (exit 1)."""

    def error(self, message):
        raise ParameterError(message)


def _anchor(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("anchor must be 'fx,fy'")
    return float(parts[0]), float(parts[1])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tcd", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tcd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_wm = sub.add_parser("watermark", help="composite a watermark onto an image")
    p_wm.add_argument("--in", dest="base", required=True, help="base image (PNG or PPM)")
    p_wm.add_argument("--wm", dest="wm", required=True, help="watermark image")
    p_wm.add_argument("--out", required=True, help="output image path")
    p_wm.add_argument("--alpha", type=float, default=0.8)
    p_wm.add_argument("--anchor", type=_anchor, default=(0.9, 0.9), metavar="FX,FY")
    p_wm.add_argument("--scale", type=float, default=1.0)
    p_wm.add_argument("--blend", choices=("additive", "convex"), default="additive")

    p_synth = sub.add_parser("synth", help="generate synthetic fixtures")
    synth_sub = p_synth.add_subparsers(dest="synth_kind", required=True)
    p_st = synth_sub.add_parser("trace", help="write a replayable synthetic archive")
    p_st.add_argument("--out", required=True)
    p_st.add_argument("--seed", type=int, default=5)
    p_st.add_argument("--samples", type=int, default=2)
    p_st.add_argument("--steps", type=int, default=6)
    p_sd = synth_sub.add_parser("dataset", help="write a synthetic eval dataset manifest")
    p_sd.add_argument("--suite", choices=("pope", "mme", "amber"), required=True)
    p_sd.add_argument("--out", required=True)
    p_sd.add_argument("--n", type=int, default=None)
    p_sd.add_argument("--seed", type=int, default=None)

    p_sel = sub.add_parser("select", help="inspect layer selection for a trace sample")
    p_sel.add_argument("--trace", required=True, help="trace directory")
    p_sel.add_argument("--sample", default=None, help="sample id (default: first)")
    p_sel.add_argument("--mode", choices=("change", "log"), default="change")
    p_sel.add_argument("--k", type=int, default=20, help="amateur candidate count")
    p_sel.add_argument("--answer", default=None, help="probe answer token (default: manifest)")
    p_sel.add_argument("--emit-heatmap", default=None, metavar="CSV",
                       help="scan every sample and write per-layer selection counts")

    p_dec = sub.add_parser("decode", help="run fused decoding over a trace sample")
    p_dec.add_argument("--trace", required=True)
    p_dec.add_argument("--sample", required=True)
    p_dec.add_argument("--config", default=None, help="JSON config file")
    p_dec.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_dec.add_argument("--lambda", dest="lam", type=float, default=None)
    p_dec.add_argument("--beta", type=float, default=None)
    p_dec.add_argument("--tau", type=float, default=None)
    p_dec.add_argument("--gain", choices=("change", "log"), default=None)
    p_dec.add_argument("--fusion", choices=("tri", "interp"), default=None)
    p_dec.add_argument("--k", type=int, default=None)
    p_dec.add_argument("--amateur", choices=("per-step", "static"), default=None)
    p_dec.add_argument("--max-tokens", type=int, default=None)
    p_dec.add_argument("--visual-layer", type=int, default=None,
                       help="skip the probe prepass and use this layer")
    p_dec.add_argument("--out", default=None, help="directory for the JSONL step log")

    p_eval = sub.add_parser("eval", help="run a metric suite over a dataset manifest")
    p_eval.add_argument("--suite", choices=("pope", "mme", "amber"), required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_eval.add_argument("--lambda", dest="lam", type=float, default=None)
    p_eval.add_argument("--beta", type=float, default=None)
    p_eval.add_argument("--gain", choices=("change", "log"), default=None)
    p_eval.add_argument("--fusion", choices=("tri", "interp"), default=None)
    p_eval.add_argument("--k", type=int, default=None)
    p_eval.add_argument("--jobs", type=int, default=None)
    p_eval.add_argument("--out", default=None, help="directory for JSONL logs and CSV summary")
    p_eval.add_argument("--deterministic", action="store_true", default=None,
                        help="omit timestamps from run metadata")

    p_trace = sub.add_parser("trace", help="trace archive utilities")
    trace_sub = p_trace.add_subparsers(dest="trace_cmd", required=True)
    p_tv = trace_sub.add_parser("validate", help="verify checksums, shapes, and greedy replay")
    p_tv.add_argument("directory")
    p_tv.add_argument("--no-check-greedy", action="store_true")

    # Hyphenated alias for the same validator.
    p_tv2 = sub.add_parser("trace-validate", help="alias for 'trace validate'")
    p_tv2.add_argument("directory")
    p_tv2.add_argument("--no-check-greedy", action="store_true")

    return parser


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_watermark(args) -> int:
    base = load_image(args.base)
    spec = WatermarkSpec(
        image=load_image(args.wm),
        alpha=args.alpha,
        anchor=args.anchor,
        scale=args.scale,
        blend=args.blend,
    )
    out = embed_watermark(base, spec)
    save_image(out, args.out)
    _emit({"out": args.out, "width": out.width, "height": out.height, "channels": out.channels})
    return 0


def _cmd_synth(args) -> int:
    if args.synth_kind == "trace":
        info = write_synthetic_trace(args.out, seed=args.seed, samples=args.samples, steps=args.steps)
        _emit({"out": args.out, **info})
        return 0
    manifest = build_dataset(args.suite, n=args.n, seed=args.seed)
    Path(args.out).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _emit({"out": args.out, "suite": args.suite, "samples": len(manifest["samples"])})
    return 0


def _decode_overrides(args) -> dict:
    keys = ("lam", "beta", "tau", "gain", "fusion", "k", "amateur", "max_tokens", "jobs")
    names = {"lam": "lambda"}
    out = {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            out[names.get(key, key)] = value
    if getattr(args, "preset", None):
        out["preset"] = args.preset
    if getattr(args, "deterministic", None):
        out["deterministic"] = True
    return out


def _select_triple(archive, sample_id: str, answer: int, mode: str, k: int):
    model = TraceModel(archive, sample_id)
    prepass = model.prepass_stack()
    if prepass is None:
        raise DataError(f"sample {sample_id!r} has no recorded probe stack")
    visual, gains = select_visual_layer(prepass, answer, mode)
    first = LayerLogitStack(step_index=0, rows=model.sample.steps[0])
    amateur, jsds = select_amateur_layer(first, default_candidates(archive.num_layers, k))
    return visual, gains, amateur, jsds


def _cmd_select(args) -> int:
    archive = read_trace(args.trace)
    sample_ids = sorted(archive.samples)
    answer = _probe_answer_id(archive, args.answer)
    if args.emit_heatmap:
        counts_visual = {layer: 0 for layer in range(1, archive.num_layers + 1)}
        counts_amateur = {layer: 0 for layer in range(1, archive.num_layers + 1)}
        for sample_id in sample_ids:
            visual, _, amateur, _ = _select_triple(archive, sample_id, answer, args.mode, args.k)
            counts_visual[visual] += 1
            counts_amateur[amateur] += 1
        with open(args.emit_heatmap, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "visual_count", "amateur_count"])
            for layer in range(1, archive.num_layers + 1):
                writer.writerow([layer, counts_visual[layer], counts_amateur[layer]])
        _emit({"out": args.emit_heatmap, "samples": len(sample_ids)})
        return 0

    sample_id = args.sample or sample_ids[0]
    visual, gains, amateur, jsds = _select_triple(archive, sample_id, answer, args.mode, args.k)
    _emit(
        {
            "sample": sample_id,
            "mature": archive.num_layers,
            "amateur": amateur,
            "visual": visual,
            "mode": args.mode,
            "gain_profile": [float(g) for g in gains],
            "jsd_profile": [float(j) for j in jsds],
            "candidate_layers": list(archive.candidate_layers),
        }
    )
    return 0


def _probe_answer_id(archive, answer: str | None) -> int:
    text = answer
    if text is None:
        text = archive.meta.get("expected_answer", "8")
    return token_id(archive.vocab, text)


def _cmd_decode(args) -> int:
    cfg = parse_config(args.config, _decode_overrides(args))
    archive = read_trace(args.trace)
    model = TraceModel(archive, args.sample)
    decode_cfg = cfg.decode_config(model.vocab)
    if args.visual_layer is not None:
        visual = args.visual_layer
    else:
        wm = _trace_watermark_spec(cfg, archive)
        visual = run_watermark_prepass(model, None, wm, mode=decode_cfg.gain_mode).visual
    ctx = DecodeContext(question=model.sample.question, prefix=())
    try:
        result = decode_greedy(model, ctx, visual, decode_cfg)
    except ReplayExhausted as exc:
        result = exc.partial
    try:
        baseline = decode_mature_greedy(model, ctx, decode_cfg)
    except ReplayExhausted as exc:
        baseline = exc.partial
    lines = [
        {
            "step": s.step,
            "l_a": s.amateur,
            "l_v": s.visual,
            "plausible": s.plausible_count,
            "token_id": s.chosen,
            "token": model.vocab[s.chosen],
            "fused_score": s.fused_score,
        }
        for s in result.steps
    ]
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{args.sample}.steps.jsonl", "w") as fh:
            for line in lines:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
    else:
        for line in lines:
            print(json.dumps(line, sort_keys=True))
    _emit(
        {
            "sample": args.sample,
            "visual_layer": visual,
            "tokens": [model.vocab[t] for t in result.tokens],
            "baseline_tokens": [model.vocab[t] for t in baseline.tokens],
            "recorded_greedy": [model.vocab[t] for t in model.sample.greedy_tokens],
            "termination": result.termination,
        }
    )
    return 0


def _trace_watermark_spec(cfg, archive) -> WatermarkSpec:
    expected = archive.meta.get("expected_answer", cfg.expected_answer)
    probe = archive.meta.get("probe_question", cfg.probe_question)
    return WatermarkSpec(
        image=ImageBuffer.from_array(np.zeros((1, 1, 3), dtype=np.uint8)),
        alpha=cfg.alpha,
        anchor=cfg.anchor,
        scale=cfg.scale,
        probe_question=probe,
        expected_answer=expected,
    )


def _flatten(prefix: str, value, rows: list) -> None:
    if isinstance(value, dict):
        for key in sorted(value):
            _flatten(f"{prefix}.{key}" if prefix else str(key), value[key], rows)
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        rows.append((prefix, value))


def _cmd_eval(args) -> int:
    cfg = parse_config(args.config, _decode_overrides(args))
    manifest = load_dataset(args.dataset)
    if manifest["suite"] != args.suite:
        raise ParameterError(
            f"--suite {args.suite} does not match dataset suite {manifest['suite']!r}"
        )
    flag_keys = {"lam", "beta", "tau", "gain", "fusion", "k", "amateur", "max_tokens"}
    explicit = any(getattr(args, key, None) is not None for key in flag_keys)
    explicit = explicit or args.config is not None or args.preset is not None
    decode_cfg = cfg.decode_config() if explicit else None
    result = run_suite(manifest, cfg=decode_cfg, jobs=cfg.jobs)
    report = dict(result.report)
    for skip in report.get("skipped", []):
        print(f"warning: skipped sample {skip['id']}: {skip['reason']}", file=sys.stderr)
    if not cfg.deterministic:
        report["run"] = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "per_sample.jsonl", "w") as fh:
            for record in result.per_sample:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        rows: list = []
        _flatten("", {k: v for k, v in result.report.items() if k != "skipped"}, rows)
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerows(rows)
    _emit(report)
    return 0


def _cmd_trace_validate(args) -> int:
    report = validate_trace(args.directory, check_greedy=not args.no_check_greedy)
    _emit({"ok": True, **report})
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "watermark":
            return _cmd_watermark(args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "select":
            return _cmd_select(args)
        if args.command == "decode":
            return _cmd_decode(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "trace":
            return _cmd_trace_validate(args)
        if args.command == "trace-validate":
            return _cmd_trace_validate(args)
        raise ParameterError(f"unknown command {args.command!r}")
    except (ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TcdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
