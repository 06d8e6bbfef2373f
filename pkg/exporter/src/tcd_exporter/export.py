"""Export sessions: run the host over samples and write replay archives.

The archive layout is the engine's published trace interface and is written
here from scratch (manifest.json plus samples/<id>.tcdt, 16-byte record
headers, little-endian float32 payloads, CRC32 per sample file); nothing is
imported from the engine package. Watermark compositing for the probe pass
goes through the engine's own `watermark` subcommand so probe pixels are
byte-identical to what the engine would produce. All file writes are atomic
via temp-then-rename.
"""
from __future__ import annotations

import json
import os
import struct
import subprocess
import sys
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .host import DEFAULT_VOCAB, ToyLayeredLM

TRACE_MAGIC = b"TCDT"
TRACE_VERSION = 1
PREPASS_STEP = 0xFFFFFFFF
_HEADER = struct.Struct("<4sHHII")

DEFAULT_PROBE_QUESTION = "What is the last captcha number in the image?"


class ExportError(RuntimeError):
    pass


@dataclass
class SampleSpec:
    sample_id: str
    image: str | None
    question: str
    label: str = ""


@dataclass
class ExportSession:
    """Everything one export run needs; mirrors the engine config keys."""

    out: str
    samples: list
    model_seed: int = 7
    num_layers: int = 4
    d_model: int = 32
    heads: int = 2
    vocab: tuple = DEFAULT_VOCAB
    candidate_layers: tuple = ()
    steps: int = 6
    prompt_suffix: str = ""
    watermark_image: str | None = None
    alpha: float = 0.8
    anchor: tuple = (0.9, 0.9)
    scale: float = 1.0
    probe_question: str = DEFAULT_PROBE_QUESTION
    expected_answer: str = "8"
    model_name: str = "toy-layered-lm"
    # Default: the mark exists only during the probe pass; the main pass
    # sees the untouched image. Flipping this records main-pass stacks on
    # the composited image instead.
    watermark_in_main_pass: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.steps < 1:
            raise ExportError(f"steps must be >= 1, got {self.steps}")
        if not self.samples:
            raise ExportError("session has no samples")
        if self.expected_answer not in self.vocab:
            raise ExportError(
                f"expected answer {self.expected_answer!r} not in the host vocabulary"
            )
        if not self.candidate_layers:
            self.candidate_layers = tuple(range(1, self.num_layers))


def load_session(path) -> ExportSession:
    raw = json.loads(Path(path).read_text())
    samples = [
        SampleSpec(
            sample_id=e["id"],
            image=e.get("image"),
            question=e["question"],
            label=e.get("label", ""),
        )
        for e in raw.pop("samples", [])
    ]
    model = raw.pop("model", {})
    return ExportSession(
        out=raw.pop("out"),
        samples=samples,
        model_seed=int(model.get("seed", 7)),
        num_layers=int(model.get("num_layers", 4)),
        d_model=int(model.get("d_model", 32)),
        heads=int(model.get("heads", 2)),
        vocab=tuple(model.get("vocab", DEFAULT_VOCAB)),
        candidate_layers=tuple(raw.pop("candidate_layers", ())),
        steps=int(raw.pop("steps", 6)),
        prompt_suffix=raw.pop("prompt_suffix", ""),
        watermark_image=raw.pop("watermark_image", None),
        alpha=float(raw.pop("alpha", 0.8)),
        anchor=tuple(raw.pop("anchor", (0.9, 0.9))),
        scale=float(raw.pop("scale", 1.0)),
        probe_question=raw.pop("probe_question", DEFAULT_PROBE_QUESTION),
        expected_answer=raw.pop("expected_answer", "8"),
        model_name=raw.pop("model_name", "toy-layered-lm"),
        watermark_in_main_pass=bool(raw.pop("watermark_in_main_pass", False)),
        meta=raw.pop("meta", {}),
    )


# ---------------------------------------------------------------------------
# Engine interop: watermark compositing through the engine CLI.
# ---------------------------------------------------------------------------


def engine_cli(args: list, check: bool = True) -> subprocess.CompletedProcess:
    proc = subprocess.run(
        [sys.executable, "-m", "tcd", *args], capture_output=True, text=True
    )
    if check and proc.returncode != 0:
        raise ExportError(f"engine call {' '.join(args)} failed: {proc.stderr.strip()}")
    return proc


def composite_probe_image(session: ExportSession, image_path: str, out_path: str) -> None:
    engine_cli(
        [
            "watermark",
            "--in", image_path,
            "--wm", session.watermark_image,
            "--out", out_path,
            "--alpha", str(session.alpha),
            "--anchor", f"{session.anchor[0]},{session.anchor[1]}",
            "--scale", str(session.scale),
        ]
    )


def _read_pixels(path) -> np.ndarray:
    """Minimal PNG/PPM pixel readout for histogram conditioning."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Archive writing (the published trace layout, re-implemented).
# ---------------------------------------------------------------------------


def _record(rows: np.ndarray, num_layers: int, vocab_size: int, step: int) -> bytes:
    header = _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, num_layers, vocab_size, step)
    return header + np.ascontiguousarray(rows, dtype="<f4").tobytes()


def _atomic_write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data if isinstance(data, bytes) else data.encode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class ExportedSample:
    sample_id: str
    question: str
    image: str
    greedy_tokens: list
    prepass: np.ndarray
    steps: list
    probe_image: str


def export(session: ExportSession) -> Path:
    """Run every sample through the host and write the archive.

    Per sample: composite the watermark onto the image via the engine CLI
    and record the probe stack at the first answer position, then replay the
    original question greedily for ``steps`` steps recording one stack per
    step plus the host's own greedy tokens.
    """
    host = ToyLayeredLM(
        vocab=session.vocab,
        num_layers=session.num_layers,
        d_model=session.d_model,
        heads=session.heads,
        seed=session.model_seed,
    )
    out_root = Path(session.out)
    probe_dir = out_root / "probe_images"
    exported: list[ExportedSample] = []
    for spec in session.samples:
        if spec.image and session.watermark_image:
            probe_path = probe_dir / f"{spec.sample_id}.png"
            probe_dir.mkdir(parents=True, exist_ok=True)
            composite_probe_image(session, spec.image, str(probe_path))
            probe_pixels = _read_pixels(probe_path)
            main_pixels = probe_pixels if session.watermark_in_main_pass else _read_pixels(spec.image)
        else:
            probe_path = None
            probe_pixels = main_pixels = _read_pixels(spec.image) if spec.image else None

        probe_tokens = host.tokenize(session.probe_question)
        prepass = host.layer_logits(probe_tokens, probe_pixels)

        prompt = spec.question
        if session.prompt_suffix:
            prompt = f"{prompt}\n{session.prompt_suffix}"
        greedy, stacks = host.greedy_generate(host.tokenize(prompt), main_pixels, session.steps)
        exported.append(
            ExportedSample(
                sample_id=spec.sample_id,
                question=spec.question,
                image=spec.image or "",
                greedy_tokens=greedy,
                prepass=prepass,
                steps=stacks,
                probe_image=str(probe_path) if probe_path else "",
            )
        )

    manifest_samples = []
    vocab_size = len(session.vocab)
    for sample in sorted(exported, key=lambda s: s.sample_id):
        blob = _record(sample.prepass, session.num_layers, vocab_size, PREPASS_STEP)
        for i, rows in enumerate(sample.steps):
            blob += _record(rows, session.num_layers, vocab_size, i)
        _atomic_write(out_root / "samples" / f"{sample.sample_id}.tcdt", blob)
        manifest_samples.append(
            {
                "id": sample.sample_id,
                "steps": len(sample.steps),
                "greedy_tokens": sample.greedy_tokens,
                "prepass": True,
                "prepass_position": 0,
                "question": sample.question,
                "image": sample.image,
                "crc32": zlib.crc32(blob),
                "meta": {"probe_image": sample.probe_image},
            }
        )
    manifest = {
        "format": "tcd-trace",
        "version": TRACE_VERSION,
        "model": session.model_name,
        "num_layers": session.num_layers,
        "vocab": list(session.vocab),
        "candidate_layers": list(session.candidate_layers),
        "meta": {
            # The readout convention: block output -> final norm -> head.
            "early_exit_readout": "final_norm_then_head",
            "probe_question": session.probe_question,
            "expected_answer": session.expected_answer,
            "prepass_position": "first generated token",
            **session.meta,
        },
        "samples": manifest_samples,
    }
    _atomic_write(out_root / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_root
