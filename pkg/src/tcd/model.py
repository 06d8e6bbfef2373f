"""Layered next-token models and the bit-exact trace archive format.

A layered model exposes, for every decoding step, one raw-logit row per
decoder layer (row L is the mature layer). Two implementations live here: a
seeded synthetic model for fixtures and tests, and a replay model backed by
an archive of recorded stacks exported from a real host model.

Trace directory layout::

    <dir>/manifest.json          human-readable metadata and checksums
    <dir>/samples/<id>.tcdt      one binary record per recorded step

Each record is a 16-byte little-endian header ``magic "TCDT", version u16,
num_layers u16, vocab u32, step u32`` followed by num_layers * vocab float32
logits, layer-major. A probe pre-pass stack, when recorded, is the first
record of the file with step == 0xFFFFFFFF. Sample checksums are CRC32 over
the whole file and are verified before any structural parsing.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import (
    ChecksumError,
    DimensionError,
    DomainError,
    FormatError,
    ParameterError,
    ReplayExhausted,
    TraceError,
)

TRACE_MAGIC = b"TCDT"
TRACE_VERSION = 1
PREPASS_STEP = 0xFFFFFFFF
_HEADER = struct.Struct("<4sHHII")


@dataclass(frozen=True)
class LayerLogitStack:
    """Raw logits for one decoding step: one row per layer, row L mature."""

    step_index: int
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.rows)
        if arr.ndim != 2:
            raise DimensionError(f"stack must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise DimensionError(f"stack needs at least 2 layers, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("stack contains NaN or infinity")
        if self.step_index < 0:
            raise ParameterError(f"step_index must be >= 0, got {self.step_index}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "rows", arr)

    @property
    def num_layers(self) -> int:
        return self.rows.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[1]

    def layer_row(self, layer: int) -> np.ndarray:
        """Logits of a 1-indexed layer; layer == num_layers is the mature row."""
        if not (1 <= layer <= self.num_layers):
            raise ParameterError(f"layer {layer} outside [1, {self.num_layers}]")
        return self.rows[layer - 1]

    @property
    def mature_row(self) -> np.ndarray:
        return self.rows[-1]


@dataclass(frozen=True)
class DecodeContext:
    """What a model sees at one step: image (or sample id), question, prefix."""

    question: str
    image: object = None
    prefix: tuple[int, ...] = ()

    def extended(self, token: int) -> "DecodeContext":
        return DecodeContext(question=self.question, image=self.image, prefix=self.prefix + (token,))


@runtime_checkable
class LayeredModel(Protocol):
    num_layers: int
    vocab: tuple[str, ...]

    def step(self, ctx: DecodeContext) -> LayerLogitStack: ...


def token_id(vocab, text: str) -> int:
    """Resolve a token string to its unique id in the vocabulary."""
    hits = [i for i, t in enumerate(vocab) if t == text]
    if len(hits) != 1:
        raise ParameterError(
            f"token {text!r} resolves to {len(hits)} vocabulary entries, need exactly 1"
        )
    return hits[0]


# ---------------------------------------------------------------------------
# Synthetic model: counter-based stream, order-independent and platform-stable.
# ---------------------------------------------------------------------------

_U64 = np.uint64
_MIX1 = _U64(0x9E3779B97F4A7C15)
_MIX2 = _U64(0xBF58476D1CE4E5B9)
_MIX3 = _U64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + _MIX1).astype(_U64)
        z = (z ^ (z >> _U64(30))) * _MIX2
        z = (z ^ (z >> _U64(27))) * _MIX3
        return z ^ (z >> _U64(31))


def _unit_floats(seed: int, step: int, layer: int, count: int) -> np.ndarray:
    """count floats in [0, 1) keyed by (seed, step, layer, token index)."""
    with np.errstate(over="ignore"):
        base = _splitmix64(np.array([_U64(seed & 0xFFFFFFFFFFFFFFFF)], dtype=_U64))
        base = _splitmix64(base + _U64(step) * _U64(0x632BE59BD9B4E019))
        base = _splitmix64(base + _U64(layer) * _U64(0x9E6C63D0876A9A47))
        h = _splitmix64(base[0] + np.arange(count, dtype=_U64))
    return (h >> _U64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class Injection:
    """Boost one token's logit at every layer >= ``layer``.

    ``condition`` is a substring the question must contain for the boost to
    fire; the empty string matches every question.
    """

    layer: int
    token: int
    boost: float
    condition: str = ""


@dataclass(frozen=True)
class PriorBias:
    """Unconditional logit bias for one token at deep layers."""

    token: int
    bias: float


@dataclass(frozen=True)
class SyntheticModelConfig:
    seed: int
    num_layers: int
    vocab: tuple[str, ...]
    injections: tuple[Injection, ...] = ()
    prior_bias: tuple[PriorBias, ...] = ()
    prior_depth: int | None = None  # layers >= this get prior_bias; default mature only
    base_scale: float = 1.0  # base logits are uniform in [-base_scale, base_scale]

    def __post_init__(self):
        if self.num_layers < 2:
            raise ParameterError(f"num_layers must be >= 2, got {self.num_layers}")
        if len(self.vocab) < 2:
            raise ParameterError("vocab needs at least 2 tokens")
        if not (self.base_scale >= 0):
            raise ParameterError(f"base_scale must be >= 0, got {self.base_scale!r}")
        v = len(self.vocab)
        for inj in self.injections:
            if not (1 <= inj.layer <= self.num_layers):
                raise ParameterError(f"injection layer {inj.layer} outside [1, {self.num_layers}]")
            if not (0 <= inj.token < v):
                raise ParameterError(f"injection token id {inj.token} out of range")
            if not np.isfinite(inj.boost):
                raise ParameterError("injection boost must be finite")
        for pb in self.prior_bias:
            if not (0 <= pb.token < v):
                raise ParameterError(f"prior bias token id {pb.token} out of range")
            if not np.isfinite(pb.bias):
                raise ParameterError("prior bias must be finite")
        depth = self.num_layers if self.prior_depth is None else self.prior_depth
        if not (1 <= depth <= self.num_layers):
            raise ParameterError(f"prior_depth {depth} outside [1, {self.num_layers}]")


class SyntheticModel:
    """Deterministic layered model driven by a SyntheticModelConfig."""

    def __init__(self, config: SyntheticModelConfig):
        self.config = config
        self.num_layers = config.num_layers
        self.vocab = tuple(config.vocab)

    def step(self, ctx: DecodeContext) -> LayerLogitStack:
        cfg = self.config
        step = len(ctx.prefix)
        v = len(self.vocab)
        depth = cfg.num_layers if cfg.prior_depth is None else cfg.prior_depth
        rows = np.empty((cfg.num_layers, v), dtype=np.float64)
        active = [inj for inj in cfg.injections if inj.condition in ctx.question]
        for layer in range(1, cfg.num_layers + 1):
            row = (_unit_floats(cfg.seed, step, layer, v) * 2.0 - 1.0) * cfg.base_scale
            for inj in active:
                if layer >= inj.layer:
                    row[inj.token] += inj.boost
            if layer >= depth:
                for pb in cfg.prior_bias:
                    row[pb.token] += pb.bias
            rows[layer - 1] = row
        return LayerLogitStack(step_index=step, rows=rows)


# ---------------------------------------------------------------------------
# Trace archives.
# ---------------------------------------------------------------------------


@dataclass
class TraceSample:
    sample_id: str
    steps: list  # list of (L, V) float32 arrays, one per decoding step
    greedy_tokens: tuple[int, ...] = ()
    prepass: np.ndarray | None = None  # (L, V) float32 probe stack
    prepass_position: int = 0
    question: str = ""
    image: str = ""
    meta: dict = field(default_factory=dict)


@dataclass
class TraceArchive:
    model_name: str
    num_layers: int
    vocab: tuple[str, ...]
    candidate_layers: tuple[int, ...] = ()
    samples: dict = field(default_factory=dict)  # sample_id -> TraceSample
    meta: dict = field(default_factory=dict)

    def add_sample(self, sample: TraceSample) -> None:
        v = len(self.vocab)
        for arr in list(sample.steps) + ([sample.prepass] if sample.prepass is not None else []):
            a = np.asarray(arr)
            if a.shape != (self.num_layers, v):
                raise DimensionError(
                    f"sample {sample.sample_id!r}: stack shape {a.shape} != "
                    f"({self.num_layers}, {v})"
                )
        self.samples[sample.sample_id] = sample


def _pack_record(rows: np.ndarray, num_layers: int, vocab_size: int, step: int) -> bytes:
    payload = np.ascontiguousarray(rows, dtype="<f4").tobytes()
    header = _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, num_layers, vocab_size, step)
    return header + payload


def _sample_bytes(archive: TraceArchive, sample: TraceSample) -> bytes:
    blobs = []
    if sample.prepass is not None:
        blobs.append(_pack_record(sample.prepass, archive.num_layers, len(archive.vocab), PREPASS_STEP))
    for i, rows in enumerate(sample.steps):
        blobs.append(_pack_record(rows, archive.num_layers, len(archive.vocab), i))
    return b"".join(blobs)


def write_trace(archive: TraceArchive, directory) -> None:
    """Serialize an archive; payloads first, manifest (with checksums) last."""
    root = Path(directory)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    manifest_samples = []
    for sample_id in sorted(archive.samples):
        sample = archive.samples[sample_id]
        data = _sample_bytes(archive, sample)
        (root / "samples" / f"{sample_id}.tcdt").write_bytes(data)
        manifest_samples.append(
            {
                "id": sample_id,
                "steps": len(sample.steps),
                "greedy_tokens": list(sample.greedy_tokens),
                "prepass": sample.prepass is not None,
                "prepass_position": sample.prepass_position,
                "question": sample.question,
                "image": sample.image,
                "crc32": zlib.crc32(data),
                "meta": sample.meta,
            }
        )
    manifest = {
        "format": "tcd-trace",
        "version": TRACE_VERSION,
        "model": archive.model_name,
        "num_layers": archive.num_layers,
        "vocab": list(archive.vocab),
        "candidate_layers": list(archive.candidate_layers),
        "meta": archive.meta,
        "samples": manifest_samples,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_sample_payload(
    data: bytes, sample_id: str, num_layers: int, vocab_size: int, expect_steps: int, expect_prepass: bool
) -> tuple[list, np.ndarray | None]:
    record_len = _HEADER.size + num_layers * vocab_size * 4
    steps: list = []
    prepass = None
    pos = 0
    index = 0
    while pos < len(data):
        if pos + record_len > len(data):
            raise FormatError(f"sample {sample_id!r}: truncated payload at byte {pos}")
        magic, version, l_hdr, v_hdr, step = _HEADER.unpack_from(data, pos)
        if magic != TRACE_MAGIC:
            raise FormatError(f"sample {sample_id!r}: bad record magic {magic!r}")
        if version != TRACE_VERSION:
            raise FormatError(f"sample {sample_id!r}: unsupported record version {version}")
        if l_hdr != num_layers or v_hdr != vocab_size:
            raise FormatError(
                f"sample {sample_id!r}: record shape {l_hdr}x{v_hdr} "
                f"disagrees with manifest {num_layers}x{vocab_size}"
            )
        rows = np.frombuffer(
            data, dtype="<f4", count=num_layers * vocab_size, offset=pos + _HEADER.size
        ).reshape(num_layers, vocab_size)
        if step == PREPASS_STEP:
            if pos != 0:
                raise FormatError(f"sample {sample_id!r}: probe record must come first")
            prepass = rows
        else:
            if step != index:
                raise FormatError(f"sample {sample_id!r}: expected step {index}, found {step}")
            steps.append(rows)
            index += 1
        pos += record_len
    if len(steps) != expect_steps:
        raise FormatError(
            f"sample {sample_id!r}: manifest declares {expect_steps} steps, file has {len(steps)}"
        )
    if expect_prepass and prepass is None:
        raise FormatError(f"sample {sample_id!r}: manifest declares a probe record, none found")
    if not expect_prepass and prepass is not None:
        raise FormatError(f"sample {sample_id!r}: unexpected probe record")
    return steps, prepass


def read_trace(directory) -> TraceArchive:
    """Parse a trace directory, verifying checksums before structure."""
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise TraceError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest.json is not valid JSON: {exc}") from exc
    if manifest.get("format") != "tcd-trace":
        raise FormatError(f"not a trace manifest: format={manifest.get('format')!r}")
    if manifest.get("version") != TRACE_VERSION:
        raise FormatError(f"unsupported trace version {manifest.get('version')!r}")
    num_layers = int(manifest["num_layers"])
    vocab = tuple(manifest["vocab"])
    if num_layers < 2:
        raise FormatError(f"manifest num_layers must be >= 2, got {num_layers}")
    archive = TraceArchive(
        model_name=manifest.get("model", ""),
        num_layers=num_layers,
        vocab=vocab,
        candidate_layers=tuple(manifest.get("candidate_layers", [])),
        meta=manifest.get("meta", {}),
    )
    for entry in manifest["samples"]:
        sample_id = entry["id"]
        path = root / "samples" / f"{sample_id}.tcdt"
        if not path.is_file():
            raise TraceError(f"sample {sample_id!r}: payload file missing")
        data = path.read_bytes()
        if zlib.crc32(data) != entry["crc32"]:
            raise ChecksumError(f"sample {sample_id!r}: checksum mismatch")
        steps, prepass = _parse_sample_payload(
            data, sample_id, num_layers, len(vocab), int(entry["steps"]), bool(entry["prepass"])
        )
        archive.samples[sample_id] = TraceSample(
            sample_id=sample_id,
            steps=steps,
            greedy_tokens=tuple(entry.get("greedy_tokens", [])),
            prepass=prepass,
            prepass_position=int(entry.get("prepass_position", 0)),
            question=entry.get("question", ""),
            image=entry.get("image", ""),
            meta=entry.get("meta", {}),
        )
    return archive


def validate_trace(directory, check_greedy: bool = True) -> dict:
    """Full archive validation; returns a small report for the CLI.

    Beyond checksums and shapes (done by read_trace), optionally replays
    every sample's mature-row argmax and compares it against the greedy
    tokens recorded in the manifest.
    """
    archive = read_trace(directory)
    report = {
        "model": archive.model_name,
        "num_layers": archive.num_layers,
        "vocab_size": len(archive.vocab),
        "samples": len(archive.samples),
        "steps_total": sum(len(s.steps) for s in archive.samples.values()),
        "greedy_checked": 0,
    }
    if check_greedy:
        for sample in archive.samples.values():
            if not sample.greedy_tokens:
                continue
            replay = tuple(int(np.argmax(rows[-1])) for rows in sample.steps)
            recorded = sample.greedy_tokens[: len(replay)]
            if replay[: len(recorded)] != recorded:
                raise TraceError(
                    f"sample {sample.sample_id!r}: mature-row argmax replay "
                    f"{replay} disagrees with recorded greedy {sample.greedy_tokens}"
                )
            report["greedy_checked"] += 1
    return report


class TraceModel:
    """Teacher-forced replay of one recorded sample.

    The recorded stacks answer by step index only, so a prefix that diverges
    from the recorded greedy tokens still replays the recorded stacks; that
    divergence is expected and reported by the caller, not an error. Asking
    for a step beyond the recorded horizon raises ReplayExhausted.
    """

    def __init__(self, archive: TraceArchive, sample_id: str):
        if sample_id not in archive.samples:
            raise TraceError(f"sample {sample_id!r} not in archive")
        self.archive = archive
        self.sample = archive.samples[sample_id]
        self.num_layers = archive.num_layers
        self.vocab = tuple(archive.vocab)

    def step(self, ctx: DecodeContext) -> LayerLogitStack:
        i = len(ctx.prefix)
        if i >= len(self.sample.steps):
            raise ReplayExhausted(
                f"sample {self.sample.sample_id!r} recorded {len(self.sample.steps)} steps, "
                f"step {i} requested"
            )
        return LayerLogitStack(step_index=i, rows=self.sample.steps[i])

    def prepass_stack(self) -> LayerLogitStack | None:
        if self.sample.prepass is None:
            return None
        return LayerLogitStack(step_index=0, rows=self.sample.prepass)
