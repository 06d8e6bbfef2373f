"""Engine configuration: file schema, flag overrides, and presets.

Configuration comes from an optional JSON file plus explicit overrides
(CLI flags); overrides win. Unknown keys are rejected by name. The TCD_SEED
environment variable, when set, beats both.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

from .decode import AMATEUR_MODES, FUSION_MODES, DecodeConfig
from .errors import ConfigError
from .image import (
    DEFAULT_ALPHA,
    DEFAULT_ANCHOR,
    DEFAULT_EXPECTED_ANSWER,
    DEFAULT_PROBE_QUESTION,
    WatermarkSpec,
    load_image,
)
from .model import token_id
from .select import GAIN_MODES

# One tuned configuration per dataset/model pair, reused across splits.
PRESETS = {
    "llava-pope-mscoco": {"lambda": 1.0, "gain": "change", "k": 20},
    "llava-pope-aokvqa": {"lambda": 0.5, "gain": "log", "k": 20},
    "llava-pope-gqa": {"lambda": 0.1, "gain": "log", "k": 20},
    "llava-mme": {"lambda": 0.5, "gain": "change", "k": 20},
    "llava-amber": {"lambda": 0.5, "gain": "log", "k": 20},
    "instructblip-pope-mscoco": {"lambda": 0.3, "gain": "change", "k": 20},
    "instructblip-pope-aokvqa": {"lambda": 0.3, "gain": "change", "k": 20},
    "instructblip-pope-gqa": {"lambda": 0.3, "gain": "change", "k": 20},
    "instructblip-mme": {"lambda": 1.0, "gain": "log", "k": 10},
    "instructblip-amber": {"lambda": 0.5, "gain": "log", "k": 20},
}


@dataclass(frozen=True)
class EngineConfig:
    lam: float = 1.0
    beta: float = 0.1
    tau: float = 1.0
    gain: str = "change"
    k: int = 20
    fusion: str = "tri"
    amateur: str = "per-step"
    max_tokens: int = 16
    stop_tokens: tuple = ()
    sampling: bool = False
    lognorm_fusion: bool = False
    alpha: float = DEFAULT_ALPHA
    anchor: tuple[float, float] = DEFAULT_ANCHOR
    scale: float = 1.0
    probe_question: str = DEFAULT_PROBE_QUESTION
    expected_answer: str = DEFAULT_EXPECTED_ANSWER
    watermark_image: str | None = None
    trace_dir: str | None = None
    dataset: str | None = None
    out: str | None = None
    seed: int = 0
    jobs: int = 1
    deterministic: bool = False

    def decode_config(self, vocab=None) -> DecodeConfig:
        return DecodeConfig(
            lam=self.lam,
            beta=self.beta,
            tau=self.tau,
            gain_mode=self.gain,
            candidate_k=self.k,
            fusion_mode=self.fusion,
            amateur_mode=self.amateur,
            max_tokens=self.max_tokens,
            stop_tokens=resolve_stop_tokens(self.stop_tokens, vocab),
            sampling=self.sampling,
            sample_seed=self.seed,
            lognorm_fusion=self.lognorm_fusion,
        )

    def watermark_spec(self) -> WatermarkSpec:
        if not self.watermark_image:
            raise ConfigError("watermark_image: no watermark asset configured")
        return WatermarkSpec(
            image=load_image(self.watermark_image),
            alpha=self.alpha,
            anchor=self.anchor,
            scale=self.scale,
            probe_question=self.probe_question,
            expected_answer=self.expected_answer,
        )


def resolve_stop_tokens(stop_tokens, vocab=None) -> frozenset:
    """Map a mix of token ids and token strings to an id set."""
    out = set()
    for tok in stop_tokens:
        if isinstance(tok, bool):
            raise ConfigError(f"stop_tokens: {tok!r} is not a token id or string")
        if isinstance(tok, int):
            out.add(tok)
        elif isinstance(tok, str):
            if vocab is None:
                raise ConfigError(f"stop_tokens: {tok!r} needs a vocabulary to resolve")
            out.add(token_id(vocab, tok))
        else:
            raise ConfigError(f"stop_tokens: {tok!r} is not a token id or string")
    return frozenset(out)


def _strict_bool(value) -> bool:
    if not isinstance(value, bool):
        raise ValueError("expected true/false")
    return value


_KEY_SPECS = {
    # key: (attribute, converter)
    "lambda": ("lam", float),
    "beta": ("beta", float),
    "tau": ("tau", float),
    "gain": ("gain", str),
    "k": ("k", int),
    "fusion": ("fusion", str),
    "amateur": ("amateur", str),
    "max_tokens": ("max_tokens", int),
    "stop_tokens": ("stop_tokens", tuple),
    "sampling": ("sampling", _strict_bool),
    "lognorm_fusion": ("lognorm_fusion", _strict_bool),
    "alpha": ("alpha", float),
    "anchor": ("anchor", lambda v: (float(v[0]), float(v[1]))),
    "scale": ("scale", float),
    "probe_question": ("probe_question", str),
    "expected_answer": ("expected_answer", str),
    "watermark_image": ("watermark_image", str),
    "trace_dir": ("trace_dir", str),
    "dataset": ("dataset", str),
    "out": ("out", str),
    "seed": ("seed", int),
    "jobs": ("jobs", int),
    "deterministic": ("deterministic", _strict_bool),
}

_RANGES = {
    "lambda": lambda v: v >= 0,
    "beta": lambda v: 0.0 <= v <= 1.0,
    "tau": lambda v: v > 0,
    "k": lambda v: v >= 1,
    "max_tokens": lambda v: v >= 1,
    "alpha": lambda v: 0.0 <= v <= 1.0,
    "anchor": lambda v: 0.0 < v[0] <= 1.0 and 0.0 < v[1] <= 1.0,
    "scale": lambda v: v > 0,
    "jobs": lambda v: v >= 1,
    "gain": lambda v: v in GAIN_MODES,
    "fusion": lambda v: v in FUSION_MODES,
    "amateur": lambda v: v in AMATEUR_MODES,
}


def _apply(settings: dict, key: str, value) -> None:
    if key == "preset":
        if value not in PRESETS:
            raise ConfigError(f"preset: unknown preset {value!r}; know {sorted(PRESETS)}")
        for k, v in PRESETS[value].items():
            _apply(settings, k, v)
        return
    if key not in _KEY_SPECS:
        raise ConfigError(f"unknown configuration key {key!r}")
    attr, conv = _KEY_SPECS[key]
    try:
        converted = conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from exc
    check = _RANGES.get(key)
    if check is not None and not check(converted):
        raise ConfigError(f"{key}: value {value!r} out of range")
    settings[attr] = converted


def parse_config(path=None, overrides: dict | None = None) -> EngineConfig:
    """Build an EngineConfig from an optional JSON file plus overrides.

    File values apply first, then overrides (flags), then TCD_SEED. Every
    key is validated; unknown keys and out-of-range values raise ConfigError
    naming the key.
    """
    settings: dict = {}
    if path is not None:
        try:
            raw = json.loads(open(path).read())
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, value in raw.items():
            _apply(settings, key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            _apply(settings, key, value)
    env_seed = os.environ.get("TCD_SEED")
    if env_seed is not None:
        try:
            settings["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"TCD_SEED: cannot parse {env_seed!r}") from exc
    valid = {f.name for f in fields(EngineConfig)}
    assert set(settings) <= valid
    return EngineConfig(**settings)
