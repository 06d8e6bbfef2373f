"""Plausibility-constrained tri-layer fusion and the greedy decoding loop.

The mature row anchors an adaptive plausibility constraint; fusion then
contrasts the amateur row against the mature one and adds the visual row,
either in the tri form (mature - amateur + weight * visual) or the
interpolated form (mature - weight * amateur + (1 - weight) * visual).
Masking is carried as an explicit boolean flag, never as stored -inf, and is
applied at argmax time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ReplayExhausted
from .model import DecodeContext, LayerLogitStack
from .prob import argmax_lowest, as_probs, log_softmax, softmax
from .select import GAIN_MODES, TriLayerSelection, default_candidates, select_amateur_layer

FUSION_MODES = ("tri", "interp")
AMATEUR_MODES = ("per-step", "static")


@dataclass(frozen=True)
class DecodeConfig:
    """Knobs for one decoding run; defaults follow the shipped presets."""

    lam: float = 1.0
    beta: float = 0.1
    tau: float = 1.0
    gain_mode: str = "change"
    candidate_k: int = 20
    fusion_mode: str = "tri"
    amateur_mode: str = "per-step"
    max_tokens: int = 16
    stop_tokens: frozenset = frozenset()
    sampling: bool = False
    sample_seed: int = 0
    lognorm_fusion: bool = False

    def __post_init__(self):
        if not (self.lam >= 0):
            raise ParameterError(f"lambda must be >= 0, got {self.lam!r}")
        if not (0.0 <= self.beta <= 1.0):
            raise ParameterError(f"beta must be in [0, 1], got {self.beta!r}")
        if not (self.tau > 0):
            raise ParameterError(f"tau must be positive, got {self.tau!r}")
        if self.gain_mode not in GAIN_MODES:
            raise ParameterError(f"gain_mode must be one of {GAIN_MODES}, got {self.gain_mode!r}")
        if self.fusion_mode not in FUSION_MODES:
            raise ParameterError(
                f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}"
            )
        if self.amateur_mode not in AMATEUR_MODES:
            raise ParameterError(
                f"amateur_mode must be one of {AMATEUR_MODES}, got {self.amateur_mode!r}"
            )
        if self.candidate_k < 1:
            raise ParameterError(f"candidate_k must be >= 1, got {self.candidate_k}")
        if self.max_tokens < 1:
            raise ParameterError(f"max_tokens must be >= 1, got {self.max_tokens}")
        object.__setattr__(self, "stop_tokens", frozenset(int(t) for t in self.stop_tokens))


@dataclass(frozen=True)
class PlausibleSet:
    """Tokens whose mature probability clears beta times the mature maximum."""

    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 1 or not m.any():
            raise ParameterError("plausible set must be a non-empty 1-D mask")
        m = np.ascontiguousarray(m)
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.mask))

    def __len__(self) -> int:
        return int(self.mask.sum())

    def __contains__(self, token: int) -> bool:
        return bool(self.mask[token])


def apc_mask(mature_probs, beta: float) -> PlausibleSet:
    """Adaptive plausibility constraint over the mature distribution.

    Keeps every token with p >= beta * max(p). Non-empty by construction:
    the maximum always survives, and beta == 0 admits the full vocabulary.
    """
    p = as_probs(mature_probs)
    if not (0.0 <= beta <= 1.0):
        raise ParameterError(f"beta must be in [0, 1], got {beta!r}")
    return PlausibleSet(mask=p >= beta * p.max())


@dataclass(frozen=True)
class FusedLogits:
    """Fused scores plus the plausibility mask, kept finite throughout."""

    values: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)

    def argmax(self) -> int:
        return argmax_lowest(self.values, self.mask)


def fuse_logits(
    stack: LayerLogitStack,
    sel: TriLayerSelection,
    plausible: PlausibleSet,
    cfg: DecodeConfig,
) -> FusedLogits:
    """Combine the mature, amateur, and visual rows under the mask.

    tri:     mature - amateur + lam * visual
    interp:  mature - lam * amateur + (1 - lam) * visual

    With lognorm_fusion the rows are log-softmax normalized first (a
    sensitivity switch; raw logits are the primary behavior).
    """
    if sel.mature != stack.num_layers:
        raise ParameterError(
            f"selection mature layer {sel.mature} != stack layers {stack.num_layers}"
        )
    if plausible.mask.shape[0] != stack.vocab_size:
        raise ParameterError("plausible mask length does not match vocabulary")
    rows = {
        layer: stack.layer_row(layer).astype(np.float64)
        for layer in {sel.mature, sel.amateur, sel.visual}
    }
    if cfg.lognorm_fusion:
        rows = {layer: log_softmax(row) for layer, row in rows.items()}
    mature, amateur, visual = rows[sel.mature], rows[sel.amateur], rows[sel.visual]
    if cfg.fusion_mode == "tri":
        values = mature - amateur + cfg.lam * visual
    else:
        values = mature - cfg.lam * amateur + (1.0 - cfg.lam) * visual
    return FusedLogits(values=values, mask=plausible.mask)


@dataclass(frozen=True)
class StepRecord:
    step: int
    mature: int
    amateur: int
    visual: int
    plausible_count: int
    chosen: int
    fused_score: float


@dataclass(frozen=True)
class GenerationResult:
    tokens: tuple[int, ...]
    steps: tuple[StepRecord, ...]
    termination: str


def _choose(fused: FusedLogits, cfg: DecodeConfig, step: int) -> int:
    if not cfg.sampling:
        return fused.argmax()
    idx = np.flatnonzero(fused.mask)
    probs = softmax(fused.values[idx], cfg.tau)
    rng = np.random.Generator(np.random.Philox(key=cfg.sample_seed, counter=step))
    return int(idx[rng.choice(idx.size, p=probs)])


def decode_greedy(
    model,
    ctx: DecodeContext,
    visual_layer: int,
    cfg: DecodeConfig | None = None,
) -> GenerationResult:
    """Autoregressive decoding with tri-layer fusion under the APC mask.

    Per step: mature distribution (with temperature), plausibility mask,
    amateur selection (re-run per step, or frozen at step 0 in static mode),
    fusion, then the masked argmax with lowest-index ties. Stops on a stop
    token or after max_tokens. A ReplayExhausted from a replay model is
    re-raised with the partial result attached.
    """
    cfg = cfg or DecodeConfig()
    num_layers = model.num_layers
    if not (1 <= visual_layer <= num_layers):
        raise ParameterError(f"visual layer {visual_layer} outside [1, {num_layers}]")
    candidates = default_candidates(num_layers, cfg.candidate_k)
    records: list[StepRecord] = []
    tokens: list[int] = []
    termination = "max_tokens"
    amateur = None
    current = ctx
    for step in range(cfg.max_tokens):
        try:
            stack = model.step(current)
        except ReplayExhausted as exc:
            exc.partial = GenerationResult(
                tokens=tuple(tokens), steps=tuple(records), termination="replay-exhausted"
            )
            raise
        mature_probs = softmax(stack.mature_row, cfg.tau)
        plausible = apc_mask(mature_probs, cfg.beta)
        if amateur is None or cfg.amateur_mode == "per-step":
            amateur, _ = select_amateur_layer(stack, candidates)
        sel = TriLayerSelection(mature=num_layers, amateur=amateur, visual=visual_layer)
        fused = fuse_logits(stack, sel, plausible, cfg)
        chosen = _choose(fused, cfg, step)
        tokens.append(chosen)
        records.append(
            StepRecord(
                step=step,
                mature=num_layers,
                amateur=amateur,
                visual=visual_layer,
                plausible_count=len(plausible),
                chosen=chosen,
                fused_score=float(fused.values[chosen]),
            )
        )
        current = current.extended(chosen)
        if chosen in cfg.stop_tokens:
            termination = "stop_token"
            break
    return GenerationResult(tokens=tuple(tokens), steps=tuple(records), termination=termination)


def decode_mature_greedy(
    model, ctx: DecodeContext, cfg: DecodeConfig | None = None
) -> GenerationResult:
    """Plain greedy decoding of the mature row; the comparison baseline."""
    cfg = cfg or DecodeConfig()
    records: list[StepRecord] = []
    tokens: list[int] = []
    termination = "max_tokens"
    current = ctx
    for step in range(cfg.max_tokens):
        try:
            stack = model.step(current)
        except ReplayExhausted as exc:
            exc.partial = GenerationResult(
                tokens=tuple(tokens), steps=tuple(records), termination="replay-exhausted"
            )
            raise
        chosen = argmax_lowest(stack.mature_row)
        tokens.append(chosen)
        records.append(
            StepRecord(
                step=step,
                mature=model.num_layers,
                amateur=model.num_layers,
                visual=model.num_layers,
                plausible_count=stack.vocab_size,
                chosen=chosen,
                fused_score=float(stack.mature_row[chosen]),
            )
        )
        current = current.extended(chosen)
        if chosen in cfg.stop_tokens:
            termination = "stop_token"
            break
    return GenerationResult(tokens=tuple(tokens), steps=tuple(records), termination=termination)
