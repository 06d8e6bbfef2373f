"""Selection of the visually grounded layer and the amateur layer.

The visual layer is found by a probability-gain scan on the probe answer
token across adjacent layers; the amateur layer is the candidate whose
distribution diverges most (Jensen-Shannon) from the mature row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ParameterError
from .image import ImageBuffer, WatermarkSpec, embed_watermark
from .model import DecodeContext, LayerLogitStack, token_id
from .prob import LOG_RATIO_EPS, argmax_lowest, jsd, softmax_rows

GAIN_MODES = ("change", "log")


@dataclass(frozen=True)
class TriLayerSelection:
    """The (mature, amateur, visual) layer triple with selection diagnostics."""

    mature: int
    amateur: int
    visual: int
    gain_profile: tuple[float, ...] | None = None
    jsd_profile: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (1 <= self.amateur <= self.mature - 1):
            raise ParameterError(
                f"amateur layer {self.amateur} outside [1, {self.mature - 1}]"
            )
        if not (1 <= self.visual <= self.mature):
            raise ParameterError(f"visual layer {self.visual} outside [1, {self.mature}]")


def default_candidates(num_layers: int, k: int = 20) -> tuple[int, ...]:
    """The k layers immediately below the mature layer, clipped at layer 1."""
    if k < 1:
        raise ParameterError(f"candidate count must be >= 1, got {k}")
    lo = max(1, num_layers - k)
    return tuple(range(lo, num_layers))


def _check_candidates(candidates, num_layers: int) -> tuple[int, ...]:
    cand = tuple(int(c) for c in candidates)
    if not cand:
        raise ParameterError("candidate set is empty")
    if any(not (1 <= c <= num_layers - 1) for c in cand):
        raise ParameterError(f"candidates {cand} must lie in [1, {num_layers - 1}]")
    if any(b <= a for a, b in zip(cand, cand[1:])):
        raise ParameterError("candidates must be strictly increasing")
    return cand


def select_visual_layer(
    stack: LayerLogitStack,
    answer_token: int,
    mode: str = "change",
    eps: float = LOG_RATIO_EPS,
    scan_range: tuple[int, int] | None = None,
) -> tuple[int, np.ndarray]:
    """Maximum-probability-gain scan for the probe answer token.

    Computes the answer token's probability under every layer's softmax and
    returns the layer with the largest adjacent gain: the raw difference in
    "change" mode or ln((p_l+eps)/(p_{l-1}+eps)) in "log" mode. Ties go to
    the lowest layer. The scan covers layers [2, L] unless ``scan_range``
    narrows it. The full gain profile (L-1 entries, for layers 2..L) is
    returned for diagnostics regardless of the range.
    """
    if mode not in GAIN_MODES:
        raise ParameterError(f"gain mode must be one of {GAIN_MODES}, got {mode!r}")
    if stack.num_layers < 2:
        raise DimensionError("gain scan needs at least 2 layers")
    if not (0 <= answer_token < stack.vocab_size):
        raise ParameterError(f"answer token id {answer_token} out of range")
    lo, hi = scan_range if scan_range is not None else (2, stack.num_layers)
    if not (2 <= lo <= hi <= stack.num_layers):
        raise ParameterError(
            f"scan_range {scan_range} outside [2, {stack.num_layers}]"
        )
    probs = softmax_rows(stack.rows)[:, answer_token]
    if mode == "change":
        gains = probs[1:] - probs[:-1]
    else:
        gains = np.log((probs[1:] + eps) / (probs[:-1] + eps))
    layer = lo + argmax_lowest(gains[lo - 2 : hi - 1])
    return layer, gains


def select_amateur_layer(
    stack: LayerLogitStack, candidates
) -> tuple[int, np.ndarray]:
    """Candidate layer with the highest JSD against the mature row.

    Ties go to the lowest candidate; the JSD profile (one entry per
    candidate, in candidate order) is returned for diagnostics.
    """
    cand = _check_candidates(candidates, stack.num_layers)
    dists = softmax_rows(stack.rows)
    mature = dists[-1]
    profile = np.array([jsd(mature, dists[c - 1]) for c in cand], dtype=np.float64)
    return cand[argmax_lowest(profile)], profile


@dataclass(frozen=True)
class PrepassResult:
    visual: int
    gains: tuple[float, ...]
    answer_token: int
    position: int
    mode: str


def run_watermark_prepass(
    model,
    image: ImageBuffer | None,
    spec: WatermarkSpec,
    mode: str = "change",
) -> PrepassResult:
    """Probe the model once per sample to locate the visual layer.

    Composites the watermark onto the image (when the model takes pixel
    input), asks the probe question, takes the stack at the first content
    token position, and runs the gain scan for the expected answer token.
    Replay models return their recorded probe stack instead of re-running.
    The result is computed once per sample and reused for every decoding
    step of that sample.
    """
    try:
        answer = token_id(model.vocab, spec.expected_answer)
    except ParameterError as exc:
        raise ConfigError(f"expected_answer: {exc}") from exc

    recorded = getattr(model, "prepass_stack", None)
    position = 0
    if callable(recorded):
        stack = recorded()
        if stack is None:
            raise ConfigError(
                "replay model has no recorded probe stack; re-export the sample "
                "with a probe pass or supply --visual-layer explicitly"
            )
        position = getattr(getattr(model, "sample", None), "prepass_position", 0)
    else:
        probe_image = image
        if isinstance(image, ImageBuffer):
            probe_image = embed_watermark(image, spec)
        ctx = DecodeContext(question=spec.probe_question, image=probe_image, prefix=())
        stack = model.step(ctx)

    visual, gains = select_visual_layer(stack, answer, mode)
    return PrepassResult(
        visual=visual,
        gains=tuple(float(g) for g in gains),
        answer_token=answer,
        position=position,
        mode=mode,
    )
