#!/usr/bin/env python3
# A biased model answers a yes/no question wrongly from its deep prior while
# a mid-depth layer still carries the grounded answer. Watch plain mature
# greedy fail and the fused tri-layer decode recover it.

from tcd import (
    DecodeConfig,
    DecodeContext,
    Injection,
    PriorBias,
    SyntheticModel,
    SyntheticModelConfig,
    WatermarkSpec,
    decode_greedy,
    decode_mature_greedy,
    run_watermark_prepass,
    token_id,
)
from tcd.image import ImageBuffer
import numpy as np

VOCAB = ("yes", "no", "8", "</s>") + tuple(f"w{i}" for i in range(12))
GOLD = "yes"

model = SyntheticModel(
    SyntheticModelConfig(
        seed=99,
        num_layers=12,
        vocab=VOCAB,
        base_scale=0.1,
        prior_depth=10,
        injections=(
            # Probe cue for the prepass question.
            Injection(layer=5, token=token_id(VOCAB, "8"), boost=10.0, condition="captcha"),
            # Grounded answer, visible from layer 5 upward.
            Injection(layer=5, token=token_id(VOCAB, GOLD), boost=6.0, condition="Is there"),
        ),
        # The deep prior drags the mature layer toward the wrong answer.
        prior_bias=(PriorBias(token=token_id(VOCAB, "no"), bias=7.5),),
    )
)

spec = WatermarkSpec(
    image=ImageBuffer.from_array(np.full((4, 4, 3), 255, dtype=np.uint8)),
    expected_answer="8",
)
prepass = run_watermark_prepass(model, None, spec, mode="change")
print(f"prepass picked visual layer {prepass.visual} "
      f"(gain {max(prepass.gains):.4f} at the boost entry point)")

ctx = DecodeContext(question="Is there a dog in the image?")
cfg = DecodeConfig(lam=1.0, beta=0.1, candidate_k=2, max_tokens=1)

baseline = decode_mature_greedy(model, ctx, cfg)
fused = decode_greedy(model, ctx, prepass.visual, cfg)

print(f"\ngold answer:          {GOLD}")
print(f"mature-only greedy:   {VOCAB[baseline.tokens[0]]}   <- prior wins")
print(f"tri-layer fused:      {VOCAB[fused.tokens[0]]}   <- grounded layer wins")
step = fused.steps[0]
print(f"\nstep record: amateur=l{step.amateur} visual=l{step.visual} "
      f"plausible={step.plausible_count} fused_score={step.fused_score:.3f}")
