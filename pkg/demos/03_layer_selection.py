#!/usr/bin/env python3
# Show the two selection scans on a synthetic layered model. A probe-token
# boost entering at layer 7 creates a probability cliff there; the gain scan
# finds it under both modes, and the JSD scan picks the most contrarian
# candidate as the amateur layer.

import numpy as np

from tcd import (
    DecodeContext,
    Injection,
    SyntheticModel,
    SyntheticModelConfig,
    default_candidates,
    select_amateur_layer,
    select_visual_layer,
    token_id,
)
from tcd.prob import softmax_rows

VOCAB = ("yes", "no", "8", "</s>") + tuple(f"w{i}" for i in range(12))

answer = token_id(VOCAB, "8")
model = SyntheticModel(
    SyntheticModelConfig(
        seed=2024,
        num_layers=12,
        vocab=VOCAB,
        base_scale=0.25,
        injections=(Injection(layer=7, token=answer, boost=10.0, condition="captcha"),),
    )
)

stack = model.step(DecodeContext(question="What is the last captcha number in the image?"))
probs = softmax_rows(stack.rows)[:, answer]

print("p(answer token) per layer:")
for layer, p in enumerate(probs, start=1):
    print(f"  layer {layer:>2}  {'#' * int(p * 40):<40} {p:.4f}")

for mode in ("change", "log"):
    layer, gains = select_visual_layer(stack, answer, mode)
    print(f"\n{mode:>6} mode picks layer {layer}; top gain {max(gains):.4f}")

amateur, profile = select_amateur_layer(stack, default_candidates(12, 20))
print(f"\namateur layer (highest JSD vs mature): {amateur}")
print("jsd profile:", " ".join(f"{v:.3f}" for v in profile))
