"""Watermark-guided tri-layer contrastive decoding over layered logit views.

The package is organized around small, pure numpy kernels:

- prob: softmax/JSD/log-ratio primitives
- image: buffers, PNG/PPM codecs, and the watermark compositor
- model: layered-model contract, synthetic models, trace archives
- select: visual-layer gain scan and amateur-layer JSD scan
- decode: plausibility masking, tri-layer fusion, greedy loop
- metrics/harness: hallucination metrics and suite orchestration
"""

__version__ = "0.1.0"

from .decode import (
    DecodeConfig,
    FusedLogits,
    GenerationResult,
    PlausibleSet,
    apc_mask,
    decode_greedy,
    decode_mature_greedy,
    fuse_logits,
)
from .image import (
    ImageBuffer,
    WatermarkSpec,
    embed_watermark,
    load_image,
    overlay_geometry,
    save_image,
)
from .metrics import (
    BinarySample,
    GenerativeSample,
    amber_metrics,
    binary_metrics,
    mme_score,
)
from .model import (
    DecodeContext,
    Injection,
    LayerLogitStack,
    PriorBias,
    SyntheticModel,
    SyntheticModelConfig,
    TraceArchive,
    TraceModel,
    TraceSample,
    read_trace,
    token_id,
    validate_trace,
    write_trace,
)
from .prob import jsd, log_safe_ratio, softmax
from .select import (
    TriLayerSelection,
    default_candidates,
    run_watermark_prepass,
    select_amateur_layer,
    select_visual_layer,
)

__all__ = [
    "BinarySample",
    "DecodeConfig",
    "DecodeContext",
    "FusedLogits",
    "GenerationResult",
    "GenerativeSample",
    "ImageBuffer",
    "Injection",
    "LayerLogitStack",
    "PlausibleSet",
    "PriorBias",
    "SyntheticModel",
    "SyntheticModelConfig",
    "TraceArchive",
    "TraceModel",
    "TraceSample",
    "TriLayerSelection",
    "WatermarkSpec",
    "amber_metrics",
    "apc_mask",
    "binary_metrics",
    "decode_greedy",
    "decode_mature_greedy",
    "default_candidates",
    "embed_watermark",
    "fuse_logits",
    "jsd",
    "load_image",
    "log_safe_ratio",
    "mme_score",
    "overlay_geometry",
    "read_trace",
    "run_watermark_prepass",
    "save_image",
    "select_amateur_layer",
    "select_visual_layer",
    "softmax",
    "token_id",
    "validate_trace",
    "write_trace",
]
