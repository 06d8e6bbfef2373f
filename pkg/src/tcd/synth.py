"""Seeded synthetic fixtures: eval datasets and replayable trace archives.

The eval fixtures are built so the answer algebra is decidable by
construction: a deep prior bias pushes the mature row toward a chosen token
while a mid-depth band keeps the grounded token ahead, so plain mature
greedy and fused decoding provably disagree on the biased samples.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .model import (
    DecodeContext,
    Injection,
    PriorBias,
    SyntheticModel,
    SyntheticModelConfig,
    TraceArchive,
    TraceSample,
    token_id,
    write_trace,
)

# Shared fixture geometry. The grounded boost enters at the probe layer and
# persists upward; the prior enters at PRIOR_DEPTH. Margins are sized so the
# plausibility mask keeps the grounded token at beta = 0.1 while the fused
# score flips it back on top (see the dataset builders below).
FIXTURE_LAYERS = 12
PRIOR_DEPTH = 10
GROUNDED_BOOST = 6.0
PRIOR_BIAS = 7.5
PROBE_BOOST = 10.0
BASE_SCALE = 0.1

BINARY_VOCAB = ("yes", "no", "</s>", "8") + tuple(f"w{i:02d}" for i in range(12))

_OBJECTS = (
    "dog", "cat", "car", "tree", "chair", "bottle", "bird", "boat",
    "horse", "clock", "bench", "laptop", "pizza", "kite", "vase", "sheep",
)

_SPLITS = ("random", "popular", "adversarial")


def _synthetic_entry(seed: int, gold: str, biased: bool, probe_layer: int) -> dict:
    """Per-sample synthetic config as it appears in a dataset manifest."""
    wrong = "no" if gold == "yes" else "yes"
    return {
        "seed": seed,
        "num_layers": FIXTURE_LAYERS,
        "vocab": list(BINARY_VOCAB),
        "base_scale": BASE_SCALE,
        "prior_depth": PRIOR_DEPTH,
        "injections": [
            {"layer": probe_layer, "token": "8", "boost": PROBE_BOOST, "condition": "captcha"},
            {"layer": probe_layer, "token": gold, "boost": GROUNDED_BOOST, "condition": "Is there"},
        ],
        "prior_bias": [{"token": wrong if biased else gold, "bias": PRIOR_BIAS}],
    }


def config_from_entry(entry: dict) -> SyntheticModelConfig:
    """Materialize a manifest synthetic entry; token names resolve to ids."""
    vocab = tuple(entry["vocab"])

    def tid(ref):
        return ref if isinstance(ref, int) else token_id(vocab, ref)

    return SyntheticModelConfig(
        seed=int(entry["seed"]),
        num_layers=int(entry["num_layers"]),
        vocab=vocab,
        injections=tuple(
            Injection(
                layer=int(i["layer"]),
                token=tid(i["token"]),
                boost=float(i["boost"]),
                condition=i.get("condition", ""),
            )
            for i in entry.get("injections", [])
        ),
        prior_bias=tuple(
            PriorBias(token=tid(p["token"]), bias=float(p["bias"]))
            for p in entry.get("prior_bias", [])
        ),
        prior_depth=entry.get("prior_depth"),
        base_scale=float(entry.get("base_scale", 1.0)),
    )


def build_pope_dataset(n: int = 100, seed: int = 7, biased_fraction: float = 0.52) -> dict:
    """Binary suite where mature-only greedy is wrong on the biased share."""
    if n < 1:
        raise ParameterError(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    n_biased = int(round(n * biased_fraction))
    samples = []
    for i in range(n):
        gold = "yes" if rng.integers(2) == 0 else "no"
        biased = i < n_biased
        probe_layer = int(rng.integers(3, 8))
        obj = _OBJECTS[int(rng.integers(len(_OBJECTS)))]
        samples.append(
            {
                "id": f"s{i:03d}",
                "question": f"Is there a {obj} in the image?",
                "label": gold,
                "split": _SPLITS[i % 3],
                "synthetic": _synthetic_entry(int(rng.integers(2**31)), gold, biased, probe_layer),
            }
        )
    rng.shuffle(samples)
    return {
        "suite": "pope",
        "name": f"synthetic-pope-{n}",
        "seed": seed,
        "prompt_suffix": "Please answer the question using a single word or phrase.",
        "watermark": {"probe_question": None, "expected_answer": "8"},
        "decode": {
            "lambda": 1.0,
            "beta": 0.1,
            "gain": "change",
            "k": 2,
            "fusion": "tri",
            "max_tokens": 1,
        },
        "samples": samples,
    }


def build_mme_dataset(n_images: int = 20, seed: int = 11) -> dict:
    """Paired binary suite; two questions per image across two subtasks."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_images):
        subtask = "existence" if i % 2 == 0 else "count"
        for q in range(2):
            gold = "yes" if rng.integers(2) == 0 else "no"
            biased = rng.random() < 0.5
            obj = _OBJECTS[int(rng.integers(len(_OBJECTS)))]
            question = (
                f"Is there a {obj} in the image?"
                if q == 0
                else f"Is there exactly {int(rng.integers(1, 5))} {obj} in the image?"
            )
            samples.append(
                {
                    "id": f"m{i:03d}q{q}",
                    "image_id": f"img{i:03d}",
                    "subtask": subtask,
                    "question": question,
                    "label": gold,
                    "synthetic": _synthetic_entry(
                        int(rng.integers(2**31)), gold, biased, int(rng.integers(3, 8))
                    ),
                }
            )
    return {
        "suite": "mme",
        "name": f"synthetic-mme-{n_images}",
        "seed": seed,
        "prompt_suffix": "Please answer the question using a single word or phrase.",
        "watermark": {"probe_question": None, "expected_answer": "8"},
        "decode": {
            "lambda": 1.0,
            "beta": 0.1,
            "gain": "change",
            "k": 2,
            "fusion": "tri",
            "max_tokens": 1,
        },
        "samples": samples,
    }


def build_amber_dataset(n: int = 30, seed: int = 13) -> dict:
    """Generative suite: grounded object vs a hallucination-prone prior."""
    rng = np.random.default_rng(seed)
    vocab = _OBJECTS + ("</s>", "8", "a", "the", "with")
    cog_prone = ["car", "clock", "chair"]
    samples = []
    for i in range(n):
        gt_obj = _OBJECTS[int(rng.integers(0, 8))]
        halluc = cog_prone[int(rng.integers(len(cog_prone)))]
        if halluc == gt_obj:
            halluc = "bench"
        biased = i % 2 == 0
        probe_layer = int(rng.integers(3, 8))
        entry = {
            "seed": int(rng.integers(2**31)),
            "num_layers": FIXTURE_LAYERS,
            "vocab": list(vocab),
            "base_scale": BASE_SCALE,
            "prior_depth": PRIOR_DEPTH,
            "injections": [
                {"layer": probe_layer, "token": "8", "boost": PROBE_BOOST, "condition": "captcha"},
                {"layer": probe_layer, "token": gt_obj, "boost": GROUNDED_BOOST, "condition": "Describe"},
            ],
            "prior_bias": [{"token": halluc if biased else gt_obj, "bias": PRIOR_BIAS}],
        }
        samples.append(
            {
                "id": f"a{i:03d}",
                "question": "Describe this image.",
                "gt_objects": [gt_obj],
                "cog_prone": cog_prone,
                "synthetic": entry,
            }
        )
    return {
        "suite": "amber",
        "name": f"synthetic-amber-{n}",
        "seed": seed,
        "prompt_suffix": "",
        "object_lexicon": list(_OBJECTS),
        "watermark": {"probe_question": None, "expected_answer": "8"},
        "decode": {
            "lambda": 1.0,
            "beta": 0.1,
            "gain": "change",
            "k": 2,
            "fusion": "tri",
            "max_tokens": 3,
        },
        "samples": samples,
    }


def build_dataset(suite: str, n: int | None = None, seed: int | None = None) -> dict:
    builders = {
        "pope": build_pope_dataset,
        "mme": build_mme_dataset,
        "amber": build_amber_dataset,
    }
    if suite not in builders:
        raise ParameterError(f"suite must be one of {sorted(builders)}, got {suite!r}")
    kwargs = {}
    if n is not None:
        kwargs["n" if suite != "mme" else "n_images"] = n
    if seed is not None:
        kwargs["seed"] = seed
    return builders[suite](**kwargs)


def synthetic_trace_archive(
    config: SyntheticModelConfig,
    questions: dict,
    steps: int = 6,
    probe_question: str = "What is the last captcha number in the image?",
    model_name: str = "synthetic",
    candidate_layers: tuple[int, ...] = (),
    seed_step: int = 1,
) -> TraceArchive:
    """Record a synthetic model into a replayable archive.

    ``questions`` maps sample id -> main question text. Each sample gets the
    probe stack plus ``steps`` greedy-forced step stacks, with the mature-row
    greedy tokens stored in the manifest as ground truth. The k-th sample
    (in sorted id order) runs with ``config.seed + k * seed_step`` so samples
    differ; pass seed_step=0 for a shared stream.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    from dataclasses import replace as _replace

    archive = TraceArchive(
        model_name=model_name,
        num_layers=config.num_layers,
        vocab=tuple(config.vocab),
        candidate_layers=tuple(candidate_layers)
        or tuple(range(1, config.num_layers)),
    )
    for k, sample_id in enumerate(sorted(questions)):
        model = SyntheticModel(_replace(config, seed=config.seed + k * seed_step))
        question = questions[sample_id]
        prepass = model.step(DecodeContext(question=probe_question, prefix=()))
        stacks = []
        greedy: list[int] = []
        ctx = DecodeContext(question=question, prefix=())
        for _ in range(steps):
            stack = model.step(ctx)
            stacks.append(np.asarray(stack.rows, dtype=np.float32))
            nxt = int(np.argmax(stack.rows[-1]))
            greedy.append(nxt)
            ctx = ctx.extended(nxt)
        archive.add_sample(
            TraceSample(
                sample_id=sample_id,
                steps=stacks,
                greedy_tokens=tuple(greedy),
                prepass=np.asarray(prepass.rows, dtype=np.float32),
                question=question,
            )
        )
    return archive


def write_synthetic_trace(directory, seed: int = 5, samples: int = 2, steps: int = 6) -> dict:
    """Build and persist a small demo archive; returns its manifest facts."""
    vocab = BINARY_VOCAB
    config = SyntheticModelConfig(
        seed=seed,
        num_layers=FIXTURE_LAYERS,
        vocab=vocab,
        base_scale=BASE_SCALE,
        prior_depth=PRIOR_DEPTH,
        injections=(
            Injection(layer=5, token=token_id(vocab, "8"), boost=PROBE_BOOST, condition="captcha"),
            Injection(layer=5, token=token_id(vocab, "yes"), boost=GROUNDED_BOOST, condition="Is there"),
        ),
        prior_bias=(PriorBias(token=token_id(vocab, "no"), bias=PRIOR_BIAS),),
    )
    questions = {
        f"s{i:03d}": f"Is there a {_OBJECTS[i % len(_OBJECTS)]} in the image?"
        for i in range(samples)
    }
    archive = synthetic_trace_archive(config, questions, steps=steps)
    write_trace(archive, directory)
    return {
        "samples": sorted(questions),
        "num_layers": config.num_layers,
        "vocab_size": len(vocab),
        "steps": steps,
    }
