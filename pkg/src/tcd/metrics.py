"""Desk-scale hallucination metrics.

Binary question accuracy/F1 with "yes" as the positive class, paired
perception scores (per-image accuracy plus both-correct bonus), and
generative object-grounding rates computed from exact-match lexicon scans.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParameterError

_WORD = re.compile(r"[a-z0-9']+")


@dataclass(frozen=True)
class BinarySample:
    sample_id: str
    gold: str
    predicted: str

    def __post_init__(self):
        if self.gold not in ("yes", "no"):
            raise ParameterError(f"gold label must be yes/no, got {self.gold!r}")
        if self.predicted not in ("yes", "no", "invalid"):
            raise ParameterError(f"prediction must be yes/no/invalid, got {self.predicted!r}")


@dataclass(frozen=True)
class GenerativeSample:
    """Object mentions extracted from one generated description."""

    sample_id: str
    mentioned: frozenset
    gt: frozenset
    cog_prone: frozenset = frozenset()

    def __post_init__(self):
        for name in ("mentioned", "gt", "cog_prone"):
            vals = frozenset(str(v).lower() for v in getattr(self, name))
            object.__setattr__(self, name, vals)


def parse_binary_answer(text: str) -> str:
    """First content word of a generated answer, mapped to yes/no/invalid."""
    for word in _WORD.findall(text.lower()):
        return word if word in ("yes", "no") else "invalid"
    return "invalid"


def extract_objects(text: str, lexicon) -> frozenset:
    """Exact-match scan of the generation against an object lexicon."""
    words = set(_WORD.findall(text.lower()))
    return frozenset(w for w in (str(t).lower() for t in lexicon) if w in words)


def binary_metrics(samples) -> dict:
    """Confusion-matrix arithmetic over yes/no samples.

    "yes" is the positive class. Invalid predictions are wrong for
    whichever side they face: a missed "yes" counts as a false negative, a
    missed "no" as a false positive. Zero denominators yield 0.
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("binary_metrics needs at least one sample")
    tp = fp = fn = tn = 0
    for s in samples:
        if s.gold == "yes":
            if s.predicted == "yes":
                tp += 1
            else:
                fn += 1
        else:
            if s.predicted == "no":
                tn += 1
            else:
                fp += 1
    total = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    # Integer-ratio form of 2PR/(P+R); identical algebraically, exact in
    # float64 whenever the counts divide cleanly.
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    return {
        "n": total,
        "accuracy": (tp + tn) / total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "tn": tn,
    }


def amber_metrics(samples) -> dict:
    """Grounding rates over generative samples.

    chair     hallucinated mentions / all mentions (pooled)
    cover     ground-truth objects mentioned / ground-truth objects (pooled,
              samples with an empty ground truth excluded from this ratio)
    hal_rate  fraction of samples with at least one hallucinated mention
    cog       hallucination-prone mentions / all mentions (pooled)
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("amber_metrics needs at least one sample")
    mentioned_total = 0
    halluc_total = 0
    cog_total = 0
    cover_hits = 0
    cover_gt = 0
    hal_samples = 0
    empty_gt: list[str] = []
    for s in samples:
        halluc = s.mentioned - s.gt
        mentioned_total += len(s.mentioned)
        halluc_total += len(halluc)
        cog_total += len(halluc & s.cog_prone)
        if halluc:
            hal_samples += 1
        if s.gt:
            cover_hits += len(s.mentioned & s.gt)
            cover_gt += len(s.gt)
        else:
            empty_gt.append(s.sample_id)
    return {
        "n": len(samples),
        "chair": halluc_total / mentioned_total if mentioned_total else 0.0,
        "cover": cover_hits / cover_gt if cover_gt else 0.0,
        "hal_rate": hal_samples / len(samples),
        "cog": cog_total / mentioned_total if mentioned_total else 0.0,
        "empty_gt_excluded": sorted(empty_gt),
    }


def mme_score(pairs, subtask: str = "") -> float:
    """Perception score for per-image question pairs, in [0, 200].

    100 * per-question accuracy plus 100 * fraction of images with both
    questions answered correctly.
    """
    pairs = list(pairs)
    if not pairs:
        raise ParameterError("mme_score needs at least one image pair")
    correct = 0
    both = 0
    for pair in pairs:
        if len(pair) != 2:
            raise ParameterError(
                f"each image must contribute exactly two questions, got {len(pair)}"
            )
        a, b = pair
        hit_a = a.predicted == a.gold
        hit_b = b.predicted == b.gold
        correct += int(hit_a) + int(hit_b)
        both += int(hit_a and hit_b)
    accuracy = correct / (2 * len(pairs))
    accuracy_plus = both / len(pairs)
    return 100.0 * accuracy + 100.0 * accuracy_plus
