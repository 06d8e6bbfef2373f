"""A tiny deterministic layered language model used as the export host.

Decoder-only pre-norm transformer, seeded random weights, CPU float32, no
dropout. An image enters as a 16-bin intensity histogram projected into the
embedding space and added to every position, so pixel-level changes (e.g. a
composited watermark) propagate into every layer's logits.

The exporter never reads internals beyond what a real host exposes: block
outputs are captured with forward hooks and pushed through the model's own
final norm and vocabulary head (the early-exit readout convention recorded
in the archive manifest).
"""
from __future__ import annotations

import re

import numpy as np
import torch
from torch import nn

_WORD = re.compile(r"[a-z0-9']+|[?.,!]")

DEFAULT_VOCAB = (
    "<unk>", "<eos>", "yes", "no", "8", "0", "1", "2", "3", "4",
    "is", "there", "a", "the", "in", "image", "what", "last", "captcha",
    "number", "dog", "cat", "car", "tree", "bird", "boat", "person", "?",
)


class _Block(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.norm_attn = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, heads, batch_first=True)
        self.norm_mlp = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model)
        )

    def forward(self, h, causal_mask):
        x = self.norm_attn(h)
        attn_out, _ = self.attn(x, x, x, attn_mask=causal_mask, need_weights=False)
        h = h + attn_out
        h = h + self.mlp(self.norm_mlp(h))
        return h


class ToyLayeredLM(nn.Module):
    """num_layers blocks, vocabulary head applicable to any block's output."""

    def __init__(self, vocab=DEFAULT_VOCAB, num_layers=4, d_model=32, heads=2, seed=7,
                 max_len=64):
        super().__init__()
        torch.manual_seed(seed)
        torch.set_num_threads(1)
        self.vocab = tuple(vocab)
        self.token_ids = {t: i for i, t in enumerate(self.vocab)}
        self.num_layers = num_layers
        self.max_len = max_len
        self.embed = nn.Embedding(len(self.vocab), d_model)
        self.pos = nn.Embedding(max_len, d_model)
        self.image_proj = nn.Linear(16, d_model)
        self.blocks = nn.ModuleList(_Block(d_model, heads) for _ in range(num_layers))
        self.final_norm = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, len(self.vocab), bias=False)
        self.eval()

    # -- input plumbing ----------------------------------------------------

    def tokenize(self, text: str) -> list[int]:
        unk = self.token_ids["<unk>"]
        return [self.token_ids.get(w, unk) for w in _WORD.findall(text.lower())]

    @staticmethod
    def image_histogram(pixels: np.ndarray) -> np.ndarray:
        """16-bin intensity histogram, normalized; all-zero without an image."""
        if pixels is None:
            return np.zeros(16, dtype=np.float32)
        flat = np.asarray(pixels, dtype=np.uint8).reshape(-1)
        hist = np.bincount(flat >> 4, minlength=16).astype(np.float32)
        return hist / max(1.0, float(hist.sum()))

    # -- forward with per-block capture -------------------------------------

    @torch.no_grad()
    def layer_logits(self, token_ids: list[int], pixels: np.ndarray | None) -> np.ndarray:
        """(num_layers, vocab) float32 logits for the next token.

        Row l is the vocabulary head applied to block l's final-norm output
        at the last position; the last row therefore equals the model's own
        next-token logits.
        """
        if not token_ids:
            raise ValueError("empty token sequence")
        if len(token_ids) > self.max_len:
            raise ValueError(f"sequence length {len(token_ids)} exceeds {self.max_len}")
        captured: list[torch.Tensor] = []
        hooks = [
            block.register_forward_hook(lambda mod, args, out: captured.append(out))
            for block in self.blocks
        ]
        try:
            ids = torch.tensor([token_ids], dtype=torch.long)
            positions = torch.arange(len(token_ids)).unsqueeze(0)
            hist = torch.from_numpy(self.image_histogram(pixels)).unsqueeze(0)
            h = self.embed(ids) + self.pos(positions) + self.image_proj(hist).unsqueeze(1)
            mask = torch.triu(
                torch.full((len(token_ids), len(token_ids)), float("-inf")), diagonal=1
            )
            for block in self.blocks:
                h = block(h, mask)
        finally:
            for hook in hooks:
                hook.remove()
        rows = [
            self.head(self.final_norm(out[0, -1])).detach().numpy().astype(np.float32)
            for out in captured
        ]
        return np.stack(rows)

    @torch.no_grad()
    def greedy_generate(self, token_ids: list[int], pixels, steps: int):
        """Greedy continuation; returns (tokens, stacks) with one stack/step."""
        seq = list(token_ids)
        stacks = []
        out: list[int] = []
        for _ in range(steps):
            stack = self.layer_logits(seq, pixels)
            nxt = int(np.argmax(stack[-1]))
            stacks.append(stack)
            out.append(nxt)
            seq.append(nxt)
        return out, stacks
