import numpy as np
import pytest

from tcd.model import LayerLogitStack


class FixedStackModel:
    """Serves pre-built logit stacks indexed by prefix length."""

    def __init__(self, stacks, vocab=None):
        self.stacks = [np.asarray(s, dtype=np.float64) for s in stacks]
        self.num_layers = self.stacks[0].shape[0]
        vocab_size = self.stacks[0].shape[1]
        self.vocab = tuple(vocab) if vocab else tuple(f"t{i}" for i in range(vocab_size))

    def step(self, ctx):
        return LayerLogitStack(step_index=len(ctx.prefix), rows=self.stacks[len(ctx.prefix)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)


def random_stack(rng, num_layers, vocab_size, scale=4.0):
    return rng.uniform(-scale, scale, size=(num_layers, vocab_size))
