"""Two-class motion-direction task trained on MGTC-masked tokens only."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mgtc.flops import EncoderSpec
from mgtc.masking import mgtc_mask
from mgtc.rng import derive_seeds
from mgtc.synthetic import direction_dataset
from mgtc.tokenizer import CubeShape, tokenize
from mgtc.toy_transformer import forward, init_params, make_batch, train_step_many

DEMO_SPEC = EncoderSpec(depth=1, width=16, mlp_ratio=2.0, num_classes=2, num_heads=2)
DEMO_CUBE = CubeShape(2, 4, 4)
DEMO_STEPS = 400
DEMO_LR = 0.02
DEMO_EXAMPLES = 32


@dataclass
class DemoResult:
    losses: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    eval_every: int = 10
    params: object = None

    @property
    def final_accuracy(self):
        return self.accuracy[-1][1] if self.accuracy else 0.0


def accuracy(params, batches, labels):
    hits = sum(int(np.argmax(forward(params, b)) == y) for b, y in zip(batches, labels))
    return hits / len(labels)


def build_batches(mask_ratio, seed, examples=DEMO_EXAMPLES, cube=DEMO_CUBE):
    """Masked token batches for the direction dataset; key frames drawn in train mode."""
    clips, labels = direction_dataset(examples, seed=seed)
    mask_seeds = derive_seeds(seed, examples)
    batches, grids = [], []
    for clip, s in zip(clips, mask_seeds):
        grid = tokenize(clip, cube)
        mask = mgtc_mask(grid, mask_ratio, mode="train", seed=s)
        batches.append(make_batch(grid, mask))
        grids.append(grid)
    return batches, labels, grids


def run_direction_demo(mask_ratio=0.5, seed=7, steps=DEMO_STEPS, lr=DEMO_LR, examples=DEMO_EXAMPLES,
                       spec=DEMO_SPEC, eval_every=10, callback=None):
    batches, labels, grids = build_batches(mask_ratio, seed, examples)
    params = init_params(spec, grids[0].lattice, seed, token_dim=grids[0].token_dim)
    result = DemoResult(eval_every=eval_every)
    for step in range(steps):
        params, loss = train_step_many(params, batches, labels, lr)
        result.losses.append(loss)
        if (step + 1) % eval_every == 0 or step + 1 == steps:
            acc = accuracy(params, batches, labels)
            result.accuracy.append((step + 1, acc))
            if callback:
                callback(step + 1, loss, acc)
    result.params = params
    return result
