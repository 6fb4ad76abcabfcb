"""End-to-end finite-difference check of the model's backward pass."""

from __future__ import annotations

import numpy as np

from ..config import ModelConfig
from ..model import forward, init_params
from ..numeric import cross_entropy, grad_check, new_rng, truncated_normal

CHECK_STD = 0.2
CHECK_BATCH = 2


def model_grad_check(config: ModelConfig, samples: int = 64, seed: int = 0, step: float = 1e-5) -> float:
    """Max relative error of loss gradients at ``samples`` random coordinates.

    Runs in float64 on a batch of random clips.  The zero-initialised stage
    projections are filled with random values first so that every stage
    lies on a live gradient path.
    """
    rng = new_rng(seed)
    params = init_params(config, rng, std=CHECK_STD)
    for blk in params.blocks:
        for w, b in blk.stage_fc.values():
            w.data = truncated_normal(rng, w.shape, CHECK_STD)
            b.data = truncated_normal(rng, b.shape, CHECK_STD)
    clips = rng.random((CHECK_BATCH, config.F, config.H, config.W, 3))
    labels = rng.integers(0, config.num_classes, CHECK_BATCH)
    return grad_check(lambda: cross_entropy(forward(clips, params), labels), params.tensors(),
                      step=step, samples=samples, rng=rng)
