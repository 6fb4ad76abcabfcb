"""Deterministic random streams.

All randomness flows through numpy's Philox4x64-10 bit generator, a
counter-based generator whose raw stream depends only on the seed.  The
same seed gives the same draws on every platform for a fixed numpy release.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALGORITHM = "philox4x64-10"


@dataclass(frozen=True)
class RngState:
    seed: int
    algorithm: str = ALGORITHM

    def generator(self) -> np.random.Generator:
        return new_rng(self.seed)


def new_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal draws with |z| > bound redrawn; scaled by ``std`` afterwards."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z * std
