"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest ``|analytic - numeric| / max(1, |analytic|)`` over checked coordinates.

    ``f`` closes over ``params`` and returns a scalar Tensor.  With
    ``samples`` set, that many (param, index) coordinates are drawn uniformly
    over all parameter elements; otherwise every coordinate is checked.
    """
    if not 0.0 < step <= 1e-3:
        raise ContractError(f"finite-difference step must lie in (0, 1e-3], got {step}")
    for p in params:
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    grads = tape.backward(loss)
    analytic = [grads.get(p, np.zeros_like(p.data)) for p in params]

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    if samples is None or samples >= total:
        flat = np.arange(total)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        flat = np.sort(rng.choice(total, size=samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for k in flat:
        which = int(np.searchsorted(offsets, k, side="right") - 1)
        idx = int(k - offsets[which])
        buf = params[which].data.reshape(-1)
        orig = buf[idx]
        buf[idx] = orig + step
        up = float(f().data)
        buf[idx] = orig - step
        down = float(f().data)
        buf[idx] = orig
        numeric = (up - down) / (2.0 * step)
        a = float(analytic[which].reshape(-1)[idx])
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
