"""Space-time attention stages and the encoder block for all five schemes.

Each scheme is an ordered list of stages.  A stage lets every patch token
attend to the class token plus a scheme-specific set of patch tokens:

=================  ==========================================================
stage              patch keys for query (p, t)
=================  ==========================================================
``joint``          every patch of every frame
``space``          the N patches of frame t
``time``           the F patches at location p
``width``          patches of frame t in p's row
``height``         patches of frame t in p's column
``local``          an (N_h/2 x N_w/2) window around p, shifted inside the
                   frame at borders, over all F frames
``global``         the stride-2 lattice anchored at row 0, col 0, frame 0
=================  ==========================================================

The class token only issues a query in one stage per block (the last stage
run; the space stage for parallel divided attention), where it attends to
all T tokens.  In every other stage its state passes through untouched.

Stages other than the scheme's last carry an extra zero-initialised
projection on their output (``stage_fc``), so a freshly initialised
factorised block behaves like its final stage alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from .config import Scheme, StageOrder
from .embedding import PatchGrid, TokenSequence
from .errors import ContractError, DimensionError
from .numeric import (
    Tensor,
    concat,
    gelu,
    layer_norm,
    linear,
    matmul,
    reshape,
    softmax_rows,
    swap_last,
    take,
    transpose,
)

STAGES: dict[Scheme, tuple[str, ...]] = {
    Scheme.SPACE: ("space",),
    Scheme.JOINT: ("joint",),
    Scheme.DIVIDED: ("time", "space"),
    Scheme.LOCAL_GLOBAL: ("local", "global"),
    Scheme.AXIAL: ("time", "width", "height"),
}


def stage_sequence(scheme: Scheme, order: StageOrder = StageOrder.TIME_SPACE) -> tuple[str, ...]:
    """Stages in execution order (for ``parallel`` the order is irrelevant)."""
    scheme, order = Scheme(scheme), StageOrder(order)
    if scheme is Scheme.DIVIDED and order is StageOrder.SPACE_TIME:
        return ("space", "time")
    return STAGES[scheme]


def is_parallel(scheme: Scheme, order: StageOrder) -> bool:
    return Scheme(scheme) is Scheme.DIVIDED and StageOrder(order) is StageOrder.PARALLEL


def projected_stages(scheme: Scheme) -> tuple[str, ...]:
    return STAGES[Scheme(scheme)][:-1]


def cls_stage(scheme: Scheme, order: StageOrder = StageOrder.TIME_SPACE) -> str:
    if is_parallel(scheme, order):
        return "space"
    return stage_sequence(scheme, order)[-1]


# ---------------------------------------------------------------- parameters

@dataclass
class StageParams:
    ln_g: Tensor
    ln_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class BlockParams:
    stages: dict[str, StageParams]
    mlp_ln_g: Tensor
    mlp_ln_b: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    # stage name -> (weight, bias) of the extra output projection
    stage_fc: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)


@dataclass
class AttentionWeights:
    """Probabilities one query assigns over its neighbourhood."""

    query: int
    neighborhood: list[int]
    probs: np.ndarray


# ---------------------------------------------------------------- neighbourhoods

@dataclass(frozen=True)
class StageLayout:
    """Patch-token index tables for one stage.

    Row g of ``queries`` lists query tokens that all attend to the class
    token followed by the patch tokens in row g of ``keys``.  Every patch
    token appears exactly once in ``queries``.
    """

    queries: np.ndarray  # (G, Sq)
    keys: np.ndarray  # (G, Sk)

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.argsort(self.queries.reshape(-1) - 1)

    @property
    def neighborhood_size(self) -> int:
        return self.keys.shape[1] + 1


def _local_extent(n: int) -> int:
    return max(1, n // 2)


def _window_start(i: int, n: int, size: int) -> int:
    return min(max(i - size // 2, 0), n - size)


@lru_cache(maxsize=None)
def stage_layout(stage: str, grid: PatchGrid) -> StageLayout:
    nh, nw, f, n = grid.n_h, grid.n_w, grid.frames, grid.n
    tok = 1 + np.arange(n * f).reshape(f, nh, nw)  # tok[t, r, c]
    if stage == "joint":
        g = tok.reshape(1, -1)
        return StageLayout(g, g)
    if stage == "space":
        g = tok.reshape(f, n)
        return StageLayout(g, g)
    if stage == "time":
        g = tok.reshape(f, n).T.copy()
        return StageLayout(g, g)
    if stage == "width":
        g = tok.reshape(f * nh, nw)
        return StageLayout(g, g)
    if stage == "height":
        g = tok.transpose(0, 2, 1).reshape(f * nw, nh)
        return StageLayout(g, g)
    if stage == "global":
        keys = tok[::2, ::2, ::2].reshape(1, -1)
        return StageLayout(tok.reshape(1, -1), keys)
    if stage == "local":
        wh, ww = _local_extent(nh), _local_extent(nw)
        rows = []
        for t in range(f):
            for r in range(nh):
                r0 = _window_start(r, nh, wh)
                for c in range(nw):
                    c0 = _window_start(c, nw, ww)
                    rows.append(tok[:, r0:r0 + wh, c0:c0 + ww].reshape(-1))
        return StageLayout(tok.reshape(-1, 1), np.array(rows))
    raise ValueError(f"unknown stage {stage!r}")


def neighborhood(scheme: Scheme, stage: str, p: int, t: int, grid: PatchGrid) -> list[int]:
    """Key token indices for patch query (p, t), class token first."""
    if stage not in STAGES[Scheme(scheme)]:
        raise ValueError(f"scheme {Scheme(scheme).value} has no stage {stage!r}")
    q = grid.token_index(p, t)
    layout = stage_layout(stage, grid)
    row = np.nonzero((layout.queries == q).any(axis=1))[0][0]
    return [0] + layout.keys[row].tolist()


def stage_neighborhoods(stage: str, grid: PatchGrid, cls_queries: bool) -> list[list[int] | None]:
    """Neighbourhood of every token (None where the token issues no query)."""
    layout = stage_layout(stage, grid)
    out: list[list[int] | None] = [None] * grid.tokens
    if cls_queries:
        out[0] = list(range(grid.tokens))
    for qrow, krow in zip(layout.queries, layout.keys):
        keys = [0] + krow.tolist()
        for q in qrow:
            out[int(q)] = keys
    return out


def comparisons_per_patch(scheme: Scheme, grid: PatchGrid) -> int:
    """Query-key comparisons one patch makes in one block, summed over stages."""
    return sum(stage_layout(s, grid).neighborhood_size for s in STAGES[Scheme(scheme)])


# ---------------------------------------------------------------- attention math

def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return transpose(reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, a, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, a * dh))


def qkv(tokens: Tensor, sp: StageParams, heads: int, normalize: bool = True):
    """LayerNorm then the three projections; each result is (B, A, T, D_h)."""
    d = tokens.shape[-1]
    if d % heads:
        raise DimensionError(f"embedding dim {d} is not divisible by {heads} heads")
    x = layer_norm(tokens, sp.ln_g, sp.ln_b) if normalize else tokens
    return tuple(_split_heads(linear(x, w, b), heads)
                 for w, b in ((sp.wq, sp.bq), (sp.wk, sp.bk), (sp.wv, sp.bv)))


def attend(q: np.ndarray, k: np.ndarray, v: np.ndarray,
           neighborhoods: Sequence[Sequence[int] | None], scale: float):
    """Reference attention over explicit per-query neighbourhoods.

    ``q``, ``k``, ``v`` are (A, T, D_h) arrays for one clip.  Returns the
    aggregated values (A, T, D_h), zero for tokens without a neighbourhood,
    and the per-query :class:`AttentionWeights` averaged over heads.
    """
    q, k, v = (np.asarray(x.data if isinstance(x, Tensor) else x) for x in (q, k, v))
    out = np.zeros_like(q)
    weights = []
    for i, nb in enumerate(neighborhoods):
        if nb is None:
            continue
        if len(nb) == 0:
            raise ContractError(f"query {i} has an empty neighbourhood")
        idx = np.asarray(nb)
        s = np.einsum("ad,akd->ak", q[:, i], k[:, idx]) * scale
        s = s - s.max(axis=1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=1, keepdims=True)
        out[:, i] = np.einsum("ak,akd->ad", a, v[:, idx])
        weights.append(AttentionWeights(i, list(nb), a.mean(axis=0)))
    return out, weights


def _grouped_attention(q, k, v, layout: StageLayout, scale: float, record: dict | None):
    b, a, _, dh = q.shape
    g, sq = layout.queries.shape
    sk = layout.keys.shape[1]
    qg = reshape(take(q, layout.queries.reshape(-1), axis=2), (b, a, g, sq, dh))
    kg = reshape(take(k, layout.keys.reshape(-1), axis=2), (b, a, g, sk, dh))
    vg = reshape(take(v, layout.keys.reshape(-1), axis=2), (b, a, g, sk, dh))
    kc = reshape(k[:, :, 0:1, :], (b, a, 1, dh, 1))
    vc = reshape(v[:, :, 0:1, :], (b, a, 1, 1, dh))
    scores = concat([matmul(qg, kc), matmul(qg, swap_last(kg))], axis=-1) * scale
    probs = softmax_rows(scores)
    if record is not None:
        record["patch_probs"] = probs.data
    out = matmul(probs[..., 0:1], vc) + matmul(probs[..., 1:], vg)
    out = reshape(out, (b, a, g * sq, dh))
    return take(out, layout.inverse, axis=2)


def _cls_attention(q, k, v, scale: float, record: dict | None):
    scores = matmul(q[:, :, 0:1, :], swap_last(k)) * scale
    probs = softmax_rows(scores)
    if record is not None:
        record["cls_probs"] = probs.data
    return matmul(probs, v)


def stage_update(z: Tensor, block: BlockParams, stage: str, grid: PatchGrid, heads: int,
                 cls_queries: bool, record: list | None = None) -> Tensor:
    """Residual increment contributed by one attention stage, shape (B, T, D)."""
    sp = block.stages[stage]
    q, k, v = qkv(z, sp, heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    layout = stage_layout(stage, grid)
    rec = {"stage": stage, "layout": layout} if record is not None else None
    patches = _merge_heads(_grouped_attention(q, k, v, layout, scale, rec))
    patch_delta = linear(patches, sp.wo, sp.bo)
    fc = block.stage_fc.get(stage)
    if fc is not None:
        patch_delta = linear(patch_delta, *fc)
    b, _, d = z.shape
    if cls_queries:
        c = _merge_heads(_cls_attention(q, k, v, scale, rec))
        cls_delta = linear(c, sp.wo, sp.bo)
        if fc is not None:
            cls_delta = linear(cls_delta, *fc)
    else:
        cls_delta = Tensor(np.zeros((b, 1, d), dtype=z.dtype))
    if record is not None:
        record.append(rec)
    return concat([cls_delta, patch_delta], axis=1)


def mlp_update(z: Tensor, block: BlockParams) -> Tensor:
    h = layer_norm(z, block.mlp_ln_g, block.mlp_ln_b)
    return linear(gelu(linear(h, block.fc1_w, block.fc1_b)), block.fc2_w, block.fc2_b)


def block_forward(seq: TokenSequence, params: BlockParams, scheme: Scheme, heads: int,
                  order: StageOrder = StageOrder.TIME_SPACE,
                  record: list | None = None) -> TokenSequence:
    """One encoder block: the scheme's attention stages, then LN -> MLP, each residual.

    ``record``, when given, receives one dict per stage holding the
    attention probabilities (used by attention rollout).
    """
    z, grid = seq.tokens, seq.grid
    if z.ndim == 2:
        z = reshape(z, (1,) + z.shape)
    stages = stage_sequence(scheme, order)
    owner = cls_stage(scheme, order)
    if is_parallel(scheme, order):
        deltas = [stage_update(z, params, s, grid, heads, s == owner, record) for s in stages]
        total = deltas[0]
        for d in deltas[1:]:
            total = total + d
        z = z + total
    else:
        for s in stages:
            z = z + stage_update(z, params, s, grid, heads, s == owner, record)
    z = z + mlp_update(z, params)
    return TokenSequence(z, grid)
