"""Straight-line reference implementations used as test oracles.

Nothing here calls into the package's attention or model code: neighbourhoods
come from coordinate predicates and attention is dense with -inf masking.
"""

import math

import numpy as np

EPS = 1e-6


def ln(x, g, b, eps=EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gelu(x):
    erf = np.vectorize(math.erf)
    return x * 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def coords(index, n_h, n_w):
    """Token index -> (t, row, col); class token -> None."""
    if index == 0:
        return None
    t, p = divmod(index - 1, n_h * n_w)
    return t, p // n_w, p % n_w


def allowed(stage, q, k, n_h, n_w, frames):
    """Whether patch query q may compare with key k in ``stage``."""
    if k is None:
        return True
    tq, rq, cq = q
    tk, rk, ck = k
    if stage == "joint":
        return True
    if stage == "space":
        return tk == tq
    if stage == "time":
        return rk == rq and ck == cq
    if stage == "width":
        return tk == tq and rk == rq
    if stage == "height":
        return tk == tq and ck == cq
    if stage == "global":
        return tk % 2 == 0 and rk % 2 == 0 and ck % 2 == 0
    if stage == "local":
        wh, ww = max(1, n_h // 2), max(1, n_w // 2)
        r0 = min(max(rq - wh // 2, 0), n_h - wh)
        c0 = min(max(cq - ww // 2, 0), n_w - ww)
        return r0 <= rk < r0 + wh and c0 <= ck < c0 + ww
    raise ValueError(stage)


def mask(stage, n_h, n_w, frames, cls_queries):
    t = n_h * n_w * frames + 1
    m = np.zeros((t, t), dtype=bool)
    m[0, :] = cls_queries
    for qi in range(1, t):
        q = coords(qi, n_h, n_w)
        for ki in range(t):
            m[qi, ki] = allowed(stage, q, coords(ki, n_h, n_w), n_h, n_w, frames)
    return m


def masked_stage(z, sp, heads, m, fc=None):
    """Residual increment of one stage via dense masked attention. ``sp`` maps names to arrays."""
    t, d = z.shape
    dh = d // heads
    x = ln(z, sp["ln_g"], sp["ln_b"])
    q = x @ sp["wq"].T + sp["bq"]
    k = x @ sp["wk"].T + sp["bk"]
    v = x @ sp["wv"].T + sp["bv"]
    out = np.zeros((t, d))
    for a in range(heads):
        sl = slice(a * dh, (a + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        s = np.where(m, s, -np.inf)
        rows = m.any(axis=1)
        s[~rows] = 0.0
        s = s - s.max(axis=1, keepdims=True)
        e = np.where(m, np.exp(s), 0.0)
        p = e / np.maximum(e.sum(axis=1, keepdims=True), 1e-300)
        out[:, sl] = p @ v[:, sl]
    delta = out @ sp["wo"].T + sp["bo"]
    if fc is not None:
        delta = delta @ fc[0].T + fc[1]
    delta[~m.any(axis=1)] = 0.0
    return delta


def mlp(z, blk):
    h = ln(z, blk["mlp_ln_g"], blk["mlp_ln_b"])
    return gelu(h @ blk["fc1_w"].T + blk["fc1_b"]) @ blk["fc2_w"].T + blk["fc2_b"]


def block_arrays(block):
    """BlockParams -> nested plain dicts of arrays."""
    out = {name: getattr(block, name).data for name in
           ("mlp_ln_g", "mlp_ln_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")}
    out["stages"] = {s: {f: t.data for f, t in vars(sp).items()} for s, sp in block.stages.items()}
    out["fc"] = {s: (w.data, b.data) for s, (w, b) in block.stage_fc.items()}
    return out


def masked_block(z, blk, stages, cls_owner, heads, n_h, n_w, frames, parallel=False):
    """Block forward as a sequence of masked dense stages."""
    if parallel:
        total = sum(masked_stage(z, blk["stages"][s], heads, mask(s, n_h, n_w, frames, s == cls_owner),
                                 blk["fc"].get(s)) for s in stages)
        z = z + total
    else:
        for s in stages:
            m = mask(s, n_h, n_w, frames, s == cls_owner)
            z = z + masked_stage(z, blk["stages"][s], heads, m, blk["fc"].get(s))
    return z + mlp(z, blk)


def patches_by_loops(clip, p):
    """(F, H, W, C) -> (N*F, P*P*C) with explicit pixel indexing."""
    f, h, w, c = clip.shape
    rows = []
    for t in range(f):
        for r in range(h // p):
            for col in range(w // p):
                vec = []
                for dy in range(p):
                    for dx in range(p):
                        for ch in range(c):
                            vec.append(clip[t, r * p + dy, col * p + dx, ch])
                rows.append(vec)
    return np.array(rows)


def forward_oracle(clip, params, stages, cls_owner, pos_rows):
    """Whole-model forward for one clip from plain arrays."""
    cfg = params.config
    n_h, n_w = cfg.H // cfg.P, cfg.W // cfg.P
    e = params.embedding
    x = patches_by_loops(clip, cfg.P) @ e.proj_w.data.T + e.proj_b.data
    z = np.vstack([e.cls.data[None], x])
    if e.pos is not None:
        z = z + e.pos.data[pos_rows]
    for blk in params.blocks:
        z = masked_block(z, block_arrays(blk), stages, cls_owner, cfg.A, n_h, n_w, cfg.F)
    y = ln(z[0], params.norm_g.data, params.norm_b.data)
    h = gelu(y @ params.head_fc1_w.data.T + params.head_fc1_b.data)
    return h @ params.head_fc2_w.data.T + params.head_fc2_b.data
