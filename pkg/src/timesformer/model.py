"""Full model: parameters, forward pass, weight transfer, rollout, multi-crop inference."""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .attention import (
    BlockParams,
    StageParams,
    STAGES,
    block_forward,
    is_parallel,
    projected_stages,
)
from .config import ModelConfig, Scheme
from .embedding import EmbeddingParams, PosMode, embed, patchify, position_rows
from .errors import ConfigurationError
from .numeric import Tensor, gelu, layer_norm, linear, truncated_normal

# ---------------------------------------------------------------- parameters


@dataclass
class ModelParams:
    config: ModelConfig
    embedding: EmbeddingParams
    blocks: list[BlockParams]
    norm_g: Tensor
    norm_b: Tensor
    head_fc1_w: Tensor
    head_fc1_b: Tensor
    head_fc2_w: Tensor
    head_fc2_b: Tensor

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        e = self.embedding
        out["embed.proj_w"] = e.proj_w
        out["embed.proj_b"] = e.proj_b
        out["embed.cls"] = e.cls
        if e.pos is not None:
            out["embed.pos"] = e.pos
        for i, blk in enumerate(self.blocks):
            for stage, sp in blk.stages.items():
                for fname, t in vars(sp).items():
                    out[f"blocks.{i}.{stage}.{fname}"] = t
                if stage in blk.stage_fc:
                    w, b = blk.stage_fc[stage]
                    out[f"blocks.{i}.{stage}.fc_w"] = w
                    out[f"blocks.{i}.{stage}.fc_b"] = b
            for fname in ("mlp_ln_g", "mlp_ln_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"):
                out[f"blocks.{i}.{fname}"] = getattr(blk, fname)
        out["norm.g"] = self.norm_g
        out["norm.b"] = self.norm_b
        for fname in ("fc1_w", "fc1_b", "fc2_w", "fc2_b"):
            out[f"head.{fname}"] = getattr(self, f"head_{fname}")
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    def num_elements(self) -> int:
        return sum(t.size for t in self.tensors())

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelParams":
        out = self.copy()
        for t in out.tensors():
            t.data = t.data.astype(dtype)
        return out


def _build(config: ModelConfig, fill: Callable[[str, tuple[int, ...], str], np.ndarray]) -> ModelParams:
    """Assemble the parameter tree, asking ``fill(name, shape, kind)`` for each array."""
    d, c, g = config.D, config.num_classes, config.grid
    hidden = config.mlp_ratio * d

    def t(name, shape, kind):
        return Tensor(fill(name, shape, kind), name=name)

    pos = None
    if config.pos_mode is PosMode.SPACE_ONLY:
        pos = t("embed.pos", (g.n + 1, d), "normal")
    elif config.pos_mode is PosMode.SPACE_TIME:
        pos = t("embed.pos", (g.tokens, d), "normal")
    embedding = EmbeddingParams(
        proj_w=t("embed.proj_w", (d, 3 * config.P ** 2), "normal"),
        proj_b=t("embed.proj_b", (d,), "zeros"),
        cls=t("embed.cls", (d,), "normal"),
        pos=pos,
    )
    blocks = []
    for i in range(config.L):
        stages = {}
        for s in STAGES[config.scheme]:
            pre = f"blocks.{i}.{s}."
            stages[s] = StageParams(
                ln_g=t(pre + "ln_g", (d,), "ones"), ln_b=t(pre + "ln_b", (d,), "zeros"),
                wq=t(pre + "wq", (d, d), "normal"), bq=t(pre + "bq", (d,), "zeros"),
                wk=t(pre + "wk", (d, d), "normal"), bk=t(pre + "bk", (d,), "zeros"),
                wv=t(pre + "wv", (d, d), "normal"), bv=t(pre + "bv", (d,), "zeros"),
                wo=t(pre + "wo", (d, d), "normal"), bo=t(pre + "bo", (d,), "zeros"),
            )
        stage_fc = {}
        if config.temporal_fc:
            for s in projected_stages(config.scheme):
                pre = f"blocks.{i}.{s}."
                stage_fc[s] = (t(pre + "fc_w", (d, d), "zeros"), t(pre + "fc_b", (d,), "zeros"))
        pre = f"blocks.{i}."
        blocks.append(BlockParams(
            stages=stages,
            mlp_ln_g=t(pre + "mlp_ln_g", (d,), "ones"), mlp_ln_b=t(pre + "mlp_ln_b", (d,), "zeros"),
            fc1_w=t(pre + "fc1_w", (hidden, d), "normal"), fc1_b=t(pre + "fc1_b", (hidden,), "zeros"),
            fc2_w=t(pre + "fc2_w", (d, hidden), "normal"), fc2_b=t(pre + "fc2_b", (d,), "zeros"),
            stage_fc=stage_fc,
        ))
    return ModelParams(
        config=config,
        embedding=embedding,
        blocks=blocks,
        norm_g=t("norm.g", (d,), "ones"), norm_b=t("norm.b", (d,), "zeros"),
        head_fc1_w=t("head.fc1_w", (d, d), "normal"), head_fc1_b=t("head.fc1_b", (d,), "zeros"),
        head_fc2_w=t("head.fc2_w", (c, d), "normal"), head_fc2_b=t("head.fc2_b", (c,), "zeros"),
    )


def init_params(config: ModelConfig, rng: np.random.Generator, std: float = 0.02) -> ModelParams:
    """Truncated-normal (``std``) projections, zero biases and stage projections, unit LN.

    Values are rounded to float32 precision (held as float64) so that
    checkpoints, which store float32, round-trip exactly.
    """

    def fill(name, shape, kind):
        if kind == "normal":
            return truncated_normal(rng, shape, std).astype(np.float32).astype(np.float64)
        return np.ones(shape) if kind == "ones" else np.zeros(shape)

    return _build(config, fill)


def params_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    def fill(name, shape, kind):
        try:
            arr = arrays[name]
        except KeyError:
            raise ConfigurationError(f"missing parameter {name!r}") from None
        if arr.shape != shape:
            raise ConfigurationError(f"parameter {name!r} has shape {arr.shape}, expected {shape}")
        return np.array(arr, dtype=np.float64)

    params = _build(config, fill)
    extra = set(arrays) - set(params.named_tensors())
    if extra:
        raise ConfigurationError(f"unexpected parameters: {sorted(extra)}")
    return params


# ---------------------------------------------------------------- forward

def _as_batch(clip, config: ModelConfig, dtype) -> tuple[np.ndarray, bool]:
    x = np.asarray(clip, dtype=dtype)
    single = x.ndim == 4
    if single:
        x = x[None]
    want = (config.F, config.H, config.W, 3)
    if x.ndim != 5 or x.shape[1:] != want:
        raise ConfigurationError(f"clip shape {x.shape[-4:] if x.ndim >= 4 else x.shape} "
                                 f"does not match config (F, H, W, C) = {want}")
    return x, single


def encode(clip, params: ModelParams, config: ModelConfig | None = None,
           record: list | None = None) -> Tensor:
    """Final class-token embedding y = LN(z_cls), shape (B, D)."""
    config = config or params.config
    x, _ = _as_batch(clip, config, params.embedding.proj_w.dtype)
    seq = embed(patchify(x, config.P), params.embedding, config.pos_mode, config.grid)
    for blk in params.blocks:
        rec = [] if record is not None else None
        seq = block_forward(seq, blk, config.scheme, config.A, config.stage_order, rec)
        if record is not None:
            record.append(rec)
    return layer_norm(seq.tokens[:, 0, :], params.norm_g, params.norm_b)


def forward(clip, params: ModelParams, config: ModelConfig | None = None,
            record: list | None = None) -> Tensor:
    """Logits for one clip (F, H, W, 3) → (C,) or a batch (B, F, H, W, 3) → (B, C)."""
    config = config or params.config
    single = np.ndim(clip) == 4
    y = encode(clip, params, config, record)
    h = gelu(linear(y, params.head_fc1_w, params.head_fc1_b))
    logits = linear(h, params.head_fc2_w, params.head_fc2_b)
    return logits[0] if single else logits


def softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------- weight transfer

def init_from_spatial(target: ModelParams, source: ModelParams) -> ModelParams:
    """Divided space-time weights from a space-only model.

    Both attention stages start from the source's spatial attention, every
    shared weight is copied, and the temporal output projection is zeroed.
    ``target`` supplies only the configuration.
    """
    tc, sc = target.config, source.config
    if tc.scheme is not Scheme.DIVIDED or sc.scheme is not Scheme.SPACE:
        raise ConfigurationError(f"transfer needs DividedST target and Space source, "
                                 f"got {tc.scheme.value} <- {sc.scheme.value}")
    for name in ("D", "L", "A", "P", "mlp_ratio", "num_classes"):
        if getattr(tc, name) != getattr(sc, name):
            raise ConfigurationError(f"config mismatch on {name}: {getattr(tc, name)} vs {getattr(sc, name)}")

    src = {k: t.data for k, t in source.named_tensors().items()}
    arrays: dict[str, np.ndarray] = {}
    for name, t in target.named_tensors().items():
        parts = name.split(".")
        if name == "embed.pos":
            arrays[name] = _transfer_pos(src.get(name), sc, tc)
        elif parts[0] == "blocks" and parts[2] == "time":
            if parts[3] in ("fc_w", "fc_b"):
                arrays[name] = np.zeros(t.shape)
            else:
                arrays[name] = src[".".join(parts[:2] + ["space"] + parts[3:])].copy()
        else:
            arrays[name] = src[name].copy()
    return params_from_arrays(tc, arrays)


def _transfer_pos(pos: np.ndarray | None, sc: ModelConfig, tc: ModelConfig) -> np.ndarray:
    if tc.pos_mode is sc.pos_mode and sc.grid == tc.grid:
        return pos.copy()
    if sc.pos_mode is PosMode.SPACE_ONLY and tc.pos_mode is PosMode.SPACE_TIME and sc.grid.n == tc.grid.n:
        return pos[position_rows(PosMode.SPACE_ONLY, tc.grid)].copy()
    raise ConfigurationError(f"cannot transfer positional table {sc.pos_mode.value} -> {tc.pos_mode.value}")


# ---------------------------------------------------------------- rollout

def stage_matrix(rec: dict, tokens: int, item: int = 0) -> np.ndarray:
    """Head-averaged (T, T) attention of one stage; identity rows for non-queries."""
    layout = rec["layout"]
    m = np.zeros((tokens, tokens))
    probs = rec["patch_probs"][item].mean(axis=0)  # (G, Sq, 1 + Sk)
    q = layout.queries
    m[q, 0] = probs[..., 0]
    m[q[:, :, None], layout.keys[:, None, :]] = probs[..., 1:]
    if "cls_probs" in rec:
        m[0] = rec["cls_probs"][item].mean(axis=0)[0]
    else:
        m[0, 0] = 1.0
    return m


def _residual_mix(mats: list[np.ndarray]) -> np.ndarray:
    eye = np.eye(mats[0].shape[0])
    m = (eye + sum(mats)) / (len(mats) + 1)
    return m / m.sum(axis=1, keepdims=True)


def rollout_matrices(clip, params: ModelParams, config: ModelConfig | None = None) -> list[np.ndarray]:
    """Per-block mixed attention matrices (row-stochastic), in depth order."""
    config = config or params.config
    record: list = []
    forward(clip, params.astype(np.float64), config, record=record)
    t = config.grid.tokens
    out = []
    for block_rec in record:
        mats = [stage_matrix(r, t) for r in block_rec]
        if is_parallel(config.scheme, config.stage_order):
            out.append(_residual_mix(mats))
        else:
            combined = np.eye(t)
            for m in mats:
                combined = _residual_mix([m]) @ combined
            out.append(combined)
    return out


def attention_rollout(clip, params: ModelParams, config: ModelConfig | None = None,
                      return_matrices: bool = False):
    """Class-token attribution to every patch, (F, N_h, N_w), min-max scaled to [0, 1].

    Each stage's head-averaged attention is mixed 0.5/0.5 with the identity
    and renormalised; stages compose in execution order within a block and
    blocks compose across depth.
    """
    config = config or params.config
    blocks = rollout_matrices(clip, params, config)
    joint = np.eye(config.grid.tokens)
    for b in blocks:
        joint = b @ joint
    g = config.grid
    heat = joint[0, 1:].reshape(g.frames, g.n_h, g.n_w)
    lo, hi = heat.min(), heat.max()
    heat = (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)
    if return_matrices:
        return heat, blocks, joint
    return heat


def write_heatmap_csv(path: str | Path, heat: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("frame,row,col,value\n")
        for (f, r, c), v in np.ndenumerate(heat):
            fh.write(f"{f},{r},{c},{v:.6g}\n")


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """8-bit binary PGM of a [0, 1] image."""
    pix = np.clip(np.rint(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())


# ---------------------------------------------------------------- inference

def crop_offsets(height: int, width: int, crop_h: int, crop_w: int) -> list[tuple[int, int]]:
    """Top-left, centre and bottom-right crop origins."""
    if height < crop_h or width < crop_w:
        raise ConfigurationError(f"video {height}x{width} is smaller than crop {crop_h}x{crop_w}")
    dy, dx = height - crop_h, width - crop_w
    return [(0, 0), (dy // 2, dx // 2), (dy, dx)]


def inference_3crop(video, params: ModelParams, config: ModelConfig | None = None) -> np.ndarray:
    """Class probabilities averaged over three spatial crops."""
    config = config or params.config
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[0] != config.F:
        raise ConfigurationError(f"video shape {video.shape} does not match F={config.F}")
    crops = np.stack([video[:, y:y + config.H, x:x + config.W]
                      for y, x in crop_offsets(video.shape[1], video.shape[2], config.H, config.W)])
    probs = softmax_np(forward(crops, params, config).data.astype(np.float64))
    return probs.mean(axis=0)


def predict(clips, params: ModelParams, batch_size: int = 64) -> np.ndarray:
    """Logits for a stack of clips, evaluated in batches."""
    clips = np.asarray(clips)
    out = [forward(clips[i:i + batch_size], params).data for i in range(0, len(clips), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.config.num_classes))


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"TSFW"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    """Write weights as float32 records behind a JSON config header."""
    named = params.named_tensors()
    blob = params.config.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(named)))
        for name, t in named.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not a TSFW checkpoint")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    config = ModelConfig.from_dict(json.loads(raw[pos:pos + n].decode("utf-8")))
    pos += n
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
    return params_from_arrays(config, arrays)


__all__ = [
    "ModelParams", "init_params", "params_from_arrays", "forward", "encode", "init_from_spatial",
    "attention_rollout", "rollout_matrices", "stage_matrix", "inference_3crop", "predict",
    "save_checkpoint", "load_checkpoint", "write_heatmap_csv", "write_pgm", "crop_offsets",
    "softmax_np",
]
