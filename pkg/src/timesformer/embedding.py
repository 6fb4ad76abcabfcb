"""Clip → patch tokens: patch extraction, linear embedding, positions, class token.

Token layout is fixed: index 0 is the class token and patch ``p`` of frame
``t`` (both 0-based) sits at ``1 + t * N + p``.  Patches are numbered
row-major inside a frame, and each flattened patch is laid out
(row, col, channel) with channels last.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError
from .numeric import Tensor, concat, linear, take, truncated_normal


class PosMode(str, Enum):
    NONE = "none"
    SPACE_ONLY = "space-only"
    SPACE_TIME = "space-time"


@dataclass(frozen=True)
class PatchGrid:
    n_h: int
    n_w: int
    frames: int

    @classmethod
    def for_clip(cls, frames: int, height: int, width: int, patch: int) -> "PatchGrid":
        if height % patch or width % patch:
            raise ConfigurationError(
                f"frame size H={height}, W={width} is not divisible by patch size P={patch}")
        return cls(height // patch, width // patch, frames)

    @property
    def n(self) -> int:
        return self.n_h * self.n_w

    @property
    def tokens(self) -> int:
        return self.n * self.frames + 1

    def token_index(self, p: int, t: int) -> int:
        if not (0 <= p < self.n and 0 <= t < self.frames):
            raise IndexError(f"patch ({p}, {t}) outside grid N={self.n}, F={self.frames}")
        return 1 + t * self.n + p

    def coords(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`token_index`: token index → (p, t)."""
        if not 1 <= index < self.tokens:
            raise IndexError(f"token {index} is not a patch token (T={self.tokens})")
        t, p = divmod(index - 1, self.n)
        return p, t


@dataclass
class EmbeddingParams:
    proj_w: Tensor  # (D, 3P^2)
    proj_b: Tensor  # (D,)
    cls: Tensor  # (D,)
    pos: Tensor | None  # (N+1, D) space-only, (T, D) space-time


@dataclass
class TokenSequence:
    tokens: Tensor  # (B, T, D)
    grid: PatchGrid


# ---------------------------------------------------------------- patches

def patchify(clip: np.ndarray, patch: int) -> np.ndarray:
    """(..., F, H, W, C) → (..., N*F, P*P*C), frame-major then row-major."""
    clip = np.asarray(clip)
    *lead, f, h, w, c = clip.shape
    if h % patch or w % patch:
        raise ConfigurationError(f"frame size H={h}, W={w} is not divisible by patch size P={patch}")
    nh, nw = h // patch, w // patch
    x = clip.reshape(*lead, f, nh, patch, nw, patch, c)
    k = len(lead)
    x = np.moveaxis(x, k + 3, k + 2)  # (..., F, nh, nw, P, P, C)
    return x.reshape(*lead, f * nh * nw, patch * patch * c)


def unpatchify(patches: np.ndarray, grid: PatchGrid, patch: int, channels: int = 3) -> np.ndarray:
    *lead, _, _ = patches.shape
    k = len(lead)
    x = patches.reshape(*lead, grid.frames, grid.n_h, grid.n_w, patch, patch, channels)
    x = np.moveaxis(x, k + 2, k + 3)
    return x.reshape(*lead, grid.frames, grid.n_h * patch, grid.n_w * patch, channels)


# ---------------------------------------------------------------- embedding

def positional_table(mode: PosMode | str, grid: PatchGrid, dim: int,
                     rng: np.random.Generator) -> Tensor | None:
    mode = PosMode(mode)
    if mode is PosMode.NONE:
        return None
    rows = grid.n + 1 if mode is PosMode.SPACE_ONLY else grid.tokens
    return Tensor(truncated_normal(rng, (rows, dim)))


def position_rows(mode: PosMode | str, grid: PatchGrid) -> np.ndarray:
    """Row of the positional table used by each token (length T)."""
    mode = PosMode(mode)
    if mode is PosMode.SPACE_ONLY:
        return np.concatenate([[0], np.tile(np.arange(1, grid.n + 1), grid.frames)])
    return np.arange(grid.tokens)


def embed(patches, params: EmbeddingParams, mode: PosMode | str, grid: PatchGrid) -> TokenSequence:
    """Project patch rows, prepend the class token, add positions.

    ``patches`` is (N*F, 3P^2) or batched (B, N*F, 3P^2); the result is
    always batched.
    """
    mode = PosMode(mode)
    x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=params.proj_w.dtype))
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.shape[-1] != params.proj_w.shape[1]:
        raise DimensionError(f"patch width {x.shape[-1]} does not match projection {params.proj_w.shape}")
    if x.shape[1] != grid.tokens - 1:
        raise DimensionError(f"expected {grid.tokens - 1} patches, got {x.shape[1]}")
    d = params.proj_w.shape[0]
    if params.cls.shape != (d,):
        raise DimensionError(f"class token {params.cls.shape} does not match embedding dim {d}")
    b = x.shape[0]
    z = linear(x, params.proj_w, params.proj_b)
    cls = params.cls.reshape(1, 1, d) + Tensor(np.zeros((b, 1, d), dtype=z.dtype))
    tokens = concat([cls, z], axis=1)
    if mode is not PosMode.NONE:
        if params.pos is None:
            raise DimensionError(f"positional mode {mode.value} needs a positional table")
        tokens = tokens + take(params.pos, position_rows(mode, grid), axis=0)
    return TokenSequence(tokens, grid)


# ---------------------------------------------------------------- clip files

CLIP_MAGIC = b"TSFC"


def write_clip(path: str | Path, clip: np.ndarray) -> None:
    """Write an (F, H, W, C) clip as TSFC: magic, 4 x u32 dims, f32 pixels (little endian)."""
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise DimensionError(f"clip must be (F, H, W, C), got {clip.shape}")
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<4I", *clip.shape))
        fh.write(clip.astype("<f4").tobytes())


def read_clip(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CLIP_MAGIC:
        raise ConfigurationError(f"{path}: not a TSFC clip file")
    dims = struct.unpack_from("<4I", raw, 4)
    count = int(np.prod(dims))
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=20)
    return data.reshape(dims).astype(np.float64)
