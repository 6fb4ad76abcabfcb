"""Synthetic clip classification tasks.

``spatial``: a bright square sits still in one of four quadrants; the label
is the quadrant, readable from any single frame.

``temporal``: a bright square drifts left, right, up or down by half its
width per frame, wrapping around the frame edges.  Start positions are
uniform over the whole frame, so every frame on its own is
position-uniform for every class and only the displacement between frames
carries the label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..numeric import new_rng

NOISE = 0.2
INTENSITY = 1.0

SPATIAL_CLASSES = ("top-left", "top-right", "bottom-left", "bottom-right")
TEMPORAL_CLASSES = ("left", "right", "up", "down")
# (dy, dx) per frame, in units of the step size
_DIRECTIONS = ((0, -1), (0, 1), (-1, 0), (1, 0))
REVERSED_CLASS = (1, 0, 3, 2)


@dataclass
class SyntheticDataset:
    kind: str
    seed: int
    clips: np.ndarray = field(repr=False)  # (n, F, H, W, 3) float32
    labels: np.ndarray = field(repr=False)
    noise: float = NOISE
    boxes: np.ndarray | None = field(default=None, repr=False)  # (n, F, 2) top-left (y, x)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.clips.shape[1:4])

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def square(self) -> int:
        return square_size(self.dims)

    def regenerate(self) -> "SyntheticDataset":
        return make_task(self.kind, self.seed, len(self), self.dims, self.noise)

    def object_mask(self, i: int) -> np.ndarray:
        """(F, H, W) boolean mask of the square's pixels in clip ``i``."""
        f, h, w = self.dims
        s = self.square
        mask = np.zeros((f, h, w), dtype=bool)
        for t, (y, x) in enumerate(self.boxes[i]):
            mask[t][np.ix_((y + np.arange(s)) % h, (x + np.arange(s)) % w)] = True
        return mask

    def subset(self, n: int) -> "SyntheticDataset":
        return SyntheticDataset(self.kind, self.seed, self.clips[:n], self.labels[:n], self.noise,
                                None if self.boxes is None else self.boxes[:n])


def square_size(dims) -> int:
    return max(1, dims[1] // 4)


def step_size(dims) -> int:
    return max(1, square_size(dims) // 2)


def _balanced_labels(rng: np.random.Generator, n: int, classes: int = 4) -> np.ndarray:
    return rng.permutation(np.arange(n) % classes)


def _render(rng, n, dims, boxes, noise) -> np.ndarray:
    f, h, w = dims
    s = square_size(dims)
    clips = (rng.random((n, f, h, w)) * noise).astype(np.float32)
    rows = np.arange(s)
    for i in range(n):
        for t in range(f):
            y, x = boxes[i, t]
            clips[i, t][np.ix_((y + rows) % h, (x + rows) % w)] = INTENSITY
    return np.repeat(clips[..., None], 3, axis=-1)


def gen_spatial_task(seed: int, n: int, dims=(4, 32, 32), noise: float = NOISE) -> SyntheticDataset:
    f, h, w = dims
    s = square_size(dims)
    if h < 2 * s or w < 2 * s:
        raise ConfigurationError(f"frame {h}x{w} too small for the spatial task")
    rng = new_rng(seed)
    labels = _balanced_labels(rng, n)
    qy, qx = labels // 2, labels % 2
    y = qy * (h // 2) + rng.integers(0, h // 2 - s + 1, n)
    x = qx * (w // 2) + rng.integers(0, w // 2 - s + 1, n)
    boxes = np.repeat(np.stack([y, x], axis=1)[:, None, :], f, axis=1)
    return SyntheticDataset("spatial", seed, _render(rng, n, dims, boxes, noise), labels, noise, boxes)


def gen_temporal_task(seed: int, n: int, dims=(4, 32, 32), noise: float = NOISE) -> SyntheticDataset:
    f, h, w = dims
    rng = new_rng(seed)
    labels = _balanced_labels(rng, n)
    start = np.stack([rng.integers(0, h, n), rng.integers(0, w, n)], axis=1)
    velocity = np.array(_DIRECTIONS)[labels] * step_size(dims)
    t = np.arange(f)[None, :, None]
    boxes = (start[:, None, :] + velocity[:, None, :] * t) % np.array([h, w])
    return SyntheticDataset("temporal", seed, _render(rng, n, dims, boxes, noise), labels, noise, boxes)


def make_task(kind: str, seed: int, n: int, dims=(4, 32, 32), noise: float = NOISE) -> SyntheticDataset:
    if kind == "spatial":
        return gen_spatial_task(seed, n, dims, noise)
    if kind == "temporal":
        return gen_temporal_task(seed, n, dims, noise)
    raise ConfigurationError(f"unknown task {kind!r}; expected 'spatial' or 'temporal'")


# ---------------------------------------------------------------- pixel oracles

def brightest_quadrant(clip: np.ndarray) -> int:
    """Quadrant holding the most intensity in frame 0."""
    frame = np.asarray(clip)[0].mean(axis=-1)
    h, w = frame.shape
    sums = [frame[:h // 2, :w // 2].sum(), frame[:h // 2, w // 2:].sum(),
            frame[h // 2:, :w // 2].sum(), frame[h // 2:, w // 2:].sum()]
    return int(np.argmax(sums))


def _circular_centroid(mask: np.ndarray) -> tuple[float, float]:
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    ang_y = np.angle(np.exp(2j * np.pi * ys / h).mean()) * h / (2 * np.pi)
    ang_x = np.angle(np.exp(2j * np.pi * xs / w).mean()) * w / (2 * np.pi)
    return ang_y, ang_x


def displacement_class(clip: np.ndarray, threshold: float = 0.5) -> int:
    """Direction of travel from the bright-pixel centroids of frames 0 and 1."""
    clip = np.asarray(clip).mean(axis=-1)
    h, w = clip.shape[1:]
    y0, x0 = _circular_centroid(clip[0] > threshold)
    y1, x1 = _circular_centroid(clip[1] > threshold)
    dy = (y1 - y0 + h / 2) % h - h / 2
    dx = (x1 - x0 + w / 2) % w - w / 2
    if abs(dx) >= abs(dy):
        return 1 if dx > 0 else 0
    return 3 if dy > 0 else 2
