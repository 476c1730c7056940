"""Sample sets, interpolation sequences, and image grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from . import nets
from .errors import ConfigurationError, InsufficientDataError, ShapeError
from .seeding import sample_latents

INTERPOLATION_MODE = "linear"


@dataclass
class InterpolationSpec:
    """Linear path between two endpoints with the counterpart input held fixed.

    kind="latent": endpoints are z vectors and ``fixed`` is the embedding c.
    kind="embedding": endpoints are embeddings and ``fixed`` is a latent
    vector [d_z] or a latent batch [n, d_z].
    """

    kind: str
    start: np.ndarray
    end: np.ndarray
    fixed: np.ndarray
    steps: int = 8

    def validate(self) -> "InterpolationSpec":
        if self.kind not in ("latent", "embedding"):
            raise ConfigurationError("kind must be 'latent' or 'embedding'", "kind")
        if self.steps < 2:
            raise ConfigurationError("steps must be >= 2", "steps")
        for name in ("start", "end", "fixed"):
            if not np.all(np.isfinite(np.asarray(getattr(self, name)))):
                raise ConfigurationError(f"{name} must be finite", name)
        if np.shape(self.start) != np.shape(self.end):
            raise ShapeError("interpolation endpoints differ in shape")
        return self


def interpolation_weights(steps: int) -> np.ndarray:
    return np.arange(steps) / (steps - 1)


@torch.no_grad()
def interpolate(g, spec: InterpolationSpec) -> list[np.ndarray]:
    """Frames along the path; each frame is an [n, H, W, C] image batch.

    Frame 0 and the last frame are generated from the endpoints themselves
    (not from a blended value), so they equal direct generation bit-for-bit.
    """
    spec.validate()
    start = torch.as_tensor(np.asarray(spec.start), dtype=g.dtype)
    end = torch.as_tensor(np.asarray(spec.end), dtype=g.dtype)
    fixed = torch.as_tensor(np.asarray(spec.fixed), dtype=g.dtype)
    frames = []
    for i, t in enumerate(interpolation_weights(spec.steps)):
        if i == 0:
            point = start
        elif i == spec.steps - 1:
            point = end
        else:
            point = start + (end - start) * float(t)
        if spec.kind == "latent":
            frames.append(nets.generate(g, fixed, point.reshape(1, -1)).numpy())
        else:
            Z = fixed.reshape(1, -1) if fixed.ndim == 1 else fixed
            frames.append(nets.generate(g, point, Z).numpy())
    return frames


@torch.no_grad()
def sample_class_set(g, c, n: int, rng: np.random.Generator, batch_size: int = 500) -> np.ndarray:
    """``n`` images G(c, z) with fresh z ~ N(0, I) drawn from ``rng``."""
    Z = sample_latents(rng, n, g.latent_dim, g.dtype)
    c = torch.as_tensor(np.asarray(c), dtype=g.dtype)
    out = [nets.generate(g, c, Z[i : i + batch_size]) for i in range(0, n, batch_size)]
    if not out:
        return nets.generate(g, c, Z).numpy()
    return torch.cat(out).numpy()


@torch.no_grad()
def sample_with_latents(g, c, Z) -> np.ndarray:
    return nets.generate(g, torch.as_tensor(np.asarray(c), dtype=g.dtype), Z).numpy()


def render_grid(images, rows: int, cols: int, pad: int = 2, pad_value: float = 1.0) -> np.ndarray:
    """Tile the first rows*cols images row-major with constant padding.

    Output shape: (rows*H + (rows+1)*pad, cols*W + (cols+1)*pad, C).
    """
    images = np.asarray(images)
    if rows < 1 or cols < 1 or pad < 0:
        raise ConfigurationError("rows, cols must be >= 1 and pad >= 0", "rows")
    if len(images) < rows * cols:
        raise InsufficientDataError(f"grid {rows}x{cols} needs {rows * cols} images, got {len(images)}")
    _, H, W, C = images.shape
    grid = np.full((rows * H + (rows + 1) * pad, cols * W + (cols + 1) * pad, C), pad_value, dtype=images.dtype)
    for k in range(rows * cols):
        r, c = divmod(k, cols)
        top, left = pad + r * (H + pad), pad + c * (W + pad)
        grid[top : top + H, left : left + W] = images[k]
    return grid


def side_by_side(left, right, pad: int = 2, gap: int = 6, pad_value: float = 1.0) -> np.ndarray:
    """Two grids next to each other (e.g. baseline | AM sharing the same z)."""
    left, right = np.asarray(left), np.asarray(right)
    h = max(left.shape[0], right.shape[0])
    out = np.full((h, left.shape[1] + gap + right.shape[1], left.shape[2]), pad_value, dtype=left.dtype)
    out[: left.shape[0], : left.shape[1]] = left
    out[: right.shape[0], left.shape[1] + gap :] = right
    return out


def to_uint8(image) -> np.ndarray:
    """Map [-1, 1] to 8-bit: round(255 * (x + 1) / 2), clamped to [0, 255]."""
    x = np.asarray(image, dtype=np.float64)
    return np.clip(np.round(255.0 * (x + 1.0) / 2.0), 0, 255).astype(np.uint8)


def save_png(image, path) -> None:
    arr = to_uint8(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")
