"""Grayscale PGM rendering of heatmaps, flows, masks, attention maps, and
decoded skeletons.  PGM (binary P5) keeps golden-file tests bit-exact with
no image dependency."""

from __future__ import annotations

import numpy as np

from ..synthvideo import SKELETON_EDGES


def to_gray(arr: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    a = np.clip((np.asarray(arr, dtype=np.float64) - lo) / max(hi - lo, 1e-12),
                0.0, 1.0)
    return np.round(a * 255.0).astype(np.uint8)


def save_pgm(path, gray: np.ndarray) -> None:
    if gray.ndim != 2:
        raise ValueError(f"PGM wants a 2-D image, got {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def tile_channels(maps: np.ndarray, cols: int = 5) -> np.ndarray:
    """Lay out (C, H, W) channels on a padded grid, one gray tile each."""
    c, h, w = maps.shape
    rows = (c + cols - 1) // cols
    canvas = np.zeros((rows * (h + 1) - 1, cols * (w + 1) - 1))
    for i in range(c):
        r, col = divmod(i, cols)
        canvas[r * (h + 1):r * (h + 1) + h,
               col * (w + 1):col * (w + 1) + w] = maps[i]
    return canvas


def attention_grid(attn: np.ndarray) -> np.ndarray:
    """Concatenate per-head (D_h, D_h) attention maps horizontally."""
    a = np.asarray(attn)
    if a.ndim == 4:  # batched: take the first sample
        a = a[0]
    if a.ndim == 2:
        a = a[None]
    heads, dh, _ = a.shape
    canvas = np.zeros((dh, heads * (dh + 1) - 1))
    for i in range(heads):
        canvas[:, i * (dh + 1):i * (dh + 1) + dh] = a[i]
    return canvas


def draw_line(canvas: np.ndarray, p0, p1, value: float) -> None:
    """Bresenham segment between two (x, y) points."""
    x0, y0 = (int(round(v)) for v in p0)
    x1, y1 = (int(round(v)) for v in p1)
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    h, w = canvas.shape
    while True:
        if 0 <= y0 < h and 0 <= x0 < w:
            canvas[y0, x0] = value
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def skeleton_overlay(positions: np.ndarray, h: int, w: int,
                     visibility=None) -> np.ndarray:
    """Decoded pose on a blank canvas: limbs at 0.7, joints at 1.0."""
    canvas = np.zeros((h, w))
    n = len(positions)
    vis = np.ones(n, dtype=bool) if visibility is None else \
        np.asarray(visibility, dtype=bool)
    for a, b in SKELETON_EDGES:
        if a < n and b < n and vis[a] and vis[b]:
            draw_line(canvas, positions[a], positions[b], 0.7)
    for j in range(n):
        if vis[j]:
            x, y = (int(round(v)) for v in positions[j])
            if 0 <= y < h and 0 <= x < w:
                canvas[y, x] = 1.0
    return canvas
