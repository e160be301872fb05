"""Procedural landscape pictures for the bundled smoke corpus.

Each picture is sky gradient, optional sun, two or three ridge lines and a
textured foreground. Ridges are sums of low-frequency sinusoids so the right
quarter is predictable from the left three quarters.
"""

from pathlib import Path

import numpy as np
from PIL import Image


def _ridge(rng, width, base, amplitude):
    x = np.linspace(0, 1, width)
    y = np.full(width, base, dtype=np.float64)
    for k in range(1, 4):
        y += amplitude / k * np.sin(2 * np.pi * (rng.uniform(0.3, 1.5) * k * x + rng.uniform(0, 1)))
    return y


def landscape(seed, side=128):
    rng = np.random.default_rng(seed)
    h = w = side
    rows = np.linspace(0, 1, h)[:, None, None]
    top = rng.uniform([0.15, 0.3, 0.6], [0.35, 0.5, 0.9])
    horizon = rng.uniform([0.6, 0.7, 0.8], [0.9, 0.85, 0.95])
    img = top + (horizon - top) * rows
    img = np.broadcast_to(img, (h, w, 3)).copy()

    yy, xx = np.mgrid[0:h, 0:w] / side
    if rng.random() < 0.6:
        cx, cy, r = rng.uniform(0.1, 0.9), rng.uniform(0.08, 0.3), rng.uniform(0.04, 0.08)
        sun = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        img[sun] = rng.uniform([0.95, 0.85, 0.5], [1.0, 0.95, 0.7])

    n_layers = rng.integers(2, 4)
    bases = np.sort(rng.uniform(0.35, 0.7, n_layers))
    for i, base in enumerate(bases):
        ridge = _ridge(rng, w, base, rng.uniform(0.04, 0.12))
        shade = 0.8 - 0.2 * i
        color = rng.uniform([0.2, 0.25, 0.3], [0.45, 0.5, 0.55]) * shade
        if rng.random() < 0.3 and i == 0:
            color = np.array([0.9, 0.92, 0.95])
        below = yy > ridge[None, :]
        img[below] = color + 0.03 * (yy[below] - base)[:, None]

    ground = rng.uniform(0.72, 0.85)
    gcol = rng.uniform([0.15, 0.35, 0.1], [0.4, 0.55, 0.25])
    gmask = yy > ground
    noise = rng.normal(0, 0.03, (h, w))
    img[gmask] = gcol + noise[gmask][:, None]
    return np.clip(img, 0, 1).astype(np.float32)


def write_corpus(out_dir, count=40, side=128, seed=0):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        arr = np.round(landscape(seed * 100_003 + i, side) * 255).astype(np.uint8)
        p = out_dir / f"landscape_{i:03d}.png"
        Image.fromarray(arr).save(p, format="PNG")
        paths.append(p)
    return paths
