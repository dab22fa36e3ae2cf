"""Bundled synthetic evaluation corpus and dataset manifests.

Ten deterministic 128x128 RGB images (gradients, periodic textures, edges,
disks, glyph-like strokes, smoothed noise) so every experiment runs out of
the box; real datasets plug in through the same manifest format.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import ImageBuffer, load_image, save_image

CORPUS_SIZE = 128


def _grid(n):
    y, x = np.mgrid[0:n, 0:n] / (n - 1)
    return x, y


def _gradient(n, rng):
    x, y = _grid(n)
    a = rng.uniform(0.5, 1.5)
    img = np.stack([x, y, 0.5 * (x + (1 - y))], axis=2)
    # fine texture keeps the bilinear baseline in a realistic range
    fx, fy = rng.uniform(14, 26, size=2)
    ripple = 0.08 * np.sin(2 * np.pi * (fx * x + fy * y))
    return np.clip(img**a + ripple[:, :, None], 0, 1)


def _checker(n, rng):
    period = int(rng.integers(6, 14))
    y, x = np.mgrid[0:n, 0:n]
    mask = ((x // period) + (y // period)) % 2
    c0 = rng.uniform(0.05, 0.35, size=3)
    c1 = rng.uniform(0.65, 0.95, size=3)
    return np.where(mask[:, :, None] == 0, c0, c1)


def _sinusoid(n, rng):
    x, y = _grid(n)
    img = np.zeros((n, n, 3))
    for c in range(3):
        fx, fy = rng.uniform(2, 9, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img[:, :, c] = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * x + fy * y) + phase)
    return img


def _bars(n, rng):
    img = np.full((n, n, 3), rng.uniform(0.1, 0.3, size=3))
    for _ in range(12):
        w = int(rng.integers(2, max(3, min(9, n // 4))))
        pos = int(rng.integers(0, n - w))
        color = rng.uniform(0.4, 1.0, size=3)
        if rng.random() < 0.5:
            img[:, pos : pos + w] = color
        else:
            img[pos : pos + w, :] = color
    return img


def _rings(n, rng):
    x, y = _grid(n)
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    r = np.hypot(x - cx, y - cy)
    freq = rng.uniform(10, 24)
    v = 0.5 + 0.5 * np.cos(2 * np.pi * freq * r)
    tint = rng.uniform(0.6, 1.0, size=3)
    return v[:, :, None] * tint


def _blobs(n, rng):
    coarse = gaussian_filter(rng.random((n, n, 3)), sigma=(4, 4, 0))
    fine = gaussian_filter(rng.random((n, n, 3)), sigma=(1.2, 1.2, 0))
    img = 0.7 * coarse + 0.3 * fine
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


def _glyphs(n, rng):
    img = np.full((n, n, 3), 0.92)
    margin = max(1, min(4, n // 8))
    stroke = max(6, n // 6)
    for _ in range(26):
        h = int(rng.integers(2, 5))
        w = int(rng.integers(stroke // 2, stroke + 1))
        top = int(rng.integers(margin, max(margin + 1, n - stroke - margin)))
        left = int(rng.integers(margin, max(margin + 1, n - stroke - margin)))
        ink = rng.uniform(0.0, 0.25)
        if rng.random() < 0.5:
            img[top : top + h, left : left + w] = ink
        else:
            img[top : top + w, left : left + h] = ink
    return np.clip(img, 0, 1)


def _diag_stripes(n, rng):
    y, x = np.mgrid[0:n, 0:n]
    period = int(rng.integers(4, 10))
    mask = ((x + y) // period) % 2
    c0 = rng.uniform(0.1, 0.4, size=3)
    c1 = rng.uniform(0.6, 0.9, size=3)
    return np.where(mask[:, :, None] == 0, c0, c1)


def _disks(n, rng):
    x, y = _grid(n)
    img = np.full((n, n, 3), rng.uniform(0.75, 0.95, size=3))
    for _ in range(9):
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        radius = rng.uniform(0.04, 0.16)
        color = rng.uniform(0.0, 0.7, size=3)
        mask = np.hypot(x - cx, y - cy) <= radius
        img[mask] = color
    return img


def _mixture(n, rng):
    img = 0.4 * _gradient(n, rng) + 0.35 * _rings(n, rng) + 0.25 * _blobs(n, rng)
    return np.clip(img, 0, 1)


_GENERATORS = [
    ("gradient", _gradient),
    ("checker", _checker),
    ("sinusoid", _sinusoid),
    ("bars", _bars),
    ("rings", _rings),
    ("blobs", _blobs),
    ("glyphs", _glyphs),
    ("diag_stripes", _diag_stripes),
    ("disks", _disks),
    ("mixture", _mixture),
]


def synthetic_corpus(size: int = CORPUS_SIZE, seed: int = 20240501):
    """-> list of (image id, ImageBuffer), deterministic given (size, seed)."""
    out = []
    for i, (name, gen) in enumerate(_GENERATORS):
        rng = np.random.default_rng(seed + i)
        out.append((name, ImageBuffer(np.clip(gen(size, rng), 0.0, 1.0))))
    return out


def materialize_corpus(directory, size: int = CORPUS_SIZE, seed: int = 20240501) -> Path:
    """Write the corpus PNGs plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, img in synthetic_corpus(size=size, seed=seed):
        fname = f"{name}.png"
        save_image(img, directory / fname)
        entries.append({"id": name, "path": fname})
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"images": entries}, indent=2) + "\n")
    return manifest


def load_dataset(source):
    """Load (id, ImageBuffer) pairs from a manifest file or an image directory."""
    source = Path(source)
    if source.is_file():
        spec = json.loads(source.read_text())
        root = source.parent
        return [(e["id"], load_image(root / e["path"])) for e in spec["images"]]
    if source.is_dir():
        manifest = source / "manifest.json"
        if manifest.exists():
            return load_dataset(manifest)
        paths = sorted(source.glob("*.png")) + sorted(source.glob("*.ppm"))
        if not paths:
            raise FileNotFoundError(f"no images found in {source}")
        return [(p.stem, load_image(p)) for p in paths]
    raise FileNotFoundError(f"dataset source {source} does not exist")
