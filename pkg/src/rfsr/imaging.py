"""Image buffers, file I/O, resampling, PSNR, and training-pair generation.

Buffers hold float64 values nominally in [0, 1]; clamping happens only at
I/O boundaries, so intermediates (e.g. unclamped reconstructions) may
exceed the range. Resampling is center-aligned: pixel i of N sits at
(i + 0.5) / N in unit coordinates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class ImagingWarning(UserWarning):
    pass


@dataclass
class ImageBuffer:
    """H x W x C image, C in {1, 3}, float64 values nominally in [0, 1]."""

    data: np.ndarray
    colorspace: str = "srgb"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, 1|3), got {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def clamped(self) -> "ImageBuffer":
        return ImageBuffer(np.clip(self.data, 0.0, 1.0), colorspace=self.colorspace)

    def to_uint8(self) -> np.ndarray:
        return np.rint(np.clip(self.data, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass
class TrainingPair:
    """One supervised crop: lr is the bicubic downsample of hr by `scale`."""

    lr: ImageBuffer
    hr: ImageBuffer
    scale: tuple  # (S_x, S_y), effective real-valued factors
    drawn_scale: tuple = field(default=None)  # pre-floor uniform draws, for diagnostics


# ---------------------------------------------------------------------------
# file I/O

def load_image(path) -> ImageBuffer:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return _load_ppm(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ValueError(f"unsupported format {im.format!r} for {path}")
            mode = "L" if im.mode in ("1", "L", "I", "I;16", "LA") else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return ImageBuffer(arr)


def save_image(img: ImageBuffer, path, ppm_ascii: bool = False) -> None:
    path = Path(path)
    u8 = img.to_uint8()
    if path.suffix.lower() == ".ppm":
        _save_ppm(u8, path, ascii_format=ppm_ascii)
        return
    if path.suffix.lower() != ".png":
        raise ValueError(f"unsupported output format for {path}; use .png or .ppm")
    mode = "L" if u8.shape[2] == 1 else "RGB"
    Image.fromarray(u8[:, :, 0] if mode == "L" else u8, mode=mode).save(path, format="PNG")


def encode_png(img: ImageBuffer) -> bytes:
    import io

    u8 = img.to_uint8()
    mode = "L" if u8.shape[2] == 1 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(u8[:, :, 0] if mode == "L" else u8, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> ImageBuffer:
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            mode = "L" if im.mode in ("1", "L", "I", "I;16", "LA") else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot decode PNG bytes: {exc}") from exc
    return ImageBuffer(arr)


def _load_ppm(path: Path) -> ImageBuffer:
    raw = path.read_bytes()
    if raw[:2] not in (b"P3", b"P6"):
        raise ValueError(f"unsupported PPM magic in {path}")
    binary = raw[:2] == b"P6"

    # header: magic, width, height, maxval, with comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PPM header in {path}")
        tokens.append(raw[start:pos])
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"only maxval 255 PPM supported, got {maxval}")
    if binary:
        pos += 1  # single whitespace after maxval
        if len(raw) - pos < width * height * 3:
            raise ValueError(f"truncated PPM payload in {path}")
        pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=pos)
    else:
        vals = raw[pos:].split()
        if len(vals) < width * height * 3:
            raise ValueError(f"truncated PPM payload in {path}")
        pixels = np.array([int(v) for v in vals[: width * height * 3]], dtype=np.uint8)
    arr = pixels.reshape(height, width, 3).astype(np.float64) / 255.0
    return ImageBuffer(arr)


def _save_ppm(u8: np.ndarray, path: Path, ascii_format: bool = False) -> None:
    if u8.shape[2] == 1:
        u8 = np.repeat(u8, 3, axis=2)
    if ascii_format:
        body = "\n".join(" ".join(str(v) for v in row.reshape(-1)) for row in u8)
        path.write_text(f"P3\n{u8.shape[1]} {u8.shape[0]}\n255\n{body}\n")
        return
    header = f"P6\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode()
    path.write_bytes(header + u8.tobytes())


# ---------------------------------------------------------------------------
# resampling

def _cubic_weight(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    w = np.where(
        ax <= 1.0,
        (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0,
        np.where(ax < 2.0, a * ax**3 - 5.0 * a * ax**2 + 8.0 * a * ax - 4.0 * a, 0.0),
    )
    return w


def _linear_weight(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(x))


def _resample_matrix(n_in: int, n_out: int, kernel, reach: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic interpolation matrix, edge-clamped taps."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(int)
    m = np.zeros((n_out, n_in))
    for t in range(1 - reach, reach + 1):
        idx = i0 + t
        w = kernel(src - idx)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    return m


def _apply_separable(img: ImageBuffer, out_h: int, out_w: int, kernel, reach: int) -> ImageBuffer:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    mh = _resample_matrix(img.height, out_h, kernel, reach)
    mw = _resample_matrix(img.width, out_w, kernel, reach)
    tmp = np.tensordot(mh, img.data, axes=(1, 0))  # (out_h, W, C)
    out = np.tensordot(mw, tmp, axes=(1, 1)).transpose(1, 0, 2)  # (out_h, out_w, C)
    return ImageBuffer(out, colorspace=img.colorspace)


def bicubic_resample(img: ImageBuffer, out_h: int, out_w: int) -> ImageBuffer:
    """Catmull-Rom bicubic (a = -0.5), center-aligned, edge-clamped."""
    return _apply_separable(img, out_h, out_w, _cubic_weight, 2)


def bilinear_upsample(img: ImageBuffer, out_h: int, out_w: int) -> ImageBuffer:
    """Center-aligned bilinear; target must not shrink either dimension."""
    if out_h < img.height or out_w < img.width:
        raise ValueError(
            f"bilinear_upsample cannot shrink: {img.height}x{img.width} -> {out_h}x{out_w}"
        )
    return _apply_separable(img, out_h, out_w, _linear_weight, 1)


# ---------------------------------------------------------------------------
# metrics

def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """10*log10(1/MSE) over all channels jointly; +inf when images match."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"psnr shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# training pairs

def make_training_pair(
    hr_source: ImageBuffer,
    rng: np.random.Generator,
    base: int = 48,
    scale_range: tuple = (1.0, 4.0),
) -> TrainingPair:
    """Random scale in `scale_range`, random crop, bicubic LR of size `base`.

    The crop is floor(base*S_y) x floor(base*S_x); the stored scale is the
    effective per-axis ratio crop/base, so the pair invariant holds exactly.
    """
    h, w = hr_source.height, hr_source.width
    if h < base or w < base:
        raise ValueError(f"source {h}x{w} smaller than minimal crop {base}x{base}")
    s_lo, s_hi = scale_range
    hi_x = min(s_hi, w / base)
    hi_y = min(s_hi, h / base)
    if hi_x < s_hi or hi_y < s_hi:
        warnings.warn(
            f"source {h}x{w} clips scale range to ({s_lo}, {min(hi_x, hi_y):.3f})",
            ImagingWarning,
            stacklevel=2,
        )
    s_x = float(rng.uniform(s_lo, hi_x))
    s_y = float(rng.uniform(s_lo, hi_y))
    ww = int(math.floor(base * s_x))
    hh = int(math.floor(base * s_y))
    top = int(rng.integers(0, h - hh + 1))
    left = int(rng.integers(0, w - ww + 1))
    hr = ImageBuffer(hr_source.data[top : top + hh, left : left + ww].copy(),
                     colorspace=hr_source.colorspace)
    lr = bicubic_resample(hr, base, base)
    return TrainingPair(lr=lr, hr=hr, scale=(ww / base, hh / base), drawn_scale=(s_x, s_y))
