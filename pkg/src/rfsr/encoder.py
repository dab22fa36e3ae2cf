"""Latent feature extraction: a small residual conv encoder plus unfolding.

The encoder is a trainable stand-in for a large SR backbone: a head conv,
`residual_blocks` two-conv residual blocks, a tail conv, and a global skip,
all 3x3 / stride 1 / zero-pad 1, so latent spatial extents equal the input.
Unfolding concatenates each latent with its 8 neighbors (zeros outside the
grid), growing channels 9x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class EncoderConfig:
    channels: int = 32
    residual_blocks: int = 8
    unfold: bool = True
    in_channels: int = 3

    def validate(self):
        if self.channels < 1 or self.residual_blocks < 0:
            raise ValueError(f"bad encoder config: {self}")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        return self


@dataclass
class LatentGrid:
    """h x w feature map; channels is C, or 9C once unfolded."""

    data: T.Tensor  # (h, w, channels)
    unfolded: bool = False

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _conv_init(rng, c_out, c_in, gain=1.0):
    std = gain * np.sqrt(2.0 / (c_in * 9))
    return T.randn(rng, (c_out, c_in, 3, 3), scale=std, requires_grad=True)


class ConvEncoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        c = cfg.channels
        self.head_w = _conv_init(rng, c, cfg.in_channels)
        self.head_b = T.zeros((c,), requires_grad=True)
        self.blocks = []
        for _ in range(cfg.residual_blocks):
            self.blocks.append(
                (
                    _conv_init(rng, c, c),
                    T.zeros((c,), requires_grad=True),
                    _conv_init(rng, c, c, gain=0.5),
                    T.zeros((c,), requires_grad=True),
                )
            )
        self.tail_w = _conv_init(rng, c, c, gain=0.5)
        self.tail_b = T.zeros((c,), requires_grad=True)

    @property
    def out_channels(self) -> int:
        c = self.cfg.channels
        return 9 * c if self.cfg.unfold else c

    def receptive_border(self) -> int:
        """Pixels near the border influenced by zero padding."""
        return 2 * self.cfg.residual_blocks + 2

    def parameters(self):
        params = [("encoder.head.w", self.head_w), ("encoder.head.b", self.head_b)]
        for i, (w1, b1, w2, b2) in enumerate(self.blocks):
            params += [
                (f"encoder.block{i}.conv1.w", w1),
                (f"encoder.block{i}.conv1.b", b1),
                (f"encoder.block{i}.conv2.w", w2),
                (f"encoder.block{i}.conv2.b", b2),
            ]
        params += [("encoder.tail.w", self.tail_w), ("encoder.tail.b", self.tail_b)]
        return params

    def forward(self, x: T.Tensor) -> T.Tensor:
        """(B, C_in, H, W) -> (B, C, H, W), differentiable end to end."""
        def bias(t, b):
            return t + b.reshape((1, b.shape[0], 1, 1))

        h = bias(T.conv2d(x, self.head_w), self.head_b)
        body = h
        for w1, b1, w2, b2 in self.blocks:
            y = T.relu(bias(T.conv2d(body, w1), b1))
            y = bias(T.conv2d(y, w2), b2)
            body = body + y
        body = bias(T.conv2d(body, self.tail_w), self.tail_b)
        return h + body

    def encode(self, img) -> LatentGrid:
        """ImageBuffer -> LatentGrid, applying unfolding if configured."""
        arr = img.data if hasattr(img, "data") and not isinstance(img, T.Tensor) else img
        arr = np.asarray(arr, dtype=T.default_dtype())
        if arr.ndim != 3 or arr.shape[2] != self.cfg.in_channels:
            raise ValueError(
                f"encoder expects (H, W, {self.cfg.in_channels}), got {arr.shape}"
            )
        x = T.Tensor(arr.transpose(2, 0, 1)[None])  # (1, C_in, H, W)
        feat = self.forward(x)
        grid = LatentGrid(T.permute(T.reshape(feat, feat.shape[1:]), (1, 2, 0)))
        if self.cfg.unfold:
            grid = unfold(grid)
        return grid


def unfold9(x: T.Tensor) -> T.Tensor:
    """(..., H, W, C) -> (..., H, W, 9C); neighbor order is (l, m) raster.

    Out-of-bounds neighbors contribute zero vectors. Linear, so gradients
    scatter-add straight back.
    """
    nd = x.ndim
    if nd not in (3, 4):
        raise T.ShapeError(f"unfold9 expects (H, W, C) or (B, H, W, C), got {x.shape}")
    h_ax, w_ax = nd - 3, nd - 2
    H, W = x.shape[h_ax], x.shape[w_ax]
    pad = [(0, 0)] * nd
    pad[h_ax] = pad[w_ax] = (1, 1)
    xp = np.pad(x.data, pad)

    def window(k):
        l, m = divmod(k, 3)
        idx = [slice(None)] * nd
        idx[h_ax] = slice(l, l + H)
        idx[w_ax] = slice(m, m + W)
        return tuple(idx)

    out_data = np.concatenate([xp[window(k)] for k in range(9)], axis=-1)

    def backward(g):
        parts = np.split(g, 9, axis=-1)
        gp = np.zeros_like(xp)
        for k in range(9):
            gp[window(k)] += parts[k]
        crop = [slice(None)] * nd
        crop[h_ax] = crop[w_ax] = slice(1, 1 + H)
        return (gp[tuple(crop)],)

    return T._make_out(out_data, (x,), backward)


def unfold(grid: LatentGrid) -> LatentGrid:
    if grid.unfolded:
        raise ValueError("latent grid is already unfolded")
    return LatentGrid(unfold9(grid.data), unfolded=True)
