"""The full SR model: encoder + Fourier head + residual reconstruction.

Inference works on per-component contribution fields. The reconstruction
at T is the bilinear-upsampled input plus the first T fields, accumulated
left to right — so partial reconstructions are exact prefixes of fuller
ones, progressive emission is free, and the component list for a small T
is the prefix of the list for a larger T.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from . import tensor as T
from .coords import hr_pixel_centers, nearest_latent_grid
from .encoder import ConvEncoder, EncoderConfig, unfold9
from .heads import (
    FixedFourierHead,
    HeadConfig,
    RecurrentFourierHead,
    component_contribution,
    components_from_batch,
    synthesize,
)
from .imaging import ImageBuffer, bilinear_upsample


class ModelWarning(UserWarning):
    pass


class SRModel:
    def __init__(self, enc_cfg: EncoderConfig, head_cfg: HeadConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.enc_cfg = enc_cfg.validate()
        self.head_cfg = head_cfg.validate()
        self.seed = seed
        self.encoder = ConvEncoder(enc_cfg, rng)
        in_dim = self.encoder.out_channels
        if head_cfg.head_kind == "recurrent":
            self.head = RecurrentFourierHead(head_cfg, in_dim, rng)
        else:
            self.head = FixedFourierHead(head_cfg, in_dim, rng)
        self.last_chunk_steps: list[int] = []

    @property
    def is_recurrent(self) -> bool:
        return self.head_cfg.head_kind == "recurrent"

    def parameters(self):
        return self.encoder.parameters() + self.head.parameters()

    # -- latent extraction ----------------------------------------------------

    def encode_features(self, batch: T.Tensor) -> T.Tensor:
        """(B, C_in, H, W) image batch -> (B, H, W, C_latent) with unfolding."""
        feats = self.encoder.forward(batch)
        feats = T.permute(feats, (0, 2, 3, 1))
        if self.enc_cfg.unfold:
            feats = unfold9(feats)
        return feats

    def encode_lr(self, lr: ImageBuffer) -> T.Tensor:
        arr = np.ascontiguousarray(
            lr.data.transpose(2, 0, 1)[None], dtype=T.default_dtype()
        )
        return self.encode_features(T.Tensor(arr))

    # -- query geometry ---------------------------------------------------------

    @staticmethod
    def query_geometry(grid_h, grid_w, out_h, out_w):
        """All HR pixel centers resolved against the latent grid.

        Returns (flat latent row index, delta (N,2), both row-major over the
        output image).
        """
        centers = hr_pixel_centers(out_h, out_w)
        rows, cols, _, delta = nearest_latent_grid(centers, grid_h, grid_w)
        return rows * grid_w + cols, delta

    # -- component fields -------------------------------------------------------

    def component_fields(self, lr: ImageBuffer, s_x: float, s_y: float, t_count: int,
                         chunk: int = 4096, latents: T.Tensor = None):
        """Per-component residual fields and amplitude norms.

        Returns (fields, norms): fields (T', H_out, W_out, 3) float64 where
        T' = t_count for the recurrent head and K for the fixed head; norms
        (T', H_out, W_out) of flattened-amplitude Euclidean norms. Pass
        `latents` (from encode_lr) to reuse a cached encoding.
        """
        if s_x < 1 or s_y < 1:
            raise ValueError(f"scale factors must be >= 1, got ({s_x}, {s_y})")
        out_h = int(math.floor(lr.height * s_y))
        out_w = int(math.floor(lr.width * s_x))
        n_components = t_count if self.is_recurrent else self.head.K
        if self.is_recurrent and t_count > self.head_cfg.T_max:
            warnings.warn(
                f"T={t_count} exceeds trained T_max={self.head_cfg.T_max}; "
                "quality typically degrades past the training range",
                ModelWarning,
                stacklevel=2,
            )
        if not self.is_recurrent and t_count > self.head.K:
            raise ValueError(f"fixed head has K={self.head.K} components, requested {t_count}")

        if latents is None:
            latents = self.encode_lr(lr)
        flat = T.reshape(latents, (lr.height * lr.width, latents.shape[-1]))
        idx, delta = self.query_geometry(lr.height, lr.width, out_h, out_w)
        # effective per-axis scale: what the output grid actually realizes
        cell_vec = np.array([lr.width / out_w, lr.height / out_h], dtype=T.default_dtype())

        n = out_h * out_w
        fields = np.zeros((n_components, n, 3), dtype=np.float64)
        norms = np.zeros((n_components, n), dtype=np.float64)
        self.last_chunk_steps = []
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            z_hat = T.gather_rows(flat, idx[start:stop])
            d = T.Tensor(delta[start:stop].astype(T.default_dtype()))
            c = T.Tensor(np.broadcast_to(cell_vec, (stop - start, 2)).copy())
            if self.is_recurrent:
                before = self.head.steps_taken
                comps = self.head.run(z_hat, c, t_count)
                self.last_chunk_steps.append(self.head.steps_taken - before)
                for ti, (A, F, p, _) in enumerate(comps):
                    contrib = component_contribution(A, F, p, d)
                    fields[ti, start:stop] = contrib.numpy()
                    norms[ti, start:stop] = np.linalg.norm(A.numpy(), axis=1)
            else:
                A, F, p = self.head.components(z_hat, c)
                a, f, ph = A.numpy(), F.numpy(), p.numpy()
                theta = np.pi * (f * delta[start:stop, None, :]).sum(-1) + ph  # (n, K)
                contrib = (
                    a[:, :, :3] * np.cos(theta)[:, :, None]
                    + a[:, :, 3:] * np.sin(theta)[:, :, None]
                )
                fields[:, start:stop] = contrib.transpose(1, 0, 2)
                norms[:, start:stop] = np.linalg.norm(a, axis=2).T
        return fields.reshape(n_components, out_h, out_w, 3), norms.reshape(
            n_components, out_h, out_w
        )

    def iter_component_fields(self, lr: ImageBuffer, s_x: float, s_y: float,
                              t_count: int, chunk: int = 4096, latents: T.Tensor = None):
        """Yield (t, field (H,W,3), norms (H,W)) one component at a time.

        Unlike component_fields, work is incremental in t: stopping after
        component t has cost proportional to t. All pixel states are held
        live, so memory scales with output pixels; callers should cap the
        image size. Field values are bitwise identical to
        component_fields with the same chunk size.
        """
        if s_x < 1 or s_y < 1:
            raise ValueError(f"scale factors must be >= 1, got ({s_x}, {s_y})")
        out_h = int(math.floor(lr.height * s_y))
        out_w = int(math.floor(lr.width * s_x))
        if not self.is_recurrent:
            fields, norms = self.component_fields(lr, s_x, s_y, t_count, chunk=chunk,
                                                  latents=latents)
            for ti in range(t_count):
                yield ti + 1, fields[ti], norms[ti]
            return
        if t_count > self.head_cfg.T_max:
            warnings.warn(
                f"T={t_count} exceeds trained T_max={self.head_cfg.T_max}; "
                "quality typically degrades past the training range",
                ModelWarning,
                stacklevel=2,
            )
        if latents is None:
            latents = self.encode_lr(lr)
        flat = T.reshape(latents, (lr.height * lr.width, latents.shape[-1]))
        idx, delta = self.query_geometry(lr.height, lr.width, out_h, out_w)
        cell_vec = np.array([lr.width / out_w, lr.height / out_h], dtype=T.default_dtype())
        n = out_h * out_w
        slices = [slice(s, min(s + chunk, n)) for s in range(0, n, chunk)]
        states, prevs, cells, deltas = [], [], [], []
        for sl in slices:
            z_hat = T.gather_rows(flat, idx[sl])
            states.append(self.head.init_state(z_hat))
            prevs.append(None)
            cells.append(T.Tensor(np.broadcast_to(cell_vec, (sl.stop - sl.start, 2)).copy()))
            deltas.append(T.Tensor(delta[sl].astype(T.default_dtype())))
        for ti in range(1, t_count + 1):
            field = np.zeros((n, 3), dtype=np.float64)
            norm = np.zeros(n, dtype=np.float64)
            for i, sl in enumerate(slices):
                states[i], beta = self.head.step(states[i], prevs[i])
                A, F, p = self.head.emit(beta, cells[i])
                prevs[i] = (A, F)
                field[sl] = component_contribution(A, F, p, deltas[i]).numpy()
                norm[sl] = np.linalg.norm(A.numpy(), axis=1)
            yield ti, field.reshape(out_h, out_w, 3), norm.reshape(out_h, out_w)

    # -- reconstruction ---------------------------------------------------------

    def progressive_infer(self, lr: ImageBuffer, s_x: float, s_y: float, t_count: int,
                          chunk: int = 4096, latents: T.Tensor = None):
        """Yield (t, raw (H,W,3) float64) partial reconstructions for t=0..T.

        raw is unclamped; additivity is exact: raw_t = raw_{t-1} + field_t.
        """
        if s_x < 1 or s_y < 1:
            raise ValueError(f"scale factors must be >= 1, got ({s_x}, {s_y})")
        out_h = int(math.floor(lr.height * s_y))
        out_w = int(math.floor(lr.width * s_x))
        base = bilinear_upsample(lr, out_h, out_w).data
        partial = base.copy()
        yield 0, partial.copy()
        if t_count == 0:
            return
        fields, _ = self.component_fields(lr, s_x, s_y, t_count, chunk=chunk,
                                          latents=latents)
        for ti in range(t_count):
            partial = partial + fields[ti]
            yield ti + 1, partial.copy()

    def infer_image(self, lr: ImageBuffer, s_x: float, s_y: float, t_count: int,
                    chunk: int = 4096, clamp: bool = True,
                    latents: T.Tensor = None) -> ImageBuffer:
        """Reconstruct at the requested scale using t_count components."""
        raw = None
        for _, raw in self.progressive_infer(lr, s_x, s_y, t_count, chunk=chunk,
                                             latents=latents):
            pass
        img = ImageBuffer(raw, colorspace=lr.colorspace)
        return img.clamped() if clamp else img

    def infer_pixel(self, z_hat, delta, cell, t_count: int):
        """Single-query inference: returns (rgb residual (3,), component list)."""
        if t_count < 1:
            return np.zeros(3), []
        z = T.Tensor(np.asarray(z_hat, dtype=T.default_dtype()).reshape(1, -1))
        c = T.Tensor(np.asarray(cell, dtype=T.default_dtype()).reshape(1, 2))
        comps_raw = self.head.run(z, c, t_count)
        comps = [components_from_batch(A.numpy(), F.numpy(), p.numpy()) for A, F, p, _ in comps_raw]
        return synthesize(comps, np.asarray(delta, dtype=np.float64)), comps


def build_model(enc_cfg=None, head_cfg=None, seed: int = 0) -> SRModel:
    return SRModel(enc_cfg or EncoderConfig(), head_cfg or HeadConfig(), seed=seed)
