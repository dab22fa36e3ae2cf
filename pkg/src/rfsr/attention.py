"""Causal linear attention with an O(1)-size recurrent state.

Each layer keeps, per query, a key-value summary S and a key-mass vector z;
one token costs one rank-1 update plus a readout, so stepping T times costs
exactly T units of work. The same stack can be evaluated in parallel over a
full token sequence (cumulative sums), which must agree with the recurrent
form to float precision — that equivalence is what makes the recurrence a
faithful attention.

Position encoding variants:
  none                 tokens carry no position information
  absolute_sinusoidal  fixed sin/cos table added to tokens
  absolute_learned     trained embedding table added to tokens
  relative             rotation of the (positive) attention features by a
                       per-index angle; attention weights then depend only on
                       index differences. The rotation is applied to the
                       numerator features only; the normalizing mass uses the
                       unrotated features, which stay positive.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

PE_VARIANTS = ("none", "absolute_sinusoidal", "absolute_learned", "relative")


def _phi(x: T.Tensor) -> T.Tensor:
    """elu(x) + 1: the strictly positive attention feature map."""
    return T.elu(x) + 1.0


def la_step(S, z, qn, kn, qd, kd, v):
    """One fused recurrent attention step.

    S: (N, dk, dv) summary, z: (N, dk) mass. qn/kn are the (possibly
    rotated) numerator features; qd/kd the positive denominator features;
    v: (N, dv). Returns (S', z', out) where the update is applied before
    the readout, so a token attends to itself and the mass is never zero.
    """
    Sd, zd = S.data, z.data
    S2d = Sd + kn.data[:, :, None] * v.data[:, None, :]
    z2d = zd + kd.data
    num = (qn.data[:, None, :] @ S2d)[:, 0]
    den = (qd.data * z2d).sum(axis=-1, keepdims=True)
    outd = num / den

    def backward(gs):
        gS2, gz2, gout = gs
        dtype = S2d.dtype
        accS = gS2
        accz = gz2
        dqn = dqd = None
        if gout is not None:
            dnum = gout / den
            dden = -(gout * num).sum(axis=-1, keepdims=True) / (den * den)
            dqn = (dnum[:, None, :] @ S2d.transpose(0, 2, 1))[:, 0]
            local_S = qn.data[:, :, None] * dnum[:, None, :]
            accS = local_S if accS is None else accS + local_S
            dqd = dden * z2d
            local_z = dden * qd.data
            accz = local_z if accz is None else accz + local_z
        if accS is None:
            accS = np.zeros_like(S2d)
        if accz is None:
            accz = np.zeros_like(z2d)
        dkn = (accS @ v.data[:, :, None])[:, :, 0]
        dv = (kn.data[:, None, :] @ accS)[:, 0]
        return (accS, accz, dqn, dkn, dqd, accz, dv)

    return T.make_outputs((S2d, z2d, outd), (S, z, qn, kn, qd, kd, v), backward)


def _rotation_tables(dk: int, index: int, dtype) -> tuple:
    half = dk // 2
    inv_freq = 10000.0 ** (-np.arange(half) / half)
    ang = index * inv_freq
    c = np.cos(ang).astype(dtype)
    s = np.sin(ang).astype(dtype)
    return np.concatenate([c, c]), np.concatenate([s, s])


def _rotate(u: T.Tensor, index: int) -> T.Tensor:
    """Rotate feature pairs (u_i, u_{i+half}) by the index-dependent angle."""
    dk = u.shape[-1]
    half = dk // 2
    c, s = _rotation_tables(dk, index, u.dtype)
    a = T.narrow(u, 1, 0, half)
    b = T.narrow(u, 1, half, dk)
    swapped = T.concat([-b, a], axis=1)
    return u * T.Tensor(c) + swapped * T.Tensor(s)


def sinusoidal_encoding(index: int, width: int, dtype) -> np.ndarray:
    half = width // 2
    inv_freq = 10000.0 ** (-np.arange(half) / half)
    ang = index * inv_freq
    enc = np.zeros(width, dtype=dtype)
    enc[:half] = np.sin(ang)
    enc[half : 2 * half] = np.cos(ang)
    return enc


class StackState:
    """Per-layer (S, z) pairs plus the number of tokens consumed."""

    __slots__ = ("layers", "length")

    def __init__(self, layers, length: int):
        self.layers = layers  # list of (S, z) Tensor pairs
        self.length = length

    def copy(self) -> "StackState":
        return StackState(list(self.layers), self.length)

    def narrow_queries(self, n: int) -> "StackState":
        """Keep the first n query rows of every state tensor."""
        return StackState(
            [(T.narrow(S, 0, 0, n), T.narrow(z, 0, 0, n)) for S, z in self.layers],
            self.length,
        )

    @property
    def num_queries(self) -> int:
        return self.layers[0][0].shape[0]


class LinearAttentionStack:
    def __init__(
        self,
        width: int,
        layers: int,
        key_dim: int,
        pe_variant: str,
        rng: np.random.Generator,
        max_positions: int = 130,
        name: str = "stack",
    ):
        if pe_variant not in PE_VARIANTS:
            raise ValueError(f"unknown pe_variant {pe_variant!r}; choose from {PE_VARIANTS}")
        if key_dim % 2:
            raise ValueError(f"key_dim must be even for rotations, got {key_dim}")
        self.width = width
        self.num_layers = layers
        self.key_dim = key_dim
        self.pe_variant = pe_variant
        self.max_positions = max_positions
        self.name = name

        def fc(n_in, n_out, scale=None):
            s = scale if scale is not None else 1.0 / np.sqrt(n_in)
            w = T.randn(rng, (n_in, n_out), scale=s, requires_grad=True)
            b = T.zeros((n_out,), requires_grad=True)
            return w, b

        self.layer_params = []
        for _ in range(layers):
            p = {
                "ln1_g": T.ones((width,), requires_grad=True),
                "ln1_b": T.zeros((width,), requires_grad=True),
                "ln2_g": T.ones((width,), requires_grad=True),
                "ln2_b": T.zeros((width,), requires_grad=True),
            }
            p["wq"], p["bq"] = fc(width, key_dim)
            p["wk"], p["bk"] = fc(width, key_dim)
            p["wv"], p["bv"] = fc(width, width)
            p["wo"], p["bo"] = fc(width, width, scale=0.5 / np.sqrt(width))
            p["w1"], p["b1"] = fc(width, 2 * width)
            p["w2"], p["b2"] = fc(2 * width, width, scale=0.5 / np.sqrt(2 * width))
            self.layer_params.append(p)
        self.pos_emb = None
        if pe_variant == "absolute_learned":
            self.pos_emb = T.randn(rng, (max_positions, width), scale=0.02, requires_grad=True)

    def parameters(self):
        out = []
        for i, p in enumerate(self.layer_params):
            for key in sorted(p):
                out.append((f"{self.name}.l{i}.{key}", p[key]))
        if self.pos_emb is not None:
            out.append((f"{self.name}.pos_emb", self.pos_emb))
        return out

    # -- recurrent form ------------------------------------------------------

    def empty_state(self, n: int, dtype=None) -> StackState:
        dtype = dtype or T.default_dtype()
        layers = [
            (
                T.Tensor(np.zeros((n, self.key_dim, self.width), dtype=dtype)),
                T.Tensor(np.zeros((n, self.key_dim), dtype=dtype)),
            )
            for _ in range(self.num_layers)
        ]
        return StackState(layers, 0)

    def _positional(self, token: T.Tensor, index: int) -> T.Tensor:
        if self.pe_variant == "absolute_sinusoidal":
            return token + T.Tensor(sinusoidal_encoding(index, self.width, token.dtype))
        if self.pe_variant == "absolute_learned":
            row = min(index, self.max_positions - 1)
            return token + T.narrow(self.pos_emb, 0, row, row + 1)
        return token

    def step(self, state: StackState, token: T.Tensor, index=None):
        """Consume one token; returns (new state, top-layer output)."""
        if index is None:
            index = state.length
        x = self._positional(token, index)
        new_layers = []
        for p, (S, z) in zip(self.layer_params, state.layers):
            h = T.layer_norm(x, p["ln1_g"], p["ln1_b"])
            q = _phi(T.matmul(h, p["wq"]) + p["bq"])
            k = _phi(T.matmul(h, p["wk"]) + p["bk"])
            v = T.matmul(h, p["wv"]) + p["bv"]
            if self.pe_variant == "relative":
                qn = _rotate(q, index)
                kn = _rotate(k, index)
            else:
                qn, kn = q, k
            S2, z2, att = la_step(S, z, qn, kn, q, k, v)
            x = x + (T.matmul(att, p["wo"]) + p["bo"])
            h2 = T.layer_norm(x, p["ln2_g"], p["ln2_b"])
            f = T.matmul(T.relu(T.matmul(h2, p["w1"]) + p["b1"]), p["w2"]) + p["b2"]
            x = x + f
            new_layers.append((S2, z2))
        return StackState(new_layers, state.length + 1), x

    def begin(self, memory_token: T.Tensor) -> StackState:
        """Seed the per-layer summaries with the memory token at index 0."""
        state, _ = self.step(self.empty_state(memory_token.shape[0], memory_token.dtype),
                             memory_token, index=0)
        return state

    # -- parallel form (forward-only oracle / batch evaluation) --------------

    def forward_parallel(self, tokens: np.ndarray, start_index: int = 0) -> np.ndarray:
        """Causal evaluation of a whole token sequence at once.

        tokens: (L, width) or (N, L, width). Position i gets index
        start_index + i. Returns outputs of the same shape.
        """
        x = np.asarray(tokens)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        n, L, _ = x.shape
        if self.pe_variant == "absolute_sinusoidal":
            pe = np.stack(
                [sinusoidal_encoding(start_index + i, self.width, x.dtype) for i in range(L)]
            )
            x = x + pe[None]
        elif self.pe_variant == "absolute_learned":
            rows = np.minimum(np.arange(start_index, start_index + L), self.max_positions - 1)
            x = x + self.pos_emb.data[rows][None]

        def phi_np(u):
            return np.where(u > 0, u + 1.0, np.exp(np.minimum(u, 0.0)))

        def ln(u, g, b, eps=1e-5):
            mu = u.mean(axis=-1, keepdims=True)
            var = ((u - mu) ** 2).mean(axis=-1, keepdims=True)
            return (u - mu) / np.sqrt(var + eps) * g + b

        for p in self.layer_params:
            h = ln(x, p["ln1_g"].data, p["ln1_b"].data)
            q = phi_np(h @ p["wq"].data + p["bq"].data)
            k = phi_np(h @ p["wk"].data + p["bk"].data)
            v = h @ p["wv"].data + p["bv"].data
            qn, kn = q, k
            if self.pe_variant == "relative":
                qn = np.empty_like(q)
                kn = np.empty_like(k)
                half = self.key_dim // 2
                for i in range(L):
                    c, s = _rotation_tables(self.key_dim, start_index + i, q.dtype)
                    for src, dst in ((q, qn), (k, kn)):
                        swapped = np.concatenate([-src[:, i, half:], src[:, i, :half]], axis=-1)
                        dst[:, i] = src[:, i] * c + swapped * s
            S_cum = np.cumsum(kn[:, :, :, None] * v[:, :, None, :], axis=1)
            z_cum = np.cumsum(k, axis=1)
            num = (qn[:, :, None, :] @ S_cum)[:, :, 0]
            den = (q * z_cum).sum(axis=-1, keepdims=True)
            x = x + ((num / den) @ p["wo"].data + p["bo"].data)
            h2 = ln(x, p["ln2_g"].data, p["ln2_b"].data)
            x = x + np.maximum(h2 @ p["w1"].data + p["b1"].data, 0) @ p["w2"].data + p["b2"].data
        return x[0] if squeeze else x
