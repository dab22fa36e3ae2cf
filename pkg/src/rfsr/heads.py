"""Fourier component estimators and the summation decoder.

The recurrent head turns one latent vector into a stream of components
(per-channel cos/sin amplitudes, a 2-D frequency, a phase): the latent
seeds the attention state, then each step feeds the previous component
back in and emits the next. Because the decoder is a plain sum of
component contributions, any prefix of the stream is a valid (coarser)
reconstruction — that is the whole cost/quality mechanism.

A fixed-width head (all K components from one FC pass, as in fixed-length
Fourier SR decoders) is included as the comparison baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import PE_VARIANTS, LinearAttentionStack, StackState

HEAD_KINDS = ("recurrent", "fixed_fc")

_AMP_COLS = 6  # cos RGB then sin RGB
_TOKEN_IN = _AMP_COLS + 2  # flattened (A, F) fed back through gamma


@dataclass
class HeadConfig:
    T_max: int = 64
    layers: int = 4
    model_width: int = 64
    key_dim: int = 16
    pe_variant: str = "relative"
    head_kind: str = "recurrent"

    def validate(self):
        if self.T_max < 1 or self.layers < 1:
            raise ValueError(f"T_max and layers must be >= 1: {self}")
        if self.pe_variant not in PE_VARIANTS:
            raise ValueError(f"unknown pe_variant {self.pe_variant!r}")
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"unknown head_kind {self.head_kind!r}")
        return self

    @property
    def max_positions(self) -> int:
        # room for the memory token plus inference past T_max (2x, as the
        # degradation-beyond-training sweeps need)
        return 2 * self.T_max + 2


@dataclass
class FourierComponent:
    """One (amplitude, frequency, phase) triple for a single query."""

    A: np.ndarray  # (3, 2): column 0 cos amplitudes, column 1 sin amplitudes
    F: np.ndarray  # (2,): (f_x, f_y)
    p: float

    def contribution(self, delta) -> np.ndarray:
        theta = math.pi * float(np.dot(self.F, np.asarray(delta, dtype=np.float64))) + self.p
        return self.A[:, 0] * math.cos(theta) + self.A[:, 1] * math.sin(theta)

    def amplitude_norm(self) -> float:
        return float(np.linalg.norm(self.A.reshape(-1)))

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.F)) and math.isfinite(self.p)
        )


@dataclass
class HeadState:
    """Recurrent-head state: the attention state plus the step counter."""

    stack: StackState
    t: int = 0

    def copy(self) -> "HeadState":
        return HeadState(self.stack.copy(), self.t)

    def narrow_queries(self, n: int) -> "HeadState":
        return HeadState(self.stack.narrow_queries(n), self.t)


def _fc_init(rng, n_in, n_out, scale=None):
    s = scale if scale is not None else 1.0 / np.sqrt(n_in)
    return (
        T.randn(rng, (n_in, n_out), scale=s, requires_grad=True),
        T.zeros((n_out,), requires_grad=True),
    )


class RecurrentFourierHead:
    def __init__(self, cfg: HeadConfig, in_dim: int, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.in_dim = in_dim
        w = cfg.model_width
        self.phi_w, self.phi_b = _fc_init(rng, in_dim, w)
        self.start = T.randn(rng, (1, w), scale=0.5, requires_grad=True)
        self.gamma_w, self.gamma_b = _fc_init(rng, _TOKEN_IN, w)
        self.stack = LinearAttentionStack(
            width=w,
            layers=cfg.layers,
            key_dim=cfg.key_dim,
            pe_variant=cfg.pe_variant,
            rng=rng,
            max_positions=cfg.max_positions,
        )
        # small output scales: synthesis starts near zero residual
        self.ha_w, self.ha_b = _fc_init(rng, w, _AMP_COLS, scale=0.01 / np.sqrt(w))
        self.hf_w, self.hf_b = _fc_init(rng, w, 2, scale=1.0 / np.sqrt(w))
        self.hp_w, self.hp_b = _fc_init(rng, 2 + _TOKEN_IN, 1)
        self.steps_taken = 0  # diagnostic: RNN applications since construction

    def parameters(self):
        return [
            ("head.phi.w", self.phi_w),
            ("head.phi.b", self.phi_b),
            ("head.start", self.start),
            ("head.gamma.w", self.gamma_w),
            ("head.gamma.b", self.gamma_b),
            ("head.ha.w", self.ha_w),
            ("head.ha.b", self.ha_b),
            ("head.hf.w", self.hf_w),
            ("head.hf.b", self.hf_b),
            ("head.hp.w", self.hp_w),
            ("head.hp.b", self.hp_b),
        ] + self.stack.parameters()

    # -- spec surface ---------------------------------------------------------

    def init_state(self, z_hat: T.Tensor) -> HeadState:
        """Map latents (N, in_dim) to the initial recurrent state."""
        if z_hat.ndim != 2 or z_hat.shape[1] != self.in_dim:
            raise T.ShapeError(
                f"latent width {z_hat.shape} does not match head input {self.in_dim}"
            )
        alpha0 = T.matmul(z_hat, self.phi_w) + self.phi_b
        return HeadState(self.stack.begin(alpha0), t=0)

    def step(self, state: HeadState, prev=None):
        """Advance one recurrence; returns (state', beta_t).

        prev is the previous (A, F) pair; it must be None exactly at the
        first step, where a learned start token stands in.
        """
        if state.t == 0:
            if prev is not None:
                raise ValueError("first step takes no previous component")
            n = state.stack.num_queries
            token = T.zeros((n, 1)) + self.start
        else:
            if prev is None:
                raise ValueError("steps after the first need the previous component")
            token = T.matmul(T.concat([prev[0], prev[1]], axis=1), self.gamma_w) + self.gamma_b
        stack2, beta = self.stack.step(state.stack, token, index=state.t + 1)
        self.steps_taken += 1
        return HeadState(stack2, state.t + 1), beta

    def emit(self, beta: T.Tensor, cell: T.Tensor):
        """beta (N, width), cell (N, 2) -> A (N, 6), F (N, 2), p (N, 1)."""
        A = T.matmul(beta, self.ha_w) + self.ha_b
        F = T.matmul(beta, self.hf_w) + self.hf_b
        p = T.matmul(T.concat([cell, A, F], axis=1), self.hp_w) + self.hp_b
        return A, F, p

    def run(self, z_hat: T.Tensor, cell: T.Tensor, counts) -> list:
        """Emit components for every query at once.

        counts: an int, or a per-query array of recurrence counts sorted in
        descending order (queries needing more steps must come first).
        Returns a list of (A, F, p, n_active) — entry t covers the first
        n_active queries, which are exactly those with counts > t.
        """
        n = z_hat.shape[0]
        if np.isscalar(counts):
            counts = np.full(n, int(counts), dtype=int)
        counts = np.asarray(counts, dtype=int)
        if np.any(np.diff(counts) > 0):
            raise ValueError("per-query counts must be sorted descending")
        t_total = int(counts[0]) if n else 0
        state = self.init_state(z_hat)
        out = []
        prev = None
        cell_t = cell
        for t in range(1, t_total + 1):
            n_t = int(np.searchsorted(-counts, -t, side="right"))
            if n_t < state.stack.num_queries:
                state = state.narrow_queries(n_t)
                cell_t = T.narrow(cell_t, 0, 0, n_t)
                if prev is not None:
                    prev = (T.narrow(prev[0], 0, 0, n_t), T.narrow(prev[1], 0, 0, n_t))
            state, beta = self.step(state, prev)
            A, F, p = self.emit(beta, cell_t)
            out.append((A, F, p, n_t))
            prev = (A, F)
        return out


class FixedFourierHead:
    """All K components in one FC pass; K is baked into the layer widths."""

    def __init__(self, cfg: HeadConfig, in_dim: int, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.in_dim = in_dim
        self.K = cfg.T_max
        self.ha_w, self.ha_b = _fc_init(rng, in_dim, self.K * _AMP_COLS,
                                        scale=0.01 / np.sqrt(in_dim))
        self.hf_w, self.hf_b = _fc_init(rng, in_dim, self.K * 2)
        self.hp_w, self.hp_b = _fc_init(rng, 2, self.K)

    def parameters(self):
        return [
            ("fixed.ha.w", self.ha_w),
            ("fixed.ha.b", self.ha_b),
            ("fixed.hf.w", self.hf_w),
            ("fixed.hf.b", self.hf_b),
            ("fixed.hp.w", self.hp_w),
            ("fixed.hp.b", self.hp_b),
        ]

    def components(self, z_hat: T.Tensor, cell: T.Tensor):
        """-> A (N, K, 6), F (N, K, 2), p (N, K)."""
        n = z_hat.shape[0]
        A = T.reshape(T.matmul(z_hat, self.ha_w) + self.ha_b, (n, self.K, _AMP_COLS))
        F = T.reshape(T.matmul(z_hat, self.hf_w) + self.hf_b, (n, self.K, 2))
        p = T.matmul(cell, self.hp_w) + self.hp_b
        return A, F, p


# ---------------------------------------------------------------------------
# synthesis

PI = math.pi


def component_contribution(A: T.Tensor, F: T.Tensor, p: T.Tensor, delta: T.Tensor) -> T.Tensor:
    """Vectorized single-component contribution: (N,6),(N,2),(N,1),(N,2) -> (N,3)."""
    theta = PI * (F * delta).sum(axis=1, keepdims=True) + p
    return T.narrow(A, 1, 0, 3) * T.tcos(theta) + T.narrow(A, 1, 3, 6) * T.tsin(theta)


def fixed_head_sum(A: T.Tensor, F: T.Tensor, p: T.Tensor, delta: T.Tensor) -> T.Tensor:
    """Sum of all K fixed-head components: inputs (N,K,6),(N,K,2),(N,K) -> (N,3)."""
    n, k, _ = A.shape
    theta = PI * (F * T.reshape(delta, (n, 1, 2))).sum(axis=2) + p  # (N, K)
    theta3 = T.reshape(theta, (n, k, 1))
    per = T.narrow(A, 2, 0, 3) * T.tcos(theta3) + T.narrow(A, 2, 3, 6) * T.tsin(theta3)
    return per.sum(axis=1)


def synthesize(components: list, delta) -> np.ndarray:
    """Sum component contributions left to right; empty list gives (0,0,0)."""
    acc = np.zeros(3, dtype=np.float64)
    for comp in components:
        acc = acc + comp.contribution(delta)
    return acc


def select_components(components: list, t: int, strategy: str, rng=None) -> list:
    """Choose t of the estimated components.

    descending: by Euclidean norm of the flattened amplitudes, largest
    first, ties broken by original index. random: uniform subset without
    replacement, returned in index order.
    """
    if not (0 <= t <= len(components)):
        raise ValueError(f"T={t} out of range for {len(components)} components")
    if strategy == "descending":
        norms = np.array([c.amplitude_norm() for c in components])
        order = np.argsort(-norms, kind="stable")
        return [components[i] for i in order[:t]]
    if strategy == "random":
        if rng is None:
            raise ValueError("random selection needs an rng")
        idx = np.sort(rng.choice(len(components), size=t, replace=False))
        return [components[i] for i in idx]
    raise ValueError(f"unknown strategy {strategy!r}")


def components_from_batch(A, F, p, row: int = 0) -> FourierComponent:
    """Convert one row of batched (A, F, p) arrays to a FourierComponent."""
    a = np.asarray(A, dtype=np.float64)[row]
    return FourierComponent(
        A=np.stack([a[:3], a[3:]], axis=1),
        F=np.asarray(F, dtype=np.float64)[row].copy(),
        p=float(np.asarray(p)[row].reshape(-1)[0]),
    )


def baseline_fixed_head(head: FixedFourierHead, z_hat, cell, K: int) -> list:
    """All K components of the fixed head for one query, as a list."""
    if K != head.K:
        raise ValueError(f"head was constructed with K={head.K}, requested {K}")
    z = T.Tensor(np.asarray(z_hat, dtype=T.default_dtype()).reshape(1, -1))
    c = T.Tensor(np.asarray(cell, dtype=T.default_dtype()).reshape(1, 2))
    A, F, p = head.components(z, c)
    a, f, ph = A.numpy()[0], F.numpy()[0], p.numpy()[0]
    return [
        FourierComponent(A=np.stack([a[k, :3], a[k, 3:]], axis=1), F=f[k].copy(), p=float(ph[k]))
        for k in range(head.K)
    ]
