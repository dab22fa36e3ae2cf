"""Training loop: variable-length recurrence, Adam, checkpointing.

Each step crops random-scale training pairs, samples query pixels at exact
HR pixel centers, and supervises the summed component residual against the
ground truth minus the bilinear base. With variable-length training the
recurrence count is drawn per batch item from Uniform{1..T_max}, so the
model stays accurate under any test-time truncation; without it every
draw is T_max.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .coords import hr_pixel_centers, nearest_latent_grid
from .encoder import EncoderConfig
from .heads import HeadConfig, component_contribution, fixed_head_sum
from .imaging import ImageBuffer, bilinear_upsample, make_training_pair
from .model import SRModel

CHECKPOINT_MAGIC = b"RFSRCKPT\n"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}; diagnostics: {json.dumps(diagnostics, sort_keys=True)}")
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    t_max: int = 64
    variable_length: bool = True
    epochs: int = 400
    steps_per_epoch: int = 50
    batch_size: int = 16
    queries_per_image: int = 256
    lr_initial: float = 1e-4
    lr_halve_every: int = 200
    seed: int = 0
    loss: str = "l1"
    crop_base: int = 48
    scale_range: tuple = (1.0, 4.0)

    def validate(self):
        if self.batch_size < 1 or self.queries_per_image < 1 or self.t_max < 1:
            raise ValueError(f"bad train config: {self}")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"loss must be l1 or l2, got {self.loss!r}")
        return self


def sample_T(rng: np.random.Generator, t_max: int, variable_length: bool) -> int:
    """Uniform{1..t_max} under variable-length training, else always t_max."""
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if not variable_length:
        return t_max
    return int(rng.integers(1, t_max + 1))


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr_initial * 0.5 ** (epoch // cfg.lr_halve_every)


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.t = 0
        self.last_grad_norms: dict = {}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        self.last_grad_norms = {}
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            self.last_grad_norms[name] = float(np.linalg.norm(g))
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def _query_targets(pair, q: int, rng: np.random.Generator):
    """Sample q query pixels of one pair; returns per-query training arrays."""
    hh, ww = pair.hr.height, pair.hr.width
    n_pix = hh * ww
    idx = rng.choice(n_pix, size=min(q, n_pix), replace=False)
    if idx.size < q:
        idx = np.concatenate([idx, rng.integers(0, n_pix, size=q - idx.size)])
    assert idx.min() >= 0 and idx.max() < n_pix
    centers = hr_pixel_centers(hh, ww)[idx]
    base = pair.lr.height
    rows, cols, _, delta = nearest_latent_grid(centers, base, pair.lr.width)
    latent_rows = rows * pair.lr.width + cols
    up = bilinear_upsample(pair.lr, hh, ww).data.reshape(n_pix, 3)
    gt = pair.hr.data.reshape(n_pix, 3)
    target = gt[idx] - up[idx]
    s_x, s_y = pair.scale
    cell = np.broadcast_to(np.array([1.0 / s_x, 1.0 / s_y]), (q, 2)).copy()
    return latent_rows, delta, cell, target


def train_step(model: SRModel, pairs, ts, cfg: TrainConfig, opt: Adam, lr: float,
               rng: np.random.Generator) -> float:
    """One optimization step over a batch of pairs with per-item recurrence
    counts `ts`; returns the pre-update loss."""
    order = np.argsort(-np.asarray(ts), kind="stable")
    pairs = [pairs[i] for i in order]
    ts = [ts[i] for i in order]
    q = cfg.queries_per_image
    base = cfg.crop_base

    batch = np.stack([p.lr.data.transpose(2, 0, 1) for p in pairs]).astype(T.default_dtype())
    rows_all, delta_all, cell_all, target_all, counts = [], [], [], [], []
    for i, (pair, t_i) in enumerate(zip(pairs, ts)):
        latent_rows, delta, cell, target = _query_targets(pair, q, rng)
        rows_all.append(latent_rows + i * base * base)
        delta_all.append(delta)
        cell_all.append(cell)
        target_all.append(target)
        counts.append(np.full(q, t_i))
    idx = np.concatenate(rows_all)
    delta = T.Tensor(np.concatenate(delta_all).astype(T.default_dtype()))
    cell = T.Tensor(np.concatenate(cell_all).astype(T.default_dtype()))
    target = T.Tensor(np.concatenate(target_all).astype(T.default_dtype()))
    counts = np.concatenate(counts)
    n_total = counts.size

    with T.Tape() as tape:
        feats = model.encode_features(T.Tensor(batch))
        flat = T.reshape(feats, (len(pairs) * base * base, feats.shape[-1]))
        z_hat = T.gather_rows(flat, idx)
        if model.is_recurrent:
            residual = T.zeros((n_total, 3))
            for A, F, p, n_act in model.head.run(z_hat, cell, counts):
                contrib = component_contribution(A, F, p, T.narrow(delta, 0, 0, n_act))
                if n_act < n_total:
                    contrib = T.concat([contrib, T.zeros((n_total - n_act, 3))], axis=0)
                residual = residual + contrib
        else:
            A, F, p = model.head.components(z_hat, cell)
            residual = fixed_head_sum(A, F, p, delta)
        err = residual - target
        loss = T.tabs(err).mean() if cfg.loss == "l1" else (err * err).mean()
        loss_val = loss.item()
        if not math.isfinite(loss_val):
            raise TrainingDiverged(
                "non-finite training loss",
                {
                    "loss": repr(loss_val),
                    "lr": lr,
                    "grad_norms": {
                        k: round(v, 6) for k, v in sorted(opt.last_grad_norms.items())[:8]
                    },
                },
            )
        opt.zero_grad()
        tape.backward(loss)
    opt.step(lr)
    return loss_val


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    records: list = field(default_factory=list)
    duration_s: float = 0.0
    rng_state: dict = None  # bit-generator state at the end of the run

    @property
    def steps(self) -> int:
        return len(self.losses)


def train(model: SRModel, images, cfg: TrainConfig, log_path=None,
          progress=None) -> TrainResult:
    """Run the full loop over a list of HR source ImageBuffers."""
    cfg.validate()
    if not images:
        raise ValueError("training needs at least one source image")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters())
    result = TrainResult()
    log_f = open(log_path, "w") if log_path else None
    start = time.monotonic()
    try:
        step = 0
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            for _ in range(cfg.steps_per_epoch):
                pairs = []
                ts = []
                for _ in range(cfg.batch_size):
                    src = images[int(rng.integers(0, len(images)))]
                    pairs.append(
                        make_training_pair(src, rng, base=cfg.crop_base,
                                           scale_range=cfg.scale_range)
                    )
                    if model.is_recurrent:
                        ts.append(sample_T(rng, cfg.t_max, cfg.variable_length))
                    else:
                        ts.append(model.head.K)
                loss = train_step(model, pairs, ts, cfg, opt, lr, rng)
                record = {"step": step, "epoch": epoch, "loss": loss, "lr": lr, "T": ts}
                result.losses.append(loss)
                result.records.append(record)
                if log_f:
                    log_f.write(json.dumps(record) + "\n")
                if progress and step % progress == 0:
                    print(f"step {step}: loss {loss:.5f} lr {lr:g}", flush=True)
                step += 1
    finally:
        if log_f:
            log_f.close()
    result.duration_s = time.monotonic() - start
    state = rng.bit_generator.state
    result.rng_state = json.loads(json.dumps(state, default=str))
    return result


# ---------------------------------------------------------------------------
# checkpoints: text JSON header + raw little-endian weight blobs

class CheckpointError(ValueError):
    pass


def save_checkpoint(model: SRModel, path, train_cfg: TrainConfig = None,
                    metrics=None, rng_state=None) -> None:
    params = model.parameters()
    tensors = []
    blobs = []
    for name, p in params:
        arr = p.data
        code = "<f4" if arr.dtype == np.float32 else "<f8"
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(np.ascontiguousarray(arr).astype(code).tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "encoder_config": asdict(model.enc_cfg),
        "head_config": asdict(model.head_cfg),
        "train_config": asdict(train_cfg) if train_cfg else None,
        "seed": model.seed,
        "rng_state": rng_state,
        "metrics": metrics or [],
        "tensors": tensors,
    }
    payload = (
        CHECKPOINT_MAGIC
        + json.dumps(header, sort_keys=True).encode()
        + b"\n"
        + b"".join(blobs)
    )
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path):
    """-> (model, header dict). Rebuilds the model and restores every weight."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    nl = raw.index(b"\n", len(CHECKPOINT_MAGIC))
    try:
        header = json.loads(raw[len(CHECKPOINT_MAGIC) : nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {header.get('format_version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    enc_cfg = EncoderConfig(**header["encoder_config"])
    hc = dict(header["head_config"])
    head_cfg = HeadConfig(**hc)
    model = SRModel(enc_cfg, head_cfg, seed=header["seed"])
    params = dict(model.parameters())
    offset = nl + 1
    for spec in header["tensors"]:
        name = spec["name"]
        if name not in params:
            raise CheckpointError(f"unknown tensor {name!r} in {path}")
        shape = tuple(spec["shape"])
        dt = np.dtype(spec["dtype"])
        nbytes = int(np.prod(shape)) * dt.itemsize if shape else dt.itemsize
        blob = raw[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise CheckpointError(f"truncated checkpoint {path} at tensor {name!r}")
        arr = np.frombuffer(blob, dtype=dt).reshape(shape).astype(params[name].data.dtype)
        params[name].data = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return model, header


def checkpoint_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()
