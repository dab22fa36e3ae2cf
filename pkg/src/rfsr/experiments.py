"""Evaluation protocol: PSNR-vs-T sweeps, head comparisons, ablations.

All reports are deterministic functions of (checkpoint, dataset, seed):
wall-clock measurements are kept in a separate timing table so the main
CSVs are byte-reproducible. Sweeps exploit summation additivity — one
pass at the largest T yields every smaller T's reconstruction for free.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .imaging import ImageBuffer, bicubic_resample, bilinear_upsample, psnr
from .model import SRModel
from .trainer import load_checkpoint

STRATEGIES = ("prefix", "random", "descending")
RANDOM_DRAWS = 100


@dataclass
class SweepRow:
    t: int
    strategy: str
    mean_psnr: float
    std_psnr: float
    per_image: dict  # image id -> psnr
    seconds_per_image: dict  # image id -> cumulative seconds at this T


@dataclass
class SweepResult:
    model_id: str
    dataset_id: str
    scale: float
    rows: list

    def row(self, t: int, strategy: str = None) -> SweepRow:
        for r in self.rows:
            if r.t == t and (strategy is None or r.strategy == strategy):
                return r
        raise KeyError(f"no row for T={t} strategy={strategy}")

    def curve(self, strategy: str = None) -> dict:
        return {
            r.t: r.mean_psnr for r in self.rows if strategy is None or r.strategy == strategy
        }


def eval_pair(img: ImageBuffer, scale: float):
    """Build the evaluation (lr, ground truth) for one image.

    lr is the bicubic downsample by `scale`; when floor rounding makes the
    reconstruction target differ from the original size, the ground truth
    is the pseudo-GT bicubic downsample of the original to that size.
    """
    lr_h = int(math.floor(img.height / scale))
    lr_w = int(math.floor(img.width / scale))
    if lr_h < 1 or lr_w < 1:
        raise ValueError(f"scale {scale} collapses image {img.height}x{img.width}")
    lr = bicubic_resample(img, lr_h, lr_w)
    out_h = int(math.floor(lr_h * scale))
    out_w = int(math.floor(lr_w * scale))
    gt = img if (out_h, out_w) == (img.height, img.width) else bicubic_resample(img, out_h, out_w)
    return lr, gt


def _descending_mask(norms: np.ndarray, t: int) -> np.ndarray:
    """(K, H, W) amplitude norms -> boolean mask of each pixel's top-t."""
    order = np.argsort(-norms, axis=0, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(norms.shape[0])[:, None, None], axis=0)
    return ranks < t


def psnr_curve(model: SRModel, lr: ImageBuffer, gt: ImageBuffer, t_list, strategy: str,
               seed: int = 0, chunk: int = 4096):
    """PSNR and cumulative seconds per T for one image under one strategy."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    scale_x = gt.width / lr.width
    scale_y = gt.height / lr.height
    t_list = sorted(set(int(t) for t in t_list))
    t_top = max(t_list)
    psnrs, seconds = {}, {}
    start = time.monotonic()
    if strategy == "prefix":
        want = set(t_list)
        for t, raw in model.progressive_infer(lr, scale_x, scale_y, t_top, chunk=chunk):
            if t in want:
                psnrs[t] = psnr(ImageBuffer(raw).clamped(), gt)
                seconds[t] = time.monotonic() - start
        return psnrs, seconds

    n_comp = t_top if model.is_recurrent else model.head.K
    if not model.is_recurrent and t_top > model.head.K:
        raise ValueError(f"fixed head has K={model.head.K}, sweep asks T={t_top}")
    fields, norms = model.component_fields(lr, scale_x, scale_y, n_comp, chunk=chunk)
    base = bilinear_upsample(lr, fields.shape[1], fields.shape[2]).data
    rng = np.random.default_rng(seed)
    for t in t_list:
        if t == 0:
            raw = base
        elif strategy == "descending":
            mask = _descending_mask(norms, t)
            raw = base + (fields * mask[:, :, :, None]).sum(axis=0)
        else:  # random: mean reconstruction over RANDOM_DRAWS index subsets
            acc = np.zeros_like(base)
            for _ in range(RANDOM_DRAWS):
                idx = rng.choice(n_comp, size=t, replace=False)
                acc += base + fields[idx].sum(axis=0)
            raw = acc / RANDOM_DRAWS
        psnrs[t] = psnr(ImageBuffer(raw).clamped(), gt)
        seconds[t] = time.monotonic() - start
    return psnrs, seconds


def sweep_T(model: SRModel, dataset, scale: float, t_list, strategy: str = None,
            model_id: str = "model", dataset_id: str = "dataset", seed: int = 0) -> SweepResult:
    """PSNR over the dataset for each T in t_list."""
    if not dataset:
        raise ValueError("sweep over an empty dataset")
    if strategy is None:
        strategy = "prefix" if model.is_recurrent else "descending"
    per_image_curves = {}
    per_image_seconds = {}
    for image_id, img in dataset:
        lr, gt = eval_pair(img, scale)
        psnrs, secs = psnr_curve(model, lr, gt, t_list, strategy, seed=seed)
        per_image_curves[image_id] = psnrs
        per_image_seconds[image_id] = secs
    rows = []
    for t in sorted(set(int(t) for t in t_list)):
        vals = {iid: per_image_curves[iid][t] for iid, _ in dataset}
        finite = [v for v in vals.values() if math.isfinite(v)]
        mean = float(np.mean(finite)) if finite else math.inf
        std = float(np.std(finite)) if finite else 0.0
        rows.append(
            SweepRow(
                t=t,
                strategy=strategy,
                mean_psnr=mean,
                std_psnr=std,
                per_image=vals,
                seconds_per_image={iid: per_image_seconds[iid][t] for iid, _ in dataset},
            )
        )
    return SweepResult(model_id=model_id, dataset_id=dataset_id, scale=scale, rows=rows)


def spearman_rho(xs, ys) -> float:
    import warnings as _warnings

    with _warnings.catch_warnings():
        # a flat PSNR curve has no defined rank correlation; nan is the
        # desired answer there (it fails any monotone-trend gate)
        _warnings.simplefilter("ignore")
        res = stats.spearmanr(xs, ys)
    return float(res.statistic if hasattr(res, "statistic") else res.correlation)


# ---------------------------------------------------------------------------
# head comparison (graceful degradation under component reduction)

def compare_heads(recurrent_model: SRModel, fixed_model: SRModel, dataset, scale: float,
                  t_list, strategies=("random", "descending"), seed: int = 0) -> dict:
    """Side-by-side PSNR of prefix-truncated recurrent vs subset-selected fixed.

    The flag per strategy asks: is the recurrent head's PSNR drop from
    T=max to T=min strictly smaller than the fixed head's drop under that
    selection strategy?
    """
    k = max(t_list)
    if not fixed_model.is_recurrent and fixed_model.head.K != k:
        raise ValueError(
            f"fixed head K={fixed_model.head.K} does not match max(t_list)={k}"
        )
    rec = sweep_T(recurrent_model, dataset, scale, t_list, "prefix",
                  model_id="recurrent", seed=seed)
    fixed_sweeps = {
        s: sweep_T(fixed_model, dataset, scale, t_list, s, model_id="fixed", seed=seed)
        for s in strategies
    }
    t_lo, t_hi = min(t_list), max(t_list)
    rec_curve = rec.curve()
    rec_drop = rec_curve[t_hi] - rec_curve[t_lo]
    flags = {}
    for s, sw in fixed_sweeps.items():
        curve = sw.curve()
        flags[s] = bool(rec_drop < (curve[t_hi] - curve[t_lo]))
    return {
        "recurrent": rec,
        "fixed": fixed_sweeps,
        "recurrent_drop": rec_drop,
        "fixed_drops": {s: sw.curve()[t_hi] - sw.curve()[t_lo] for s, sw in fixed_sweeps.items()},
        "recurrent_smaller_drop": flags,
        "all_strategies_favor_recurrent": all(flags.values()),
        "random_draws": RANDOM_DRAWS,
    }


# ---------------------------------------------------------------------------
# ablations

def max_adjacent_drop(curve: dict) -> float:
    ts = sorted(curve)
    drops = [curve[a] - curve[b] for a, b in zip(ts, ts[1:])]
    return float(max(drops)) if drops else 0.0


def _require_same_configs(h1, h2, e1, e2, ignore=()):
    d1, d2 = dict(h1), dict(h2)
    for key in ignore:
        d1.pop(key, None)
        d2.pop(key, None)
    if d1 != d2 or e1 != e2:
        raise ValueError("checkpoints differ beyond the ablated flag")


def ablate_variable_length(ckpt_variable, ckpt_fixed_length, dataset, scale: float = 2.0,
                           num_images: int = 5) -> dict:
    """PSNR-vs-T curves for models trained with and without variable length.

    Curves cover T = 1..2*T_max over the first `num_images` images; the
    smoothness statistic is each curve's largest adjacent-T PSNR drop.
    """
    model_v, head_v = load_checkpoint(ckpt_variable)
    model_f, head_f = load_checkpoint(ckpt_fixed_length)
    _require_same_configs(head_v["head_config"], head_f["head_config"],
                          head_v["encoder_config"], head_f["encoder_config"])
    tv = head_v["train_config"] or {}
    tf = head_f["train_config"] or {}
    if not (tv.get("variable_length", True) and not tf.get("variable_length", False)):
        raise ValueError("expected one variable-length and one fixed-length checkpoint")
    if {k: v for k, v in tv.items() if k != "variable_length"} != {
        k: v for k, v in tf.items() if k != "variable_length"
    }:
        raise ValueError("train configs differ beyond variable_length")
    t_max = model_v.head_cfg.T_max
    t_list = list(range(1, 2 * t_max + 1))
    subset = dataset[:num_images]
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")  # T beyond T_max is the point here
        sweep_v = sweep_T(model_v, subset, scale, t_list, "prefix", model_id="variable")
        sweep_f = sweep_T(model_f, subset, scale, t_list, "prefix", model_id="fixed_length")
    curve_v, curve_f = sweep_v.curve(), sweep_f.curve()
    in_range = {t: v for t, v in curve_v.items() if t <= t_max}
    in_range_f = {t: v for t, v in curve_f.items() if t <= t_max}
    return {
        "variable": sweep_v,
        "fixed_length": sweep_f,
        "t_max": t_max,
        "half_t": t_max // 2,
        "variable_better_at_half": bool(
            curve_v[t_max // 2] > curve_f[t_max // 2]
        ),
        "max_drop_variable": max_adjacent_drop(in_range),
        "max_drop_fixed_length": max_adjacent_drop(in_range_f),
        "fixed_length_less_smooth": bool(
            max_adjacent_drop(in_range_f) > max_adjacent_drop(in_range)
        ),
    }


def ablate_T_max(checkpoints: dict, dataset, t_list, scale: float = 2.0) -> dict:
    """PSNR matrix over (training T_max row, test T column).

    checkpoints: {t_max: [ckpt paths, one per seed]}. Cells average over
    seeds; each row is flagged on whether its best test T equals its
    training T_max.
    """
    import warnings as _warnings

    matrix = {}
    diagonal_flags = {}
    for t_max, paths in sorted(checkpoints.items()):
        if not paths:
            raise ValueError(f"no checkpoints for T_max={t_max}")
        acc = {t: [] for t in t_list}
        for path in paths:
            model, header = load_checkpoint(path)
            if model.head_cfg.T_max != t_max:
                raise ValueError(
                    f"checkpoint {path} has T_max={model.head_cfg.T_max}, expected {t_max}"
                )
            with _warnings.catch_warnings():
                _warnings.simplefilter("ignore")
                sw = sweep_T(model, dataset, scale, t_list, "prefix",
                             model_id=f"tmax{t_max}")
            for t, v in sw.curve().items():
                acc[t].append(v)
        row = {t: float(np.mean(vs)) for t, vs in acc.items()}
        matrix[t_max] = row
        best_t = max(row, key=row.get)
        diagonal_flags[t_max] = bool(best_t == t_max)
    return {
        "matrix": matrix,
        "diagonal_flags": diagonal_flags,
        "diagonal_count": sum(diagonal_flags.values()),
    }


def _relative_pe_sanity(model: SRModel, tol: float = 1e-4) -> None:
    stack = model.head.stack
    rng = np.random.default_rng(0)
    tokens = rng.normal(size=(6, stack.width)).astype(np.float32)
    a = stack.forward_parallel(tokens, start_index=0)
    b = stack.forward_parallel(tokens, start_index=9)
    worst = float(np.abs(a - b).max())
    if worst > tol:
        raise AssertionError(f"relative PE shift invariance violated: {worst}")


def ablate_position_encoding(checkpoints: dict, dataset, t_list, scale: float = 2.0) -> dict:
    """PSNR per (PE variant, T); checkpoints: {variant: [paths per seed]}."""
    table = {}
    for variant, paths in sorted(checkpoints.items()):
        if not paths:
            raise ValueError(f"no checkpoints for variant {variant!r}")
        acc = {t: [] for t in t_list}
        for path in paths:
            model, _ = load_checkpoint(path)
            if model.head_cfg.pe_variant != variant:
                raise ValueError(f"{path} is {model.head_cfg.pe_variant}, expected {variant}")
            if variant == "relative":
                _relative_pe_sanity(model)
            sw = sweep_T(model, dataset, scale, t_list, "prefix", model_id=variant)
            for t, v in sw.curve().items():
                acc[t].append(v)
        table[variant] = {t: float(np.mean(vs)) for t, vs in acc.items()}
    flags = {}
    if "relative" in table and "none" in table:
        small = sorted(t_list)[:2]
        flags["relative_ge_none_at_small_t"] = bool(
            all(table["relative"][t] >= table["none"][t] for t in small)
        )
    return {"table": table, "flags": flags}


# ---------------------------------------------------------------------------
# report files

def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def sweep_csv(result: SweepResult) -> str:
    """Deterministic CSV: one row per image x T (no timing columns)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "scale", "strategy", "T", "image", "psnr"])
    for row in sorted(result.rows, key=lambda r: (r.t, r.strategy)):
        for image_id in sorted(row.per_image):
            w.writerow(
                [result.model_id, result.dataset_id, f"{result.scale:g}",
                 row.strategy, row.t, image_id, _fmt(row.per_image[image_id])]
            )
    return buf.getvalue()


def timing_csv(result: SweepResult) -> str:
    """Wall-clock sidecar (not byte-reproducible; excluded from digests)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "strategy", "T", "image", "cumulative_seconds"])
    for row in sorted(result.rows, key=lambda r: (r.t, r.strategy)):
        for image_id in sorted(row.seconds_per_image):
            w.writerow([result.model_id, row.strategy, row.t, image_id,
                        f"{row.seconds_per_image[image_id]:.4f}"])
    return buf.getvalue()


def sweep_summary(result: SweepResult) -> dict:
    return {
        "model": result.model_id,
        "dataset": result.dataset_id,
        "scale": result.scale,
        "psnr_border_crop": "none",
        "psnr_channels": "rgb_joint",
        "rows": [
            {
                "T": r.t,
                "strategy": r.strategy,
                "mean_psnr": None if math.isinf(r.mean_psnr) else r.mean_psnr,
                "std_psnr": r.std_psnr,
            }
            for r in sorted(result.rows, key=lambda x: (x.t, x.strategy))
        ],
    }


def write_sweep(result: SweepResult, out_dir, stem: str = "sweep") -> dict:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / f"{stem}.csv",
        "summary": out / f"{stem}_summary.json",
        "timing": out / f"{stem}_timing.csv",
    }
    paths["csv"].write_text(sweep_csv(result))
    paths["summary"].write_text(json.dumps(sweep_summary(result), indent=2, sort_keys=True) + "\n")
    paths["timing"].write_text(timing_csv(result))
    return paths
