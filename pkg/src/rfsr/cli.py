"""Command-line entry point: train / infer / eval / sweep / ablate / serve.

Configuration comes from an optional JSON file plus repeatable
--set dotted.key=value overrides; the effective configuration is echoed
into the output directory so every run is self-describing. Exit codes:
0 success, 1 failed trend assertion under --strict, 2 usage or config
error, 3 missing resource.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_ASSERT, EXIT_USAGE, EXIT_MISSING = 0, 1, 2, 3

log = logging.getLogger("rfsr")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_sets(config: dict, sets) -> dict:
    for item in sets or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}", EXIT_USAGE)
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = config
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise CliError(f"--set path {key!r} crosses a non-section", EXIT_USAGE)
        node[parts[-1]] = _parse_value(value)
    return config


def _load_config(path, sets, seed):
    config = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise CliError(f"config file not found: {p}", EXIT_MISSING)
        try:
            config = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {p} is not valid JSON: {exc}", EXIT_USAGE)
    config = _apply_sets(config, sets)
    if seed is not None:
        config.setdefault("trainer", {})["seed"] = seed
    return config


def _build_configs(config: dict):
    from .encoder import EncoderConfig
    from .heads import HeadConfig
    from .profiles import PROFILES
    from .trainer import TrainConfig

    profile = config.get("profile")
    if profile:
        if profile not in PROFILES:
            raise CliError(
                f"unknown profile {profile!r}; choose from {sorted(PROFILES)}", EXIT_USAGE
            )
        enc, head, tr = PROFILES[profile]()
        enc_d, head_d, tr_d = asdict(enc), asdict(head), asdict(tr)
    else:
        enc_d, head_d, tr_d = {}, {}, {}
    enc_d.update(config.get("encoder", {}))
    head_d.update(config.get("head", {}))
    tr_d.update(config.get("trainer", {}))
    known = {"profile", "encoder", "head", "trainer"}
    stray = set(config) - known
    if stray:
        raise CliError(f"unknown config sections: {sorted(stray)}", EXIT_USAGE)
    try:
        enc_cfg = EncoderConfig(**enc_d).validate()
        head_cfg = HeadConfig(**head_d).validate()
        tr_d.setdefault("t_max", head_cfg.T_max)
        tr_cfg = TrainConfig(**tr_d).validate()
    except TypeError as exc:
        raise CliError(f"invalid config key: {exc}", EXIT_USAGE)
    except ValueError as exc:
        raise CliError(f"invalid config value: {exc}", EXIT_USAGE)
    if tr_cfg.t_max != head_cfg.T_max:
        raise CliError(
            f"trainer.t_max ({tr_cfg.t_max}) must match head.T_max ({head_cfg.T_max})",
            EXIT_USAGE,
        )
    return enc_cfg, head_cfg, tr_cfg, {"encoder": enc_d, "head": head_d, "trainer": tr_d}


def _load_dataset_arg(data):
    from .corpus import load_dataset, synthetic_corpus

    if data is None:
        return synthetic_corpus(), "bundled-synthetic"
    try:
        return load_dataset(data), str(data)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_MISSING)


def _load_ckpt(path):
    from .trainer import CheckpointError, load_checkpoint

    p = Path(path)
    if not p.exists():
        raise CliError(f"checkpoint not found: {p}", EXIT_MISSING)
    try:
        return load_checkpoint(p)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_USAGE)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, payload: dict) -> None:
    (out / "effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _parse_t_list(text: str):
    try:
        ts = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"--t-list expects comma-separated integers, got {text!r}", EXIT_USAGE)
    if not ts or any(t < 0 for t in ts):
        raise CliError(f"--t-list values must be >= 0, got {text!r}", EXIT_USAGE)
    return ts


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    from .model import SRModel
    from .trainer import save_checkpoint, train

    config = _load_config(args.config, args.set, args.seed)
    enc_cfg, head_cfg, tr_cfg, effective = _build_configs(config)
    dataset, dataset_id = _load_dataset_arg(args.data)
    out = _out_dir(args)
    _echo_config(out, {"profile": config.get("profile"), **effective,
                       "dataset": dataset_id})
    model = SRModel(enc_cfg, head_cfg, seed=tr_cfg.seed)
    log.info("training %s head for %d steps", head_cfg.head_kind,
             tr_cfg.epochs * tr_cfg.steps_per_epoch)
    result = train(model, [img for _, img in dataset], tr_cfg,
                   log_path=out / "train_log.jsonl",
                   progress=args.progress)
    ckpt = out / "model.ckpt"
    # checkpoints stay byte-deterministic: wall-clock goes in a sidecar
    save_checkpoint(
        model, ckpt, train_cfg=tr_cfg,
        metrics=[{"steps": result.steps,
                  "final_loss": float(np.mean(result.losses[-50:])) if result.losses else None}],
        rng_state=result.rng_state,
    )
    (out / "run_summary.json").write_text(
        json.dumps({"steps": result.steps, "duration_s": round(result.duration_s, 2)},
                   indent=2) + "\n"
    )
    print(f"checkpoint: {ckpt}")
    print(f"steps: {result.steps}  duration_s: {result.duration_s:.1f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    import warnings

    from .imaging import load_image, save_image

    model, header = _load_ckpt(args.ckpt)
    src = Path(args.image)
    if not src.exists():
        raise CliError(f"input image not found: {src}", EXIT_MISSING)
    img = load_image(src)
    t_max = header["head_config"]["T_max"]
    if args.T > t_max:
        print(f"warning: T={args.T} exceeds trained T_max={t_max}; "
              "quality typically degrades", file=sys.stderr)
    start = time.monotonic()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sr = model.infer_image(img, args.sx, args.sy, args.T)
    elapsed = time.monotonic() - start
    save_image(sr, args.out_image)
    print(f"wrote {args.out_image} ({sr.height}x{sr.width})")
    print(f"components: {args.T}  wall_clock_s: {elapsed:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import experiments as ex

    model, _ = _load_ckpt(args.ckpt)
    dataset, dataset_id = _load_dataset_arg(args.data)
    res = ex.sweep_T(model, dataset, args.scale, [args.T],
                     model_id=Path(args.ckpt).stem, dataset_id=dataset_id,
                     seed=args.seed or 0)
    row = res.rows[0]
    print(f"T={row.t} mean_psnr={row.mean_psnr:.4f} std={row.std_psnr:.4f} "
          f"n={len(row.per_image)}")
    if args.out:
        paths = ex.write_sweep(res, _out_dir(args), stem=f"eval_T{row.t}")
        print(f"report: {paths['csv']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from . import experiments as ex

    model, _ = _load_ckpt(args.ckpt)
    dataset, dataset_id = _load_dataset_arg(args.data)
    t_list = _parse_t_list(args.t_list)
    res = ex.sweep_T(model, dataset, args.scale, t_list,
                     strategy=args.strategy, model_id=Path(args.ckpt).stem,
                     dataset_id=dataset_id, seed=args.seed or 0)
    out = _out_dir(args)
    paths = ex.write_sweep(res, out, stem="sweep")
    curve = res.curve()
    rho = ex.spearman_rho(sorted(curve), [curve[t] for t in sorted(curve)])
    monotone = bool(not math.isnan(rho) and rho >= 0.8)
    summary = {"spearman_rho_T_psnr": None if math.isnan(rho) else rho,
               "monotone_trend": monotone}
    (out / "sweep_flags.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"rows: {len(res.rows)}  csv: {paths['csv']}")
    print(f"spearman(T, psnr) = {rho if not math.isnan(rho) else 'nan'}")
    if args.strict and not monotone:
        print("strict: monotone-quality flag failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def _parse_keyed_ckpts(items, key_type):
    out = {}
    for item in items:
        if "=" not in item:
            raise CliError(f"expected KEY=path[,path...], got {item!r}", EXIT_USAGE)
        key, paths = item.split("=", 1)
        out[key_type(key)] = [p for p in paths.split(",") if p]
    return out


def cmd_ablate(args) -> int:
    from . import experiments as ex

    dataset, _ = _load_dataset_arg(args.data)
    out = _out_dir(args)
    if args.kind == "variable-length":
        if not (args.var and args.fixed):
            raise CliError("variable-length ablation needs --var and --fixed", EXIT_USAGE)
        for p in (args.var, args.fixed):
            if not Path(p).exists():
                raise CliError(f"checkpoint not found: {p}", EXIT_MISSING)
        rep = ex.ablate_variable_length(args.var, args.fixed, dataset,
                                        scale=args.scale, num_images=args.images)
        payload = {
            "variable_better_at_half": rep["variable_better_at_half"],
            "fixed_length_less_smooth": rep["fixed_length_less_smooth"],
            "max_drop_variable": rep["max_drop_variable"],
            "max_drop_fixed_length": rep["max_drop_fixed_length"],
        }
        (out / "ablate_variable_length.json").write_text(json.dumps(payload, indent=2) + "\n")
        (out / "ablate_variable_length_variable.csv").write_text(ex.sweep_csv(rep["variable"]))
        (out / "ablate_variable_length_fixed.csv").write_text(ex.sweep_csv(rep["fixed_length"]))
        print(json.dumps(payload, indent=2))
        flags_ok = payload["variable_better_at_half"] and payload["fixed_length_less_smooth"]
    elif args.kind == "t-max":
        ckpts = _parse_keyed_ckpts(args.ckpt or [], int)
        if not ckpts:
            raise CliError("t-max ablation needs --ckpt TMAX=path[,path...]", EXIT_USAGE)
        for paths in ckpts.values():
            for p in paths:
                if not Path(p).exists():
                    raise CliError(f"checkpoint not found: {p}", EXIT_MISSING)
        rep = ex.ablate_T_max(ckpts, dataset, _parse_t_list(args.t_list), scale=args.scale)
        (out / "ablate_t_max.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
        print(json.dumps(rep["diagonal_flags"], indent=2, sort_keys=True))
        flags_ok = 3 * rep["diagonal_count"] >= 2 * len(rep["matrix"])
    elif args.kind == "pe":
        ckpts = _parse_keyed_ckpts(args.ckpt or [], str)
        if not ckpts:
            raise CliError("pe ablation needs --ckpt VARIANT=path[,path...]", EXIT_USAGE)
        for paths in ckpts.values():
            for p in paths:
                if not Path(p).exists():
                    raise CliError(f"checkpoint not found: {p}", EXIT_MISSING)
        rep = ex.ablate_position_encoding(ckpts, dataset, _parse_t_list(args.t_list),
                                          scale=args.scale)
        (out / "ablate_position_encoding.json").write_text(
            json.dumps(rep, indent=2, sort_keys=True) + "\n"
        )
        print(json.dumps(rep, indent=2, sort_keys=True))
        flags_ok = all(rep["flags"].values()) if rep["flags"] else True
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown ablation {args.kind!r}", EXIT_USAGE)
    if args.strict and not flags_ok:
        print("strict: ablation trend flag failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    if not Path(args.ckpt).exists():
        raise CliError(f"checkpoint not found: {args.ckpt}", EXIT_MISSING)
    app = create_app(ckpt_path=args.ckpt, max_pixels=args.max_pixels)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfsr",
        description="Cost/quality-controllable arbitrary-scale super-resolution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if data:
            p.add_argument("--data", default=None,
                           help="dataset manifest or image directory (default: bundled corpus)")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a dotted config key (repeatable)")
    p.add_argument("--progress", type=int, default=None,
                   help="print a progress line every N steps")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-image", required=True)
    p.add_argument("--sx", type=float, default=2.0)
    p.add_argument("--sy", type=float, default=2.0)
    p.add_argument("-T", type=int, default=8)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR at one T over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("-T", type=int, default=8)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="PSNR-vs-T sweep")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("--t-list", default="1,2,4,8,16")
    p.add_argument("--strategy", default=None,
                   choices=[None, "prefix", "random", "descending"])
    p.add_argument("--strict", action="store_true")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="run an ablation report")
    p.add_argument("kind", choices=["variable-length", "t-max", "pe"])
    p.add_argument("--var", default=None, help="variable-length checkpoint")
    p.add_argument("--fixed", default=None, help="fixed-length checkpoint")
    p.add_argument("--ckpt", action="append", metavar="KEY=PATH[,PATH...]",
                   help="keyed checkpoints (repeatable)")
    p.add_argument("--t-list", default="4,8,16")
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("--images", type=int, default=5)
    p.add_argument("--strict", action="store_true")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-pixels", type=int, default=512 * 512)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("RFSR_LOG", "WARNING").upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
