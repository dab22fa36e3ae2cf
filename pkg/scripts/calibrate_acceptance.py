"""Train the acceptance-profile models and print every trend signal.

Writes checkpoints into .cache/accept/ (keyed by profile+seed) so repeat
runs skip finished trainings. Run from the repo root:

    python3 scripts/calibrate_acceptance.py
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rfsr import experiments as ex
from rfsr import profiles
from rfsr.corpus import synthetic_corpus
from rfsr.model import SRModel
from rfsr.trainer import load_checkpoint, save_checkpoint, train

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "accept"


def get_model(tag, maker, **kw):
    CACHE.mkdir(parents=True, exist_ok=True)
    path = CACHE / f"{tag}.ckpt"
    if path.exists():
        model, header = load_checkpoint(path)
        print(f"[cached] {tag} ({header.get('metrics', [{}])[-1] if header.get('metrics') else ''})")
        return model, path
    enc, head, cfg = maker(**kw)
    model = SRModel(enc, head, seed=cfg.seed)
    imgs = [img for _, img in synthetic_corpus()]
    t0 = time.monotonic()
    res = train(model, imgs, cfg, progress=200)
    dt = time.monotonic() - t0
    metrics = [{"steps": res.steps, "final_loss": float(np.mean(res.losses[-50:]))}]
    save_checkpoint(model, path, train_cfg=cfg, metrics=metrics)
    print(f"[trained] {tag}: {res.steps} steps {dt/60:.1f} min, "
          f"loss {np.mean(res.losses[:50]):.4f}->{np.mean(res.losses[-50:]):.4f}")
    return model, path


def main():
    dataset = synthetic_corpus()
    t_list = [1, 2, 4, 8, 16]

    main_model, _ = get_model("main_s0", profiles.accept_main, seed=0)

    print("\n== criterion 5 signals (main model, scale 2) ==")
    t0 = time.monotonic()
    sweep = ex.sweep_T(main_model, dataset, 2.0, t_list, "prefix", model_id="main")
    curve = sweep.curve()
    bil = ex.sweep_T(main_model, dataset, 2.0, [0], "prefix").curve()[0]
    rho = ex.spearman_rho(t_list, [curve[t] for t in t_list])
    print(f"curve: {json.dumps({t: round(v,3) for t,v in curve.items()})}")
    print(f"bilinear {bil:.3f}; gain at T=16: {curve[16]-bil:+.3f} dB; spearman {rho:.3f}; "
          f"eval {time.monotonic()-t0:.0f}s")

    small16, p16s0 = get_model("small_t16_s0", profiles.accept_small, t_max=16, seed=0)
    fixed, _ = get_model("small_fixed_s0", profiles.accept_small, t_max=16, seed=0,
                         head_kind="fixed_fc")
    print("\n== criterion 6 signals (grid profile) ==")
    rep = ex.compare_heads(small16, fixed, dataset, 2.0, [4, 8, 16])
    print(f"rec curve: {json.dumps({t: round(v,3) for t,v in rep['recurrent'].curve().items()})}")
    for s, sw in rep["fixed"].items():
        print(f"fixed {s}: {json.dumps({t: round(v,3) for t,v in sw.curve().items()})}")
    print(f"rec drop {rep['recurrent_drop']:.3f}; fixed drops "
          f"{ {s: round(d,3) for s,d in rep['fixed_drops'].items()} }; "
          f"flags {rep['recurrent_smaller_drop']}")

    fixlen, pfl = get_model("small_t16_fixlen_s0", profiles.accept_small, t_max=16,
                            seed=0, variable_length=False)
    print("\n== criterion 7 signals ==")
    rep7 = ex.ablate_variable_length(p16s0, pfl, dataset, scale=2.0, num_images=5)
    cv = rep7["variable"].curve()
    cf = rep7["fixed_length"].curve()
    print(f"var:    {json.dumps({t: round(cv[t],2) for t in sorted(cv) if t in (1,2,4,8,12,16,24,32)})}")
    print(f"fixlen: {json.dumps({t: round(cf[t],2) for t in sorted(cf) if t in (1,2,4,8,12,16,24,32)})}")
    print(f"var better at T={rep7['half_t']}: {rep7['variable_better_at_half']}; "
          f"max drops var {rep7['max_drop_variable']:.3f} fixlen {rep7['max_drop_fixed_length']:.3f}")

    print("\n== criterion 8 signals (3 seeds x T_max {4,8,16}) ==")
    ckpts = {}
    for t_max in (4, 8, 16):
        ckpts[t_max] = []
        for seed in range(3):
            if t_max == 16 and seed == 0:
                ckpts[t_max].append(p16s0)
                continue
            _, p = get_model(f"small_t{t_max}_s{seed}", profiles.accept_small,
                             t_max=t_max, seed=seed)
            ckpts[t_max].append(p)
    rep8 = ex.ablate_T_max(ckpts, dataset, [4, 8, 16], scale=2.0)
    for row, vals in rep8["matrix"].items():
        print(f"T_max={row:2d}: {json.dumps({t: round(v,3) for t,v in vals.items()})} "
              f"diagonal={rep8['diagonal_flags'][row]}")
    print(f"diagonal rows: {rep8['diagonal_count']}/3")


if __name__ == "__main__":
    main()
