"""Position-encoding comparison: none / absolute (sinusoidal, learned) / relative.

Trains one ablation-profile model per variant per seed (cached under
.cache/accept/), then prints the PSNR table over test-time component
counts and whether relative PE wins at the small ones.

    python3 scripts/run_pe_ablation.py [--seeds N] [--out DIR]
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rfsr import experiments as ex
from rfsr import profiles
from rfsr.corpus import synthetic_corpus
from rfsr.model import SRModel
from rfsr.trainer import save_checkpoint, train

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "accept"
VARIANTS = ("none", "absolute_sinusoidal", "absolute_learned", "relative")


def ensure_model(variant: str, seed: int, corpus):
    enc, head, cfg = profiles.accept_small(t_max=16, seed=seed, pe_variant=variant)
    digest = hashlib.sha256(
        json.dumps([asdict(enc), asdict(head), asdict(cfg)], sort_keys=True).encode()
    ).hexdigest()[:10]
    path = CACHE / f"pe-{variant}-s{seed}-{digest}.ckpt"
    if path.exists():
        return path
    model = SRModel(enc, head, seed=cfg.seed)
    start = time.monotonic()
    res = train(model, [img for _, img in corpus], cfg)
    save_checkpoint(model, path, train_cfg=cfg,
                    metrics=[{"steps": res.steps,
                              "final_loss": float(np.mean(res.losses[-50:]))}])
    print(f"trained {variant} seed {seed}: {(time.monotonic()-start)/60:.1f} min")
    return path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--t-list", default="2,4,8,16")
    parser.add_argument("--out", default="reports/pe_ablation")
    args = parser.parse_args()
    CACHE.mkdir(parents=True, exist_ok=True)
    corpus = synthetic_corpus()
    t_list = [int(t) for t in args.t_list.split(",")]

    ckpts = {
        v: [ensure_model(v, s, corpus) for s in range(args.seeds)] for v in VARIANTS
    }
    rep = ex.ablate_position_encoding(ckpts, corpus, t_list, scale=2.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pe_ablation.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")

    print(f"\n{'variant':22s} " + " ".join(f"T={t:>2d}  " for t in t_list))
    for variant in VARIANTS:
        row = rep["table"][variant]
        print(f"{variant:22s} " + " ".join(f"{row[t]:6.2f}" for t in t_list))
    print(f"\nrelative >= none at the two smallest T: "
          f"{rep['flags'].get('relative_ge_none_at_small_t')}")
    print(f"report: {out / 'pe_ablation.json'}")


if __name__ == "__main__":
    main()
