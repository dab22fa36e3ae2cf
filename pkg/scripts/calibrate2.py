"""Second calibration round: find a T_max=16 recipe with a rising PSNR curve."""

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rfsr import experiments as ex
from rfsr.corpus import synthetic_corpus
from rfsr.encoder import EncoderConfig
from rfsr.heads import HeadConfig
from rfsr.model import SRModel
from rfsr.trainer import TrainConfig, save_checkpoint, train

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "accept"
CACHE.mkdir(parents=True, exist_ok=True)


def run(tag, epochs, halve, lr0, queries=64, batch=4, width=32, key=8):
    path = CACHE / f"{tag}.ckpt"
    dataset = synthetic_corpus()
    imgs = [img for _, img in dataset]
    if not path.exists():
        enc = EncoderConfig(channels=16, residual_blocks=2)
        head = HeadConfig(T_max=16, layers=4, model_width=width, key_dim=key)
        model = SRModel(enc, head, seed=0)
        cfg = TrainConfig(t_max=16, epochs=epochs, steps_per_epoch=100,
                          batch_size=batch, queries_per_image=queries,
                          lr_initial=lr0, lr_halve_every=halve, seed=0,
                          crop_base=16, scale_range=(1.0, 2.5))
        t0 = time.monotonic()
        res = train(model, imgs, cfg)
        save_checkpoint(model, path, train_cfg=cfg,
                        metrics=[{"steps": res.steps,
                                  "final_loss": float(np.mean(res.losses[-50:])),
                                  }])
        print(f"[{tag}] {res.steps} steps {(time.monotonic()-t0)/60:.1f} min "
              f"loss {np.mean(res.losses[:50]):.4f}->{np.mean(res.losses[-50:]):.4f}")
    else:
        from rfsr.trainer import load_checkpoint
        model, _ = load_checkpoint(path)
        print(f"[{tag}] cached")
    t_list = [1, 2, 4, 8, 16]
    sweep = ex.sweep_T(model, dataset, 2.0, [0] + t_list, "prefix")
    curve = sweep.curve()
    bil = curve.pop(0)
    rho = ex.spearman_rho(t_list, [curve[t] for t in t_list])
    print(f"[{tag}] curve {json.dumps({t: round(v,3) for t,v in curve.items()})} "
          f"bil {bil:.3f} gain {curve[16]-bil:+.3f} rho {rho:.2f}")


if __name__ == "__main__":
    run("cand_a_3000", epochs=30, halve=8, lr0=3e-3)
    run("cand_b_4500", epochs=45, halve=12, lr0=3e-3)
    run("cand_c_q128", epochs=30, halve=8, lr0=3e-3, queries=128, batch=2)
