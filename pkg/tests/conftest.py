import hashlib
import json
import os
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
ACCEPT_CACHE = REPO_ROOT / ".cache" / "accept"


def _config_tag(tag: str, enc, head, train) -> str:
    digest = hashlib.sha256(
        json.dumps([asdict(enc), asdict(head), asdict(train)], sort_keys=True).encode()
    ).hexdigest()[:10]
    return f"{tag}-{digest}"


class TrainedModels:
    """Trains acceptance models on demand, caching checkpoints on disk.

    Checkpoint filenames embed a digest of the full configuration, so a
    profile change invalidates the cache automatically. Set
    RFSR_ACCEPT_CACHE=0 to force retraining.
    """

    def __init__(self):
        self.use_cache = os.environ.get("RFSR_ACCEPT_CACHE", "1") != "0"
        ACCEPT_CACHE.mkdir(parents=True, exist_ok=True)
        self._corpus = None

    @property
    def corpus(self):
        from rfsr.corpus import synthetic_corpus

        if self._corpus is None:
            self._corpus = synthetic_corpus()
        return self._corpus

    def get(self, tag: str, maker, **kwargs):
        """-> (model, ckpt_path, train_duration_s).

        The duration always comes from the run that produced the
        checkpoint; it lives in a sidecar so checkpoints themselves stay
        byte-deterministic.
        """
        from rfsr.model import SRModel
        from rfsr.trainer import load_checkpoint, save_checkpoint, train

        enc, head, cfg = maker(**kwargs)
        path = ACCEPT_CACHE / f"{_config_tag(tag, enc, head, cfg)}.ckpt"
        sidecar = path.with_suffix(".run.json")
        if self.use_cache and path.exists():
            model, header = load_checkpoint(path)
            if sidecar.exists():
                duration = json.loads(sidecar.read_text())["duration_s"]
            else:  # checkpoints produced by older calibration scripts
                duration = header["metrics"][-1].get("duration_s", 0.0)
            return model, path, duration
        model = SRModel(enc, head, seed=cfg.seed)
        start = time.monotonic()
        result = train(model, [img for _, img in self.corpus], cfg)
        duration = time.monotonic() - start
        save_checkpoint(
            model, path, train_cfg=cfg,
            metrics=[{
                "steps": result.steps,
                "final_loss": float(np.mean(result.losses[-50:])),
            }],
            rng_state=result.rng_state,
        )
        sidecar.write_text(json.dumps({"duration_s": round(duration, 2)}) + "\n")
        return model, path, duration


@pytest.fixture(scope="session")
def trained_models():
    return TrainedModels()
