import hashlib
import json

import numpy as np
import pytest

from rfsr.cli import EXIT_ASSERT, EXIT_MISSING, EXIT_OK, EXIT_USAGE, main
from rfsr.corpus import materialize_corpus
from rfsr.imaging import bilinear_upsample, load_image, save_image
from rfsr.trainer import checkpoint_digest


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    materialize_corpus(d, size=40)
    return d


TINY_CONFIG = {
    "encoder": {"channels": 6, "residual_blocks": 1},
    "head": {"T_max": 4, "layers": 2, "model_width": 12, "key_dim": 6},
    "trainer": {
        "epochs": 1, "steps_per_epoch": 2, "batch_size": 2, "queries_per_image": 8,
        "crop_base": 10, "scale_range": [1.0, 2.0], "seed": 1,
    },
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "tiny.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    code = main(["train", "--config", str(cfg), "--data", str(data_dir),
                 "--out", str(out)])
    assert code == EXIT_OK
    return out


def test_train_writes_artifacts(trained):
    assert (trained / "model.ckpt").exists()
    assert (trained / "train_log.jsonl").exists()
    effective = json.loads((trained / "effective_config.json").read_text())
    assert effective["trainer"]["epochs"] == 1


def test_train_set_override(tmp_path, data_dir):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    code = main(["train", "--config", str(cfg), "--data", str(data_dir),
                 "--out", str(tmp_path), "--set", "trainer.epochs=1",
                 "--set", "trainer.steps_per_epoch=1"])
    assert code == EXIT_OK
    log = (tmp_path / "train_log.jsonl").read_text().strip().split("\n")
    assert len(log) == 1


def test_train_invalid_config_key_exits_2(tmp_path, data_dir):
    cfg = tmp_path / "bad.json"
    bad = dict(TINY_CONFIG)
    bad = json.loads(json.dumps(TINY_CONFIG))
    bad["trainer"]["bogus_knob"] = 3
    cfg.write_text(json.dumps(bad))
    code = main(["train", "--config", str(cfg), "--data", str(data_dir),
                 "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_train_missing_dataset_exits_3(tmp_path, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    missing = tmp_path / "nope"
    code = main(["train", "--config", str(cfg), "--data", str(missing),
                 "--out", str(tmp_path)])
    assert code == EXIT_MISSING
    assert str(missing) in capsys.readouterr().err


def test_train_seeded_runs_identical_digests(tmp_path, data_dir):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["train", "--config", str(cfg), "--data", str(data_dir),
                     "--out", str(out), "--seed", "9"])
        assert code == EXIT_OK
        digests.append(checkpoint_digest(out / "model.ckpt"))
    assert digests[0] == digests[1]


def test_infer_t0_is_bilinear(trained, data_dir, tmp_path):
    src = sorted(data_dir.glob("*.png"))[0]
    out_png = tmp_path / "sr.png"
    code = main(["infer", "--ckpt", str(trained / "model.ckpt"), "--image", str(src),
                 "--out-image", str(out_png), "--sx", "2", "--sy", "2", "-T", "0"])
    assert code == EXIT_OK
    img = load_image(src)
    ref = tmp_path / "ref.png"
    save_image(bilinear_upsample(img, img.height * 2, img.width * 2), ref)
    assert hashlib.sha256(out_png.read_bytes()).hexdigest() == \
        hashlib.sha256(ref.read_bytes()).hexdigest()


def test_infer_fractional_scale_shape(trained, data_dir, tmp_path, capsys):
    src = sorted(data_dir.glob("*.png"))[0]  # 40x40
    out_png = tmp_path / "sr.png"
    code = main(["infer", "--ckpt", str(trained / "model.ckpt"), "--image", str(src),
                 "--out-image", str(out_png), "--sx", "2.5", "--sy", "2.5", "-T", "2"])
    assert code == EXIT_OK
    sr = load_image(out_png)
    assert (sr.height, sr.width) == (100, 100)


def test_infer_warns_beyond_t_max(trained, data_dir, tmp_path, capsys):
    src = sorted(data_dir.glob("*.png"))[0]
    code = main(["infer", "--ckpt", str(trained / "model.ckpt"), "--image", str(src),
                 "--out-image", str(tmp_path / "x.png"), "-T", "6"])
    assert code == EXIT_OK
    assert "exceeds trained T_max" in capsys.readouterr().err


def test_infer_deterministic(trained, data_dir, tmp_path):
    src = sorted(data_dir.glob("*.png"))[1]
    outs = []
    for name in ("a.png", "b.png"):
        code = main(["infer", "--ckpt", str(trained / "model.ckpt"), "--image", str(src),
                     "--out-image", str(tmp_path / name), "-T", "3"])
        assert code == EXIT_OK
        outs.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
    assert outs[0] == outs[1]


def test_eval_runs(trained, data_dir, capsys):
    code = main(["eval", "--ckpt", str(trained / "model.ckpt"), "--data", str(data_dir),
                 "--scale", "2", "-T", "2"])
    assert code == EXIT_OK
    assert "mean_psnr" in capsys.readouterr().out


def test_sweep_groups_and_reproducible(trained, data_dir, tmp_path):
    args = ["sweep", "--ckpt", str(trained / "model.ckpt"), "--data", str(data_dir),
            "--t-list", "1,2,4", "--scale", "2"]
    code = main(args + ["--out", str(tmp_path / "r1")])
    assert code == EXIT_OK
    code = main(args + ["--out", str(tmp_path / "r2")])
    assert code == EXIT_OK
    csv1 = (tmp_path / "r1" / "sweep.csv").read_text()
    csv2 = (tmp_path / "r2" / "sweep.csv").read_text()
    assert csv1 == csv2
    ts = {line.split(",")[4] for line in csv1.strip().split("\n")[1:]}
    assert ts == {"1", "2", "4"}


def test_sweep_strict_fails_on_flat_curve(trained, data_dir, tmp_path):
    # zero the amplitude weights so the curve is flat
    from rfsr.trainer import load_checkpoint, save_checkpoint

    model, header = load_checkpoint(trained / "model.ckpt")
    for name, p in model.head.parameters():
        if name.startswith("head.ha"):
            p.data[...] = 0.0
    zeroed = tmp_path / "zeroed.ckpt"
    save_checkpoint(model, zeroed)
    code = main(["sweep", "--ckpt", str(zeroed), "--data", str(data_dir),
                 "--t-list", "1,2,4", "--strict", "--out", str(tmp_path)])
    assert code == EXIT_ASSERT


def test_sweep_missing_ckpt_exits_3(data_dir, tmp_path):
    code = main(["sweep", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(data_dir),
                 "--out", str(tmp_path)])
    assert code == EXIT_MISSING


def test_usage_error_exit_2():
    assert main(["train", "--definitely-not-a-flag"]) == EXIT_USAGE


def test_ablate_missing_checkpoint_exits_3(data_dir, tmp_path):
    code = main(["ablate", "t-max", "--ckpt", f"4={tmp_path/'nope.ckpt'}",
                 "--data", str(data_dir), "--out", str(tmp_path)])
    assert code == EXIT_MISSING


def test_serve_missing_ckpt_exits_3(tmp_path):
    assert main(["serve", "--ckpt", str(tmp_path / "none.ckpt")]) == EXIT_MISSING


def test_train_profile_key(tmp_path, data_dir):
    code = main(["train", "--set", 'profile="accept_small"',
                 "--set", "trainer.epochs=1", "--set", "trainer.steps_per_epoch=1",
                 "--set", "trainer.batch_size=2", "--set", "trainer.queries_per_image=8",
                 "--set", "trainer.crop_base=10", "--set", "head.T_max=2",
                 "--set", "head.layers=1", "--set", "head.model_width=8",
                 "--set", "head.key_dim=4", "--set", "encoder.channels=4",
                 "--set", "encoder.residual_blocks=1", "--set", "trainer.t_max=2",
                 "--data", str(data_dir), "--out", str(tmp_path)])
    assert code == EXIT_OK
    effective = json.loads((tmp_path / "effective_config.json").read_text())
    assert effective["profile"] == "accept_small"
    assert effective["head"]["T_max"] == 2


def test_checkpoint_records_rng_state(trained):
    from rfsr.trainer import load_checkpoint

    _, header = load_checkpoint(trained / "model.ckpt")
    assert header["rng_state"] is not None
    assert header["rng_state"]["bit_generator"] == "PCG64"
