import json
import math

import numpy as np
import pytest

from rfsr import experiments as ex
from rfsr.corpus import synthetic_corpus
from rfsr.encoder import EncoderConfig
from rfsr.heads import HeadConfig
from rfsr.imaging import ImageBuffer, bilinear_upsample, psnr
from rfsr.model import SRModel
from rfsr.trainer import TrainConfig, save_checkpoint


def _model(seed=0, head_kind="recurrent", t_max=4, pe="relative"):
    enc = EncoderConfig(channels=6, residual_blocks=1)
    head = HeadConfig(T_max=t_max, layers=2, model_width=12, key_dim=6,
                      pe_variant=pe, head_kind=head_kind)
    return SRModel(enc, head, seed=seed)


@pytest.fixture(scope="module")
def dataset():
    return [(name, img) for name, img in synthetic_corpus(size=32)][:4]


def _zero_amplitudes(model):
    for name, p in model.head.parameters():
        if ".ha." in name or name.startswith(("head.ha", "fixed.ha")):
            p.data[...] = 0.0


# -- eval pairs ----------------------------------------------------------------

def test_eval_pair_integer_scale(dataset):
    _, img = dataset[0]
    lr, gt = ex.eval_pair(img, 2.0)
    assert (lr.height, lr.width) == (16, 16)
    assert gt is img


def test_eval_pair_non_integer_pseudo_gt(dataset):
    _, img = dataset[0]  # 32x32
    lr, gt = ex.eval_pair(img, 1.7)
    assert (lr.height, lr.width) == (18, 18)
    assert (gt.height, gt.width) == (int(18 * 1.7), int(18 * 1.7))
    assert gt is not img


# -- sweeps ----------------------------------------------------------------------

def test_sweep_row_count_and_order(dataset):
    model = _model(seed=1)
    res = ex.sweep_T(model, dataset, 2.0, [4, 1, 2], model_id="m", dataset_id="d")
    assert [r.t for r in res.rows] == [1, 2, 4]
    assert all(len(r.per_image) == len(dataset) for r in res.rows)


def test_sweep_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        ex.sweep_T(_model(), [], 2.0, [1])


def test_zeroed_model_sweep_equals_bilinear(dataset):
    model = _model(seed=2)
    _zero_amplitudes(model)
    res = ex.sweep_T(model, dataset, 2.0, [1, 2, 4])
    for name, img in dataset:
        lr, gt = ex.eval_pair(img, 2.0)
        base = bilinear_upsample(lr, gt.height, gt.width).clamped()
        want = psnr(base, gt)
        for row in res.rows:
            assert row.per_image[name] == pytest.approx(want, abs=1e-12)


def test_sweep_mean_is_two_pass_mean(dataset):
    res = ex.sweep_T(_model(seed=3), dataset, 2.0, [1, 2])
    for row in res.rows:
        vals = list(row.per_image.values())
        total = 0.0
        for v in vals:
            total += v
        assert abs(row.mean_psnr - total / len(vals)) <= 1e-9


def test_sweep_csv_deterministic(dataset):
    model = _model(seed=4)
    a = ex.sweep_csv(ex.sweep_T(model, dataset, 2.0, [1, 2]))
    b = ex.sweep_csv(ex.sweep_T(model, dataset, 2.0, [1, 2]))
    assert a == b
    assert "cumulative_seconds" not in a  # timing lives in the sidecar


def test_sweep_timing_monotone(dataset):
    model = _model(seed=5)
    res = ex.sweep_T(model, dataset, 2.0, [1, 2, 4])
    for name, _ in dataset:
        secs = [row.seconds_per_image[name] for row in res.rows]
        assert secs == sorted(secs)


def test_write_sweep_files(tmp_path, dataset):
    res = ex.sweep_T(_model(seed=6), dataset, 2.0, [1, 2])
    paths = ex.write_sweep(res, tmp_path, stem="s")
    assert paths["csv"].exists() and paths["summary"].exists() and paths["timing"].exists()
    summary = json.loads(paths["summary"].read_text())
    assert summary["psnr_border_crop"] == "none"
    assert len(summary["rows"]) == 2


# -- head comparison --------------------------------------------------------------

def test_compare_heads_full_set_strategies_coincide(dataset):
    rec = _model(seed=7, t_max=4)
    fix = _model(seed=8, head_kind="fixed_fc", t_max=4)
    report = ex.compare_heads(rec, fix, dataset, 2.0, [1, 2, 4])
    top = 4
    rand_top = report["fixed"]["random"].row(top).per_image
    desc_top = report["fixed"]["descending"].row(top).per_image
    for name in rand_top:
        assert rand_top[name] == pytest.approx(desc_top[name], abs=1e-9)
    assert report["random_draws"] == 100


def test_compare_heads_k_mismatch(dataset):
    rec = _model(seed=9, t_max=4)
    fix = _model(seed=10, head_kind="fixed_fc", t_max=8)
    with pytest.raises(ValueError, match="does not match"):
        ex.compare_heads(rec, fix, dataset, 2.0, [1, 2, 4])


def test_descending_mask_topk():
    norms = np.array(
        [[[0.5]], [[0.9]], [[0.1]]]
    )  # (K=3, 1, 1)
    mask = ex._descending_mask(norms, 2)
    assert mask[:, 0, 0].tolist() == [True, True, False]


# -- ablations ---------------------------------------------------------------------

def _save(tmp_path, name, model, cfg):
    p = tmp_path / name
    save_checkpoint(model, p, train_cfg=cfg)
    return p


def _cfg(**kw):
    base = dict(t_max=4, epochs=1, steps_per_epoch=1, batch_size=2,
                queries_per_image=8, seed=0, crop_base=10, scale_range=(1.0, 2.0))
    base.update(kw)
    return TrainConfig(**base)


def test_ablate_variable_length_structure(tmp_path, dataset):
    mv = _model(seed=11, t_max=4)
    mf = _model(seed=12, t_max=4)
    pv = _save(tmp_path, "v.ckpt", mv, _cfg(variable_length=True))
    pf = _save(tmp_path, "f.ckpt", mf, _cfg(variable_length=False))
    rep = ex.ablate_variable_length(pv, pf, dataset, scale=2.0, num_images=2)
    assert len(rep["variable"].rows) == 8  # 2 * T_max points
    assert len(rep["fixed_length"].rows) == 8
    assert isinstance(rep["variable_better_at_half"], bool)
    assert rep["max_drop_fixed_length"] >= 0.0


def test_ablate_variable_length_config_mismatch(tmp_path, dataset):
    mv = _model(seed=13, t_max=4)
    mf = _model(seed=14, t_max=8)
    pv = _save(tmp_path, "v2.ckpt", mv, _cfg(variable_length=True))
    pf = _save(tmp_path, "f2.ckpt", mf, _cfg(variable_length=False, t_max=8))
    with pytest.raises(ValueError, match="differ"):
        ex.ablate_variable_length(pv, pf, dataset)


def test_ablate_t_max_matrix(tmp_path, dataset):
    ckpts = {}
    for t_max in (2, 4):
        ckpts[t_max] = [
            _save(tmp_path, f"t{t_max}s{s}.ckpt", _model(seed=20 + s, t_max=t_max),
                  _cfg(t_max=t_max))
            for s in range(2)
        ]
    rep = ex.ablate_T_max(ckpts, dataset[:2], [2, 4], scale=2.0)
    assert set(rep["matrix"]) == {2, 4}
    assert set(rep["matrix"][2]) == {2, 4}
    assert set(rep["diagonal_flags"]) == {2, 4}


def test_ablate_t_max_missing_checkpoint(dataset):
    with pytest.raises(ValueError, match="no checkpoints"):
        ex.ablate_T_max({4: []}, dataset, [4])


def test_ablate_position_encoding_table(tmp_path, dataset):
    ckpts = {}
    for variant in ("none", "relative"):
        ckpts[variant] = [
            _save(tmp_path, f"{variant}.ckpt", _model(seed=30, pe=variant), _cfg())
        ]
    rep = ex.ablate_position_encoding(ckpts, dataset[:2], [1, 2, 4], scale=2.0)
    assert set(rep["table"]) == {"none", "relative"}
    assert len(rep["table"]["none"]) == 3
    assert "relative_ge_none_at_small_t" in rep["flags"]


def test_ablate_position_encoding_wrong_variant(tmp_path, dataset):
    ckpts = {"none": [_save(tmp_path, "x.ckpt", _model(seed=31, pe="relative"), _cfg())]}
    with pytest.raises(ValueError, match="expected"):
        ex.ablate_position_encoding(ckpts, dataset[:1], [1])


def test_max_adjacent_drop():
    assert ex.max_adjacent_drop({1: 10.0, 2: 12.0, 3: 11.0, 4: 11.5}) == pytest.approx(1.0)
    assert ex.max_adjacent_drop({1: 10.0}) == 0.0


def test_spearman_helper():
    assert ex.spearman_rho([1, 2, 4, 8], [10, 11, 12, 13]) == pytest.approx(1.0)
    assert ex.spearman_rho([1, 2, 4, 8], [13, 12, 11, 10]) == pytest.approx(-1.0)
