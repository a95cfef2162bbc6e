"""Acceptance suite: one group of tests per criterion.

Run ``pytest tests/test_acceptance.py`` to get one PASS/FAIL line per
criterion in the terminal summary. Criterion 8 trains the toy models and
takes roughly half an hour on one CPU core.
"""

import itertools
import time

import numpy as np
import pytest
import torch

from oracles import (
    all_subsets,
    brute_average_precision,
    brute_confusion,
    brute_iou,
    brute_kappa,
    brute_topk,
    central_difference,
    dense_filter,
    rel_error,
    sigmoid,
)
from wcdnet import cli
from wcdnet.config import CrfParams, toy_config
from wcdnet.crf import BACKEND, get_filter, mean_field_refine, pass_messages, window_weights
from wcdnet.data.dataset import synthetic_dataset
from wcdnet.data.manifest import load_dataset, write_synthetic
from wcdnet.data.preparation import combine_labels, patch_pair, split_label
from wcdnet.data.synthetic import SyntheticSpec
from wcdnet.losses import conditional_mask_loss, image_label_loss
from wcdnet.metrics import (
    ConfusionCounts,
    average_precision,
    confusion,
    iou,
    kappa_dice_totalacc,
    miou,
    read_report_json,
    topk_accuracy,
)
from wcdnet.model import load_checkpoint
from wcdnet.model.remap import remap
from wcdnet.train import evaluate, finetune_stage2, stage2_model, train_stage1


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def _t(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


# 1 ---------------------------------------------------------------------------

C1 = criterion(1, "remapping invariants on 1000 random 8x8 masks")


@C1
@pytest.mark.parametrize("alpha", [16.0, 32.0])
def test_c1_remap_suite(alpha, note):
    t0 = time.perf_counter()
    rng = np.random.default_rng(int(alpha))
    raw = rng.random((1000, 8, 8)) * rng.uniform(0.01, 100, (1000, 1, 1))
    out = remap(_t(raw), alpha).numpy()
    lo, hi = sigmoid(-alpha / 2), sigmoid(alpha / 2)
    assert out.min() >= lo - 1e-9 and out.max() <= hi + 1e-9
    flat_raw, flat_out = raw.reshape(1000, -1), out.reshape(1000, -1)
    rows = np.arange(1000)
    assert np.array_equal(flat_out[rows, flat_raw.argmin(1)], np.full(1000, remap(_t([[0.0, 1.0]]), alpha)[0, 0].item()))
    np.testing.assert_allclose(flat_out[rows, flat_raw.argmin(1)], lo, rtol=1e-12, atol=0)
    np.testing.assert_allclose(flat_out[rows, flat_raw.argmax(1)], hi, rtol=1e-12, atol=0)
    order = np.argsort(flat_raw, axis=1)
    assert (np.diff(np.take_along_axis(flat_out, order, 1), axis=1) >= 0).all()
    for a, b in itertools.product((0.5, 3.0, 100.0), (0.0, 7.0)):
        np.testing.assert_allclose(remap(_t(a * raw + b), alpha).numpy(), out, atol=1e-6, rtol=0)
    const = remap(_t(np.full((1000, 8, 8), 5.0)), alpha)
    assert torch.equal(const, torch.full_like(const, 0.5))
    elapsed = time.perf_counter() - t0
    note(f"alpha={alpha:g}: {elapsed:.2f}s")
    assert elapsed < 10


# 2 ---------------------------------------------------------------------------

C2 = criterion(2, "analytic gradients match central finite differences")


@C2
def test_c2_remap_gradient():
    rng = np.random.default_rng(21)
    for _ in range(5):
        x0 = rng.random((8, 8)) * 3 + 0.1
        w = rng.standard_normal((8, 8))
        x = _t(x0[None]).requires_grad_()
        (remap(x, 32.0)[0] * _t(w)).sum().backward()
        fd = central_difference(lambda v: float((remap(_t(v[None]), 32.0)[0] * _t(w)).sum()), x0)
        assert rel_error(x.grad[0].numpy(), fd) < 1e-4


@C2
def test_c2_loss_gradients():
    rng = np.random.default_rng(22)
    pred = rng.uniform(0.05, 0.95, (12, 12))
    gt = (rng.random((12, 12)) > 0.5).astype(float)
    x = _t(pred).requires_grad_()
    conditional_mask_loss(x, _t(gt)).backward()
    fd = central_difference(lambda v: conditional_mask_loss(_t(v), _t(gt)).item(), pred)
    assert rel_error(x.grad.numpy(), fd) < 1e-5

    probs = rng.uniform(0.05, 1.0, (4, 6))
    probs /= probs.sum(1, keepdims=True)
    target = np.eye(6)[[1, 0, 5, 2]]
    x = _t(probs).requires_grad_()
    image_label_loss(x, _t(target)).backward()
    fd = central_difference(lambda v: image_label_loss(_t(v), _t(target)).item(), probs)
    assert rel_error(x.grad.numpy(), fd) < 1e-5


@C2
def test_c2_mean_field_gradient(note):
    t0 = time.perf_counter()
    rng = np.random.default_rng(23)
    mask = rng.uniform(0.05, 0.95, (12, 12))
    guide = rng.random((3, 12, 12))
    w = rng.standard_normal((12, 12))
    params = CrfParams(iterations=2, bilateral_sigma_color=0.2)

    def f(m):
        return (mean_field_refine(m, guide, params) * _t(w)).sum()

    m = _t(mask).requires_grad_()
    f(m).backward()
    fd = central_difference(lambda v: float(f(_t(v))), mask)
    assert rel_error(m.grad.numpy(), fd) < 1e-3
    elapsed = time.perf_counter() - t0
    note(f"mean-field check {elapsed:.1f}s")
    assert elapsed < 120


# 3 ---------------------------------------------------------------------------

C3 = criterion(3, "metrics equal brute-force enumeration; hand examples exact")


@C3
def test_c3_hand_examples():
    kappa, dice, acc = kappa_dice_totalacc(ConfusionCounts(40, 40, 10, 10))
    assert (round(kappa, 12), dice, acc) == (0.6, 0.8, 0.8)
    assert round(average_precision([0.9, 0.8, 0.7], [1, 0, 1]), 12) == round(5 / 6, 12)
    assert round(average_precision([0.9, 0.8, 0.7], [1, 0, 1]), 4) == 0.8333


@C3
def test_c3_oracle_equivalence():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = int(rng.integers(1, 30))
        pred, gt = rng.random(n) < rng.random(), rng.random(n) < rng.random()
        counts = confusion(pred, gt)
        tp, tn, fp, fn = brute_confusion(pred, gt)
        assert (counts.tp, counts.tn, counts.fp, counts.fn) == (tp, tn, fp, fn)
        assert iou(counts) == brute_iou(tp, fp, fn)
        assert miou(counts) == (brute_iou(tp, fp, fn) + brute_iou(tn, fn, fp)) / 2
        kappa, dice, acc = kappa_dice_totalacc(counts)
        p_o, p_e = brute_kappa(tp, tn, fp, fn)
        assert acc == pytest.approx(p_o, abs=1e-12)
        expected = (1.0 if p_o == 1 else 0.0) if abs(p_e - 1) < 1e-15 else (p_o - p_e) / (1 - p_e)
        assert kappa == pytest.approx(expected, abs=1e-12)
        assert dice == (1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
        scores, labels = rng.integers(0, 5, n) / 4, rng.random(n) < 0.5
        if labels.any():
            assert average_precision(scores, labels) == pytest.approx(brute_average_precision(scores, labels), abs=1e-12)
        k_classes = int(rng.integers(2, 7))
        probs = rng.integers(0, 3, (n, k_classes)).astype(float)
        lab = rng.integers(0, k_classes, n)
        k = int(rng.integers(1, k_classes + 1))
        assert topk_accuracy(probs, lab, k) == brute_topk(probs, lab, k)


# 4 ---------------------------------------------------------------------------

C4 = criterion(4, "conditional mask loss gating is exact")


@C4
def test_c4_gating():
    rng = np.random.default_rng(4)
    for shape in [(1, 1), (5, 7), (12, 12), (3, 8, 8)]:
        pred = _t(rng.random(shape)).requires_grad_()
        loss = conditional_mask_loss(pred, torch.zeros(shape, dtype=torch.float64))
        assert loss.item() == 0.0
        loss.backward()
        assert torch.equal(pred.grad, torch.zeros_like(pred))


# 5 ---------------------------------------------------------------------------

C5 = criterion(5, "truncated CRF filtering equals dense filtering; marginals normalised")


@C5
@pytest.mark.parametrize("sigma_color", [None, 0.15])
def test_c5_truncated_equals_dense(sigma_color):
    rng = np.random.default_rng(5)
    q, guide = rng.random((2, 16, 16)), rng.random((3, 16, 16))
    dense = dense_filter(q, guide, 3.0, sigma_color)
    w = window_weights(_t(guide)[None], 16, 3.0, sigma_color)
    np.testing.assert_allclose(pass_messages(_t(q)[None], w, 16)[0].numpy(), dense, atol=1e-6, rtol=0)
    backends = ("python", "compiled") if BACKEND == "compiled" else ("python",)
    for backend in backends:
        np.testing.assert_allclose(get_filter(backend)(q, guide, 3.0, sigma_color or 0.0, 16), dense, atol=1e-6, rtol=0)


@C5
def test_c5_normalised_every_iteration():
    rng = np.random.default_rng(55)
    hist = []
    mean_field_refine(rng.random((2, 16, 16)), rng.random((2, 3, 16, 16)), CrfParams(iterations=10), history=hist)
    assert len(hist) == 10
    for q in hist:
        assert torch.max(torch.abs(q.sum(dim=1) - 1)).item() < 1e-6


# 6 ---------------------------------------------------------------------------

C6 = criterion(6, "600x800 / 122 px / 6x8 grid patching")


@C6
def test_c6_patching():
    img = np.zeros((600, 800, 3), np.uint8)
    patches = patch_pair(img, img, 122, (6, 8))
    assert len(patches) == 48
    tops = sorted({p.top for *_, p in patches})
    lefts = sorted({p.left for *_, p in patches})
    assert tops == [0, 96, 191, 287, 382, 478]
    assert lefts == [0, 97, 194, 291, 387, 484, 581, 678]
    cover = np.zeros((600, 800), bool)
    for *_, p in patches:
        cover[p.slices] = True
    assert cover.all()


# 7 ---------------------------------------------------------------------------

C7 = criterion(7, "K=5 label combination: 31 change labels + unchanged, bijective")


@C7
def test_c7_label_combination():
    ids = [combine_labels(s, 5) for s in all_subsets(5)]
    assert len(ids) == 32 == len(set(ids))
    assert ids.count(0) == 1
    assert sorted(i for i in ids if i) == list(range(1, 32))
    assert all(split_label(combine_labels(s, 5)) == list(s) for s in all_subsets(5))


# 8 ---------------------------------------------------------------------------

C8 = criterion(8, "toy end-to-end reproduction (stage 1, CRF finetune, no-residual variant)")

TOY_EPOCHS = 60
FINETUNE_EPOCHS = 5


def toy_experiment_config():
    # flips + brightness jitter; without them the 360 training pairs overfit
    return toy_config(max_epochs=TOY_EPOCHS, augment=True, early_stop_patience=TOY_EPOCHS)


@pytest.fixture(scope="module")
def toy_data():
    train = synthetic_dataset(SyntheticSpec(num_pairs=400, seed=1, unchanged_fraction=0.1, distractor_count=3))
    test = synthetic_dataset(SyntheticSpec(num_pairs=100, seed=2, unchanged_fraction=0.1, distractor_count=3))
    return train, test


@pytest.fixture(scope="module")
def stage1(toy_data, tmp_path_factory):
    train, _ = toy_data
    t0 = time.perf_counter()
    result = train_stage1(train, toy_experiment_config(), tmp_path_factory.mktemp("toy_stage1"))
    return result, time.perf_counter() - t0


@pytest.mark.slow
@C8
def test_c8_stage1(stage1, toy_data, note):
    result, seconds = stage1
    rep = evaluate(result.best_checkpoint, toy_data[1])
    note(f"stage 1: {seconds / 60:.1f} min, top-1 {rep.top1:.3f}, change IoU {rep.miou_change_class:.3f}")
    assert seconds <= 30 * 60
    assert rep.top1 >= 0.80
    assert rep.miou_change_class >= 0.25


@pytest.mark.slow
@C8
def test_c8_stage2_crf_finetune(stage1, toy_data, tmp_path_factory, note):
    result, _ = stage1
    train, test = toy_data
    cfg = toy_experiment_config()
    cfg.train.max_epochs = FINETUNE_EPOCHS
    ft = finetune_stage2(result.best_checkpoint, train, cfg, tmp_path_factory.mktemp("toy_stage2"))
    before = evaluate(result.best_checkpoint, test).miou_change_class
    after = evaluate(ft.best_checkpoint, test)
    note(f"stage 2: change IoU {after.miou_change_class:.3f} (stage 1 {before:.3f}), top-1 {after.top1:.3f}")
    assert after.miou_change_class >= before - 0.02


@pytest.mark.slow
@C8
def test_c8_no_residual_variant(stage1, toy_data, tmp_path_factory, note):
    result, _ = stage1
    train, test = toy_data
    cfg = toy_experiment_config()
    cfg.model.residual_block_enabled = False
    nores = train_stage1(train.changed_only(), cfg, tmp_path_factory.mktemp("toy_nores"))
    # compared on changed test pairs: the variant cannot express "unchanged"
    changed = test.changed_only()
    full_iou = evaluate(result.best_checkpoint, changed).miou_change_class
    nores_iou = evaluate(nores.best_checkpoint, changed).miou_change_class
    note(f"no-residual change IoU {nores_iou:.3f} vs full {full_iou:.3f} on changed pairs")
    assert nores_iou >= full_iou - 0.10


# 9 ---------------------------------------------------------------------------

C9 = criterion(9, "stage-1 to stage-2 weight transfer bitwise; deterministic reruns identical")


def _tiny_cfg(epochs=2):
    cfg = toy_config(max_epochs=epochs, batch_size=4, val_fraction=0.25)
    cfg.model.input_size = (32, 32)
    return cfg


@pytest.fixture(scope="module")
def tiny_data():
    return synthetic_dataset(SyntheticSpec(num_pairs=12, image_size=32, seed=9))


@C9
def test_c9_weight_transfer(tiny_data, tmp_path):
    result = train_stage1(tiny_data, _tiny_cfg(), tmp_path)
    params = load_checkpoint(result.best_checkpoint)["params"]
    model, _ = stage2_model(result.best_checkpoint)
    state = model.state_dict()
    shared = [k for k in state if not k.startswith("crf.")]
    assert sorted(shared) == sorted(params)
    for k in shared:
        assert np.array_equal(state[k].numpy(), params[k]), k


@C9
def test_c9_deterministic_reruns(tiny_data, tmp_path):
    runs = [train_stage1(tiny_data, _tiny_cfg(), tmp_path / f"r{i}") for i in range(2)]
    a, b = (load_checkpoint(r.last_checkpoint)["params"] for r in runs)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert [r["loss"] for r in runs[0].history] == [r["loss"] for r in runs[1].history]
    fa = finetune_stage2(runs[0].best_checkpoint, tiny_data, _tiny_cfg(1), tmp_path / "f0")
    fb = finetune_stage2(runs[1].best_checkpoint, tiny_data, _tiny_cfg(1), tmp_path / "f1")
    a, b = (load_checkpoint(r.last_checkpoint)["params"] for r in (fa, fb))
    assert all(np.array_equal(a[k], b[k]) for k in a)


# 10 --------------------------------------------------------------------------

C10 = criterion(10, "CLI contract: exit codes, dataset round-trip, report artifacts")


@C10
def test_c10_cli_contract(tmp_path, note, capsys):
    t0 = time.perf_counter()
    ds = tmp_path / "ds"
    spec = tmp_path / "spec.yaml"
    spec.write_text("num_pairs: 6\nimage_size: 32\nseed: 2\nunchanged_fraction: 0.2\n")
    assert cli.run(["gen-data", "--spec", str(spec), "--out", str(ds)]) == 0
    direct = synthetic_dataset(SyntheticSpec(num_pairs=6, image_size=32, seed=2, unchanged_fraction=0.2))
    loaded = load_dataset(ds)
    assert np.array_equal(loaded.current, direct.current) and np.array_equal(loaded.masks, direct.masks)

    from wcdnet.config import save_config

    cfg = _tiny_cfg(1)
    save_config(cfg, tmp_path / "cfg.yaml")
    run = tmp_path / "run"
    assert cli.run(["train", "--config", str(tmp_path / "cfg.yaml"), "--data", str(ds), "--out", str(run)]) == 0
    assert cli.run(["report", "--run", str(run)]) == 0
    for name in ("metrics.json", "metrics.csv", "panels.png", "training.png"):
        assert (run / "report" / name).stat().st_size > 0
    assert read_report_json(run / "report" / "metrics.json").num_pairs == 6

    assert cli.run(["eval", "--ckpt", str(tmp_path / "missing.ckpt"), "--data", str(ds)]) == 2
    assert "missing.ckpt" in capsys.readouterr().err
    assert cli.run(["train", "--data", str(ds), "--bogus"]) == 1
    assert cli.run(["eval", "--ckpt", str(run / "stage1_best.ckpt"), "--data", str(tmp_path / "none")]) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"junk")
    assert cli.run(["eval", "--ckpt", str(bad), "--data", str(ds)]) == 2
    elapsed = time.perf_counter() - t0
    note(f"{elapsed:.1f}s")
    assert elapsed < 60
