import warnings

import numpy as np
import pytest
import torch

from oracles import central_difference, dense_filter, dense_mean_field, rel_error
from wcdnet.config import CrfParams
from wcdnet.crf import (
    BACKEND,
    CrfRnn,
    get_filter,
    mean_field,
    mean_field_numpy,
    mean_field_refine,
    pass_messages,
    postprocess_crf,
    window_weights,
)


def _two_region(size=32, seed=0):
    """Left half dark, right half bright guide; clean step mask plus holes."""
    rng = np.random.default_rng(seed)
    guide = np.zeros((3, size, size))
    guide[:, :, size // 2 :] = 0.8
    guide += rng.normal(0, 0.01, guide.shape)
    clean = np.zeros((size, size))
    clean[:, size // 2 :] = 1.0
    noisy = np.where(clean > 0, 0.8, 0.2)
    holes = rng.choice(size * size, 40, replace=False)
    noisy.flat[holes] = 1 - noisy.flat[holes]
    return guide, clean, noisy


def _torch_filter(q, guide, sigma_s, sigma_c, r):
    w = window_weights(torch.as_tensor(guide)[None], r, sigma_s, sigma_c)
    return pass_messages(torch.as_tensor(q)[None], w, r)[0].numpy()


@pytest.mark.parametrize("sigma_c", [None, 0.2])
def test_truncated_equals_dense_full_radius(rng, sigma_c):
    q = rng.random((2, 16, 16))
    guide = rng.random((3, 16, 16))
    dense = dense_filter(q, guide, 2.5, sigma_c)
    np.testing.assert_allclose(_torch_filter(q, guide, 2.5, sigma_c, 16), dense, atol=1e-6, rtol=0)
    for backend in ("python", "compiled") if BACKEND == "compiled" else ("python",):
        out = get_filter(backend)(q, guide, 2.5, sigma_c or 0.0, 16)
        np.testing.assert_allclose(out, dense, atol=1e-6, rtol=0)


def test_backends_agree_with_truncation(rng):
    q = rng.random((2, 20, 17))
    guide = rng.random((3, 20, 17))
    ref = _torch_filter(q, guide, 1.5, 0.1, 4)
    for backend in ("python", "compiled") if BACKEND == "compiled" else ("python",):
        np.testing.assert_allclose(get_filter(backend)(q, guide, 1.5, 0.1, 4), ref, atol=1e-12)


def test_unit_weights_zero_pairwise_is_identity(rng):
    mask = rng.random((10, 10))
    params = CrfParams(spatial_weight=0.0, bilateral_weight=0.0, iterations=1)
    out = mean_field_refine(mask, rng.random((3, 10, 10)), params).numpy()
    np.testing.assert_allclose(out, np.clip(mask, 1e-6, 1 - 1e-6), atol=1e-12)


def test_uniform_half_is_fixed_point():
    guide = np.full((3, 12, 12), 0.4)
    out = mean_field_refine(np.full((12, 12), 0.5), guide, CrfParams(iterations=5)).numpy()
    np.testing.assert_allclose(out, 0.5, atol=1e-12)
    out_np = postprocess_crf(np.full((12, 12), 0.5), guide)
    np.testing.assert_allclose(out_np, 0.5, atol=1e-12)


def test_fills_holes_closer_to_step():
    guide, clean, noisy = _two_region()
    params = CrfParams(spatial_weight=3.0, bilateral_weight=5.0, iterations=5, kernel_truncation_radius=32)
    refined = mean_field_refine(noisy, guide, params).numpy()
    oracle = dense_mean_field(noisy, guide, 3.0, 5.0, params.compatibility, 1.0, 3.0, 0.1, 5)
    np.testing.assert_allclose(refined, oracle, atol=1e-6)
    assert np.abs(oracle - clean).sum() < np.abs(noisy - clean).sum()
    # the holes themselves end up on the right side of 0.5
    assert np.array_equal(oracle >= 0.5, clean > 0)


def test_marginals_normalised_every_iteration(rng):
    hist = []
    mean_field_refine(rng.random((2, 16, 16)), rng.random((2, 3, 16, 16)), CrfParams(iterations=6), history=hist)
    assert len(hist) == 6
    for q in hist:
        assert torch.max(torch.abs(q.sum(dim=1) - 1)) < 1e-6


def test_numpy_engine_matches_torch_engine(rng):
    mask, guide = rng.random((14, 15)), rng.random((3, 14, 15))
    params = CrfParams(iterations=3)
    ref = mean_field_refine(mask, guide, params).numpy()
    for backend in ("python", "compiled") if BACKEND == "compiled" else ("python",):
        np.testing.assert_allclose(mean_field_numpy(mask, guide, params, backend), ref, atol=1e-10)


def test_postprocess_range_and_batch(rng):
    masks = (rng.random((3, 12, 12)) > 0.5).astype(float)
    out = postprocess_crf(masks, rng.random((3, 3, 12, 12)))
    assert out.shape == (3, 12, 12)
    assert out.min() >= 0 and out.max() <= 1


def test_gradients_match_finite_differences(rng):
    mask = rng.uniform(0.05, 0.95, (12, 12))
    guide = rng.random((3, 12, 12))
    w = rng.standard_normal((12, 12))
    compat = [[0.0, 1.0], [1.0, 0.0]]

    def f(m, ws=1.5, wb=2.0):
        out = mean_field(
            torch.as_tensor(m)[None, None],
            torch.as_tensor(guide)[None],
            spatial_weight=ws,
            bilateral_weight=wb,
            compatibility=compat,
            spatial_sigma=1.0,
            bilateral_sigma_space=3.0,
            bilateral_sigma_color=0.2,
            iterations=2,
            radius=6,
        )
        return (out[0, 0] * torch.as_tensor(w)).sum()

    m = torch.as_tensor(mask).requires_grad_()
    ws = torch.tensor(1.5, dtype=torch.float64, requires_grad=True)
    wb = torch.tensor(2.0, dtype=torch.float64, requires_grad=True)
    f(m, ws, wb).backward()
    fd_mask = central_difference(lambda v: float(f(v)), mask)
    assert rel_error(m.grad.numpy(), fd_mask) < 1e-3
    fd_ws = central_difference(lambda v: float(f(mask, ws=float(v[0]))), np.array([1.5]))
    fd_wb = central_difference(lambda v: float(f(mask, wb=float(v[0]))), np.array([2.0]))
    assert rel_error(ws.grad.numpy(), fd_ws[0]) < 1e-3
    assert rel_error(wb.grad.numpy(), fd_wb[0]) < 1e-3


def test_crf_rnn_layer_is_trainable():
    layer = CrfRnn(CrfParams(iterations=2)).double()
    mask = torch.rand(2, 1, 10, 10, dtype=torch.float64)
    out = layer(mask, torch.rand(2, 3, 10, 10, dtype=torch.float64))
    out.sum().backward()
    assert layer.spatial_weight.grad is not None and layer.compatibility.grad is not None
    assert layer.params().iterations == 2


def test_no_nan_for_long_runs(rng):
    out = mean_field_refine(rng.random((16, 16)), rng.random((3, 16, 16)), CrfParams(iterations=50))
    assert torch.isfinite(out).all()
    out = postprocess_crf(rng.random((16, 16)), rng.random((3, 16, 16)), CrfParams(iterations=50))
    assert np.isfinite(out).all()


def test_invalid_inputs():
    with pytest.raises(ValueError):
        mean_field_refine(np.full((4, 4), np.nan), np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        mean_field_refine(np.zeros((4, 4)), np.zeros((3, 5, 4)))
    with pytest.raises(ValueError):
        CrfParams(iterations=0).validate()
    with pytest.raises(ValueError):
        CrfParams(spatial_sigma=0).validate()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        CrfParams(bilateral_sigma_space=5.0, kernel_truncation_radius=3).validate()
    assert any("truncation" in str(w.message) for w in caught)
