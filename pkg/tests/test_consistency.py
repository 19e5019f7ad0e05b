from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segtricks.consistency import (
    CropPolicy,
    CropSamplingError,
    consistency_step,
    equivariance_grad,
    equivariance_loss,
    sample_crop,
)
from segtricks.filtering import GuidedFilterParams, refine_mask
from segtricks.model import ToyHead, TrainConfig, crop_view, forward_view, make_view, objective, stop_gradient_check
from segtricks.tensorio import CropRect, crop_zoom

from oracles import loop_eq
from toyfix import small_sample


def test_policy_validation():
    with pytest.raises(ValueError):
        CropPolicy(min_area_fraction=0.8, max_area_fraction=0.5)
    with pytest.raises(ValueError):
        CropPolicy(min_aspect=2.0, max_aspect=1.0)


def test_sample_crop_full_and_deterministic():
    full = CropPolicy(min_area_fraction=1.0, max_area_fraction=1.0)
    assert sample_crop(full, 20, 30, np.random.default_rng(0)) == CropRect.full(20, 30)
    p = CropPolicy()
    a = sample_crop(p, 64, 48, np.random.default_rng(7))
    b = sample_crop(p, 64, 48, np.random.default_rng(7))
    assert a == b


def test_sample_crop_bounds_over_many_draws():
    p = CropPolicy(min_area_fraction=0.3, max_area_fraction=0.9)
    rng = np.random.default_rng(1)
    H, W = 40, 56
    fracs, aspects = [], []
    for _ in range(10_000):
        r = sample_crop(p, H, W, rng)
        assert r.top >= 0 and r.left >= 0 and r.top + r.height <= H and r.left + r.width <= W
        fracs.append(r.height * r.width / (H * W))
        aspects.append(r.width / r.height)
    assert min(fracs) >= 0.3 and max(fracs) <= 0.9
    assert min(aspects) >= 3 / 4 and max(aspects) <= 4 / 3


def test_sample_crop_errors():
    with pytest.raises(ValueError):
        sample_crop(CropPolicy(), 6, 20, np.random.default_rng(0))
    # an aspect range no 8x8 rect can realize at this area
    tight = CropPolicy(min_area_fraction=0.5, max_area_fraction=0.5, min_aspect=1.05, max_aspect=1.06)
    with pytest.raises(CropSamplingError):
        sample_crop(tight, 8, 8, np.random.default_rng(0))


def test_equivariance_loss_cases(rng):
    a = rng.random((6, 7))
    assert equivariance_loss(a, a) == 0.0
    assert equivariance_loss(np.ones((3, 3)), np.zeros((3, 3))) == 1.0
    b = rng.random((6, 7))
    assert equivariance_loss(a, b) == pytest.approx(loop_eq(a, b), rel=1e-13)
    g = equivariance_grad(a, b)
    h = 1e-6
    for k in range(a.size):
        e = np.zeros(a.size)
        e[k] = h
        e = e.reshape(a.shape)
        fd = (equivariance_loss(a + e, b) - equivariance_loss(a - e, b)) / (2 * h)
        assert abs(g.flat[k] - fd) <= 1e-6
    with pytest.raises(ValueError):
        equivariance_loss(a, b[:, :3])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_equivariance_loss_nonneg_zero_iff_equal(h, w, seed):
    r = np.random.default_rng(seed)
    a, b = r.random((h, w)), r.random((h, w))
    assert equivariance_loss(a, b) > 0.0
    assert equivariance_loss(a, a.copy()) == 0.0


def test_step_equivariant_predictor_zero_loss(rng):
    img = rng.random((16, 16, 3))
    f = lambda x: x[:, :, 0]
    rect = CropRect(4, 4, 8, 8)  # integer-aligned 2x enlargement
    res = consistency_step(f, img, f(img), CropPolicy(), None, rect=rect, mode="nearest", refine=False)
    assert res.l_eq == 0.0
    np.testing.assert_array_equal(res.s_c, res.s_target)


def test_step_constant_predictor_zero_loss():
    img = np.full((16, 16, 3), 0.4)
    f = lambda x: np.full(x.shape[:2], 0.5)
    res = consistency_step(f, img, f(img), CropPolicy(), GuidedFilterParams(), np.random.default_rng(3))
    assert res.l_eq == 0.0


def test_step_target_is_frozen_copy(rng):
    img = rng.random((16, 16, 3))
    f = lambda x: x[:, :, 1]
    res = consistency_step(f, img, f(img), CropPolicy(), GuidedFilterParams(2, 1e-3), np.random.default_rng(0))
    assert not res.s_target.flags.writeable
    assert res.l_eq >= 0.0 and 0 <= res.s_c.min() and res.s_c.max() <= 1


def test_step_deterministic(rng):
    img = rng.random((16, 16, 3))
    f = lambda x: x.mean(axis=2)
    a = consistency_step(f, img, f(img), CropPolicy(), None, np.random.default_rng(5))
    b = consistency_step(f, img, f(img), CropPolicy(), None, np.random.default_rng(5))
    assert a.rect == b.rect and a.l_eq == b.l_eq


def test_step_toy_head_composition_oracle():
    sample = small_sample(seed=11)
    cfg = TrainConfig()
    head = ToyHead.random(sample.features.shape[2], np.random.default_rng(4), 0.8)
    view = make_view(sample.features, sample.image, cfg.factor, cfg.weights, sample.field)
    rect = CropRect(3, 5, 20, 22)
    _, s_hat = forward_view(head, view)

    # hand-wired: CU on image and mask, head on the enlarged crop, GF, MSE
    img_c, s_c = crop_zoom(sample.image, s_hat, rect)
    cview = crop_view(view, rect, cfg.factor, None)
    np.testing.assert_array_equal(cview.image, img_c)
    _, s_hat_c = forward_view(head, cview)
    manual = np.mean((s_c - refine_mask(s_hat_c, img_c, cfg.gf)) ** 2)

    f = lambda im: forward_view(head, cview)[1]
    res = consistency_step(f, sample.image, s_hat, cfg.crop_policy, cfg.gf, rect=rect)
    trainer = objective(head, view, cfg, rect=rect, with_grad=False).breakdown["eq"]
    assert res.l_eq == pytest.approx(manual, rel=1e-12)
    assert trainer == pytest.approx(manual, rel=1e-12)


@pytest.mark.parametrize("teacher_gf", [True, False])
def test_stop_gradient_contract(teacher_gf):
    sample = small_sample(seed=3)
    cfg = replace(TrainConfig(), teacher_gf=teacher_gf)
    head = ToyHead.random(sample.features.shape[2], np.random.default_rng(9), 0.5)
    rep = stop_gradient_check(head, sample, cfg, np.random.default_rng(1))
    assert rep.max_abs_deviation == 0.0
    assert rep.negative_control_deviation > 0.0
    assert rep.passed
