import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segtricks.filtering import (
    GuidedFilterParams,
    box_filter,
    box_filter_adjoint,
    guided_filter,
    guided_filter_raw,
    guided_filter_vjp,
    integral_image,
    refine_mask,
)
from segtricks.metrics import iou

from oracles import brute_guided_filter, jittered_fixture, naive_box_mean, naive_integral


def test_params_validation():
    with pytest.raises(ValueError):
        GuidedFilterParams(radius=0)
    with pytest.raises(ValueError):
        GuidedFilterParams(eps=0.0)
    assert GuidedFilterParams().as_dict() == {"radius": 4, "eps": 1e-4}


def test_integral_image_small_cases(rng):
    assert integral_image(np.ones((3, 3)))[2, 2] == 9
    np.testing.assert_array_equal(integral_image(np.zeros((4, 5))), np.zeros((4, 5)))
    x = rng.random((8, 8))
    np.testing.assert_allclose(integral_image(x), naive_integral(x), atol=1e-12)


def test_box_filter_constant_exact(backend):
    for c in (0.0, 0.3, 1.0, 0.1 + 0.2):
        x = np.full((9, 13), c)
        for r in (1, 2, 5):
            np.testing.assert_array_equal(box_filter(x, r), x)


def test_box_filter_impulse():
    x = np.zeros((5, 5))
    x[2, 2] = 1.0
    out = box_filter(x, 1)
    np.testing.assert_allclose(out, naive_box_mean(x, 1), atol=1e-15)
    np.testing.assert_allclose(out[1:4, 1:4], 1 / 9, atol=1e-15)
    assert out[0, 0] == 0.0


def test_box_filter_random_naive(backend, rng):
    for shape, r in (((16, 16), 2), ((7, 12), 3), ((64, 64), 5), ((5, 5), 8)):
        x = rng.random(shape)
        np.testing.assert_allclose(box_filter(x, r), naive_box_mean(x, r), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 20)),
              elements=st.floats(-1, 1, allow_nan=False)),
       st.integers(1, 6))
def test_box_filter_property(x, r):
    np.testing.assert_allclose(box_filter(x, r), naive_box_mean(x, r), atol=1e-10)


def test_box_filter_adjoint(rng):
    x = rng.random((9, 11))
    y = rng.random((9, 11))
    for r in (1, 3):
        lhs = np.sum(box_filter(x - x.flat[0], r) * y)
        rhs = np.sum((x - x.flat[0]) * box_filter_adjoint(y, r))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_guided_constant_guide_is_double_box(rng):
    p = rng.random((12, 12))
    guide = np.full((12, 12), 0.4)
    out = guided_filter(p, guide, radius=2, eps=1e-3)
    np.testing.assert_allclose(out, naive_box_mean(naive_box_mean(p, 2), 2), atol=1e-12)


def test_guided_self_guidance_limit(rng):
    from scipy.ndimage import gaussian_filter

    p = np.clip(gaussian_filter(rng.random((24, 24)), 2.0) * 3 - 1, 0, 1)
    out = guided_filter(p, p, radius=2, eps=1e-12)
    assert np.max(np.abs(out - p)[2:-2, 2:-2]) <= 1e-3


def test_guided_matches_brute_force(backend, rng):
    p = rng.random((16, 16))
    guide = rng.random((16, 16))
    np.testing.assert_allclose(guided_filter(p, guide, radius=2, eps=1e-3),
                               brute_guided_filter(p, guide, 2, 1e-3), atol=1e-6)


def test_guided_preserves_constants_exactly(rng):
    for c in (0.0, 0.37, 1.0):
        p = np.full((10, 10), c)
        out = guided_filter(p, rng.random((10, 10)), radius=3, eps=1e-4)
        np.testing.assert_array_equal(out, p)


def test_guided_affine_guide_invariance(rng):
    p = rng.random((14, 14))
    guide = rng.random((14, 14))
    alpha, beta = 0.5, 0.2
    a = guided_filter_raw(p, guide, radius=2, eps=1e-3)
    b = guided_filter_raw(p, alpha * guide + beta, radius=2, eps=alpha**2 * 1e-3)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_guided_rejects_bad_inputs(rng):
    with pytest.raises(ValueError):
        guided_filter(rng.random((5, 5)), rng.random((5, 6)))
    with pytest.raises(ValueError, match="single-channel"):
        guided_filter(rng.random((5, 5)), rng.random((5, 5, 3)))


def test_guided_vjp_matches_finite_differences(rng):
    p = 0.2 + 0.6 * rng.random((9, 9))
    guide = rng.random((9, 9))
    params = GuidedFilterParams(2, 1e-2)
    g = rng.standard_normal((9, 9))
    grad = guided_filter_vjp(p, guide, params, g)
    h = 1e-6
    for k in rng.choice(81, 12, replace=False):
        e = np.zeros(81)
        e[k] = h
        e = e.reshape(9, 9)
        fd = (np.sum(g * guided_filter(p + e, guide, params)) - np.sum(g * guided_filter(p - e, guide, params))) / (2 * h)
        assert grad.flat[k] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_refine_sharpens_step_edge():
    w = 32
    x = np.arange(w)
    guide_row = (x >= 16).astype(float)
    blurred_row = 1 / (1 + np.exp(-(x - 15.5) / 3.0))
    img = np.repeat(np.tile(guide_row, (16, 1))[:, :, None], 3, axis=2)
    p = np.tile(blurred_row, (16, 1))
    out = refine_mask(p, img, GuidedFilterParams(4, 1e-4))
    assert np.max(np.abs(np.diff(out[8]))) > np.max(np.abs(np.diff(p[8])))


def test_refine_constant_in_constant_out():
    out = refine_mask(np.full((8, 8), 0.6), np.full((8, 8, 3), 0.3))
    np.testing.assert_array_equal(out, np.full((8, 8), 0.6))


def test_refine_improves_jittered_masks():
    data = jittered_fixture(5, seed=7)
    before = np.mean([iou(m > 0.5, c) for _, c, m in data])
    after = np.mean([iou(refine_mask(m, img) > 0.5, c) for img, c, m in data])
    assert after > before


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (10, 10), elements=st.floats(0, 1)), arrays(np.float64, (10, 10, 3), elements=st.floats(0, 1)),
       st.integers(1, 4), st.sampled_from([1e-6, 1e-4, 1e-2]))
def test_refine_output_in_unit_range(p, img, r, eps):
    out = refine_mask(p, img, GuidedFilterParams(r, eps))
    assert out.min() >= 0.0 and out.max() <= 1.0
