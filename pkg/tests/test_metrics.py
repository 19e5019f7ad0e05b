import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segtricks.metrics import (
    BBox,
    EmptyPredictionError,
    MetricUndefinedError,
    aggregate_reports,
    bbox_iou,
    binarize,
    connected_components,
    corloc,
    corloc_hit,
    iou,
    largest_bbox_component,
    max_f_beta,
    pixel_accuracy,
    saliency_report,
)

from oracles import corloc_fixture, exhaustive_f_beta, flood_fill_labels, graded_fixture

bits = arrays(np.bool_, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def test_binarize_cases(rng):
    assert binarize(np.full((3, 3), 0.6), 0.5).all()
    assert not binarize(np.ones((3, 3)), 1.0).any()
    m = rng.random((6, 6))
    np.testing.assert_array_equal(binarize(m, 0.3), [[v > 0.3 for v in row] for row in m])
    with pytest.raises(ValueError):
        binarize(m, 1.5)


def test_accuracy_cases(rng):
    gt = rng.random((4, 4)) > 0.5
    assert pixel_accuracy(gt, gt) == 1.0
    assert pixel_accuracy(~gt, gt) == 0.0
    pred = gt.copy()
    for k in (0, 5, 11):
        pred.flat[k] = ~pred.flat[k]
    assert pixel_accuracy(pred, gt) == 13 / 16
    with pytest.raises(ValueError):
        pixel_accuracy(np.zeros((2, 2)), np.zeros((2, 3)))


def test_iou_cases():
    a = np.zeros((4, 4), bool)
    a[0, :2] = True
    assert iou(a, a) == 1.0
    assert iou(a, np.roll(a, 2, axis=0)) == 0.0
    assert iou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0
    pred = np.zeros((4, 4), bool)
    gt = np.zeros((4, 4), bool)
    pred[0, 0:3] = True              # 3 pixels
    gt[0, 1:3] = gt[1, 1:3] = True   # 4 pixels, 2 shared
    assert iou(pred, gt) == 0.4
    with pytest.raises(ValueError):
        iou(np.zeros((2, 2)), np.zeros((3, 2)))


def test_max_f_beta_cases():
    gt = np.zeros((4, 4), bool)
    gt[1:3, 1:3] = True
    mf, curve = max_f_beta(gt.astype(float), gt)
    assert mf == 1.0 and np.all(curve == 1.0) and curve.size == 255
    assert max_f_beta(np.zeros((4, 4)), gt)[0] == 0.0
    pred, gt, expected = graded_fixture()
    mf, curve = max_f_beta(pred, gt)
    assert mf == pytest.approx(expected, abs=1e-15)
    ref, ref_curve = exhaustive_f_beta(pred, gt)
    assert mf == pytest.approx(ref, abs=1e-15)
    np.testing.assert_allclose(curve, ref_curve, atol=1e-15)
    with pytest.raises(MetricUndefinedError):
        max_f_beta(pred, np.zeros((4, 4), bool))


def test_max_f_beta_random_oracle(rng):
    pred = rng.random((7, 9))
    gt = rng.random((7, 9)) > 0.6
    mf, curve = max_f_beta(pred, gt)
    ref, ref_curve = exhaustive_f_beta(pred, gt)
    np.testing.assert_allclose(curve, ref_curve, atol=1e-14)
    assert mf == max(curve)


def test_max_f_beta_quantized_invariance(rng):
    # a monotone map that keeps every value inside its 1/255 bin leaves the curve alone
    k = rng.integers(0, 255, size=(8, 8))
    base = (k + 0.25) / 255
    warped = (k + 0.25 + 0.5 * rng.random((8, 8)) ** 3) / 255
    gt = rng.random((8, 8)) > 0.5
    gt[0, 0] = True
    np.testing.assert_array_equal(max_f_beta(base, gt)[1], max_f_beta(warped, gt)[1])


def test_saliency_report_and_aggregation():
    gt = np.zeros((4, 4))
    gt[:2] = 1.0
    r1 = saliency_report(gt, gt)
    assert (r1.acc, r1.iou, r1.max_f_beta) == (1.0, 1.0, 1.0)
    r2 = saliency_report(np.zeros((4, 4)), np.zeros((4, 4)))
    assert r2.max_f_beta is None
    with pytest.warns(UserWarning, match="excluded"):
        agg = aggregate_reports([r1, r2])
    assert agg == {"acc": 1.0, "iou": 1.0, "max_f_beta": 1.0, "count": 2}
    with pytest.raises(ValueError):
        aggregate_reports([])


# --------------------------------------------------------------------------
# components and boxes


def test_components_cases(backend):
    m = np.zeros((3, 3), bool)
    m[0, 0] = m[1, 1] = True
    assert connected_components(m)[1] == 1
    assert connected_components(np.zeros((4, 4), bool))[1] == 0
    m = np.zeros((5, 5), bool)
    m[0, 4] = True
    m[3, 0] = True
    lab, n = connected_components(m)
    assert n == 2 and lab[0, 4] == 1 and lab[3, 0] == 2


def test_components_match_flood_fill(backend, rng):
    for density in (0.3, 0.5, 0.7):
        m = rng.random((16, 16)) < density
        lab, n = connected_components(m)
        ref, rn = flood_fill_labels(m)
        assert n == rn
        np.testing.assert_array_equal(lab, ref)


@settings(max_examples=60, deadline=None)
@given(bits)
def test_components_partition_property(m):
    lab, n = connected_components(m)
    np.testing.assert_array_equal(lab > 0, m)
    assert set(np.unique(lab[m])) == set(range(1, n + 1))
    h, w = m.shape
    for y in range(h):
        for x in range(w):
            if lab[y, x]:
                nb = lab[max(0, y - 1):y + 2, max(0, x - 1):x + 2]
                assert set(np.unique(nb[nb > 0])) == {lab[y, x]}


def test_largest_box_cases():
    m = np.zeros((8, 8), bool)
    m[2:4, 3:6] = True
    assert largest_bbox_component(m) == BBox(2, 3, 3, 5)
    m = np.zeros((8, 8), bool)
    m[0, 0:5] = True       # 5x1 strip
    m[4:6, 4:6] = True     # 2x2 square
    assert largest_bbox_component(m) == BBox(0, 0, 0, 4)
    m = np.zeros((8, 8), bool)
    m[5:7, 0:2] = True
    m[1:3, 5:7] = True     # earlier in raster order
    assert largest_bbox_component(m) == BBox(1, 5, 2, 6)
    with pytest.raises(EmptyPredictionError):
        largest_bbox_component(np.zeros((3, 3), bool))


def test_bbox_iou_cases():
    a = BBox(0, 0, 1, 1)
    assert bbox_iou(a, a) == 1.0
    assert bbox_iou(a, BBox(3, 3, 4, 4)) == 0.0
    assert bbox_iou(a, BBox(1, 1, 2, 2)) == 1 / 7
    with pytest.raises(ValueError):
        BBox(2, 0, 1, 0)


def test_corloc_cases():
    cases = corloc_fixture()
    preds = [m for _, m, _, _ in cases]
    boxes = [[BBox(*b) for b in bs] for _, _, bs, _ in cases]
    for (name, m, _, expected), bs in zip(cases, boxes):
        assert corloc_hit(m, bs)[0] == expected, name
    assert corloc(preds, boxes) == 0.7
    assert corloc([np.zeros((4, 4))] * 3, [[BBox(0, 0, 1, 1)]] * 3) == 0.0
    exact = [np.pad(np.ones((2, 2)), 1)] * 2
    assert corloc(exact, [[BBox(1, 1, 2, 2)]] * 2) == 1.0
    with pytest.raises(ValueError):
        corloc(preds, boxes[:3])


def test_corloc_permutation_invariant(rng):
    cases = corloc_fixture()
    preds = [m for _, m, _, _ in cases]
    boxes = [[BBox(*b) for b in bs] for _, _, bs, _ in cases]
    perm = rng.permutation(len(cases))
    assert corloc([preds[i] for i in perm], [boxes[i] for i in perm]) == corloc(preds, boxes)


@settings(max_examples=60, deadline=None)
@given(bits, st.data())
def test_metrics_in_unit_interval_and_symmetric(a, data):
    b = data.draw(arrays(np.bool_, a.shape))
    for v in (pixel_accuracy(a, b), iou(a, b)):
        assert 0.0 <= v <= 1.0
    assert iou(a, b) == iou(b, a)
    assert pixel_accuracy(a, b) == pixel_accuracy(b, a)
    if b.any():
        assert 0.0 <= max_f_beta(a.astype(float), b)[0] <= 1.0
