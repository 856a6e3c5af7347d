import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thor.errors import ConfigError, ShapeError
from thor.evaluation import (
    DetectionRule,
    EvalReport,
    detect_components,
    dice,
    max_dice,
    recall_f1,
    stratify,
    sweep_thresholds,
)


def set_dice(pred, gt):
    """Independent oracle on coordinate sets."""
    a = {tuple(p) for p in np.argwhere(pred)}
    b = {tuple(p) for p in np.argwhere(gt)}
    if not a and not b:
        return 1.0
    return 2 * len(a & b) / (len(a) + len(b))


def exhaustive_max_dice(maps, gts):
    best = 0.0
    for thr in np.unique(maps):
        d = np.mean([set_dice(m > thr, g) for m, g in zip(maps, gts)])
        best = max(best, d)
    return best


def test_dice_examples():
    m = np.zeros((4, 4), dtype=bool)
    m[1:3, 1:3] = True
    assert dice(m, m) == 1.0
    other = np.zeros_like(m)
    other[0, 0] = True
    assert dice(m, other) == 0.0
    pred = np.zeros(10, dtype=bool)
    gt = np.zeros(10, dtype=bool)
    pred[[0, 1, 2]] = True
    gt[[1, 2, 3, 4]] = True
    assert dice(pred, gt) == pytest.approx(4 / 7)
    assert dice(np.zeros(3), np.zeros(3)) == 1.0
    with pytest.raises(ShapeError):
        dice(np.zeros(3), np.zeros(4))


@given(a=arrays(np.bool_, (6, 6)), b=arrays(np.bool_, (6, 6)))
@settings(max_examples=100, deadline=None)
def test_dice_symmetric_and_matches_set_oracle(a, b):
    assert dice(a, b) == dice(b, a)
    assert dice(a, b) == pytest.approx(set_dice(a, b))


def test_max_dice_examples():
    gt = np.zeros((3, 8, 8), dtype=bool)
    gt[:, 2:5, 3:6] = True
    best, thr = max_dice(gt.astype(float), gt)
    assert best == 1.0
    assert max_dice(np.zeros(gt.shape), gt)[0] == 0.0
    with pytest.raises(ValueError):
        max_dice(np.zeros((0, 4, 4)), np.zeros((0, 4, 4)))


def test_quantile_sweep_close_to_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(10):
        maps = rng.random((3, 8, 8))
        gts = rng.random((3, 8, 8)) > 0.7
        exact = exhaustive_max_dice(maps, gts)
        assert abs(max_dice(maps, gts, 256)[0] - exact) <= 0.02
        assert max_dice(maps, gts, maps.size)[0] == pytest.approx(exact, abs=1e-12)


def test_adding_gt_as_candidate_never_hurts():
    rng = np.random.default_rng(1)
    maps = rng.random((4, 8, 8))
    gts = rng.random((4, 8, 8)) > 0.6
    base = max_dice(maps, gts, 10**6)[0]
    # the gt itself as score maps reaches the optimum
    assert max_dice(gts.astype(float), gts)[0] >= base


def test_sweep_thresholds_uses_distinct_values_when_few():
    pooled = np.array([0.0, 0.0, 1.0, 2.0])
    np.testing.assert_array_equal(sweep_thresholds(pooled, 10), [0.0, 1.0, 2.0])
    assert len(sweep_thresholds(np.linspace(0, 1, 1000), 16)) == 16


def mask_of(count, shape=(128, 128)):
    m = np.zeros(shape, dtype=bool)
    m.ravel()[:count] = True
    return m


@pytest.mark.parametrize("count,cls", [(1, "small"), (70, "small"), (71, "medium"), (569, "medium"),
                                       (570, "large"), (4000, "large")])
def test_stratify_boundaries_at_128(count, cls):
    assert stratify(mask_of(count)) == cls


def test_stratify_rescales_with_resolution():
    assert stratify(mask_of(17, (64, 64))) == "small"
    assert stratify(mask_of(18, (64, 64))) == "medium"
    assert stratify(mask_of(143, (64, 64))) == "large"
    with pytest.raises(ValueError):
        stratify(np.zeros((8, 8), dtype=bool))


@given(count=st.integers(1, 128 * 128))
@settings(max_examples=50, deadline=None)
def test_stratify_partition(count):
    cls = stratify(mask_of(count))
    assert cls == ("small" if count < 71 else "medium" if count < 570 else "large")


def test_detect_components():
    assert detect_components(np.zeros((8, 8)), 0.5) == []
    m = np.zeros((20, 20))
    m[2:5, 3:7] = 1.0
    m[10:16, 12:14] = 2.0
    m[18, 18] = 5.0
    boxes = detect_components(m, 0.5, DetectionRule(min_component_area=4))
    assert boxes == [[12, 10, 13, 15], [3, 2, 6, 4]]
    assert [18, 18, 18, 18] in detect_components(m, 0.5, DetectionRule(min_component_area=1))


def test_diagonal_pixels_form_one_component():
    m = np.zeros((6, 6))
    for i in range(4):
        m[i, i] = 1.0
    assert detect_components(m, 0.5) == [[0, 0, 3, 3]]


def test_recall_f1_examples():
    gt = [[0, 0, 4, 4]]
    assert recall_f1(gt, gt) == (1.0, 1.0, 1.0)
    assert recall_f1([], gt) == (0.0, 0.0, 0.0)
    r, p, f = recall_f1([[1, 1, 3, 3], [10, 10, 12, 12]], gt)
    assert (r, p) == (1.0, 0.5) and f == pytest.approx(2 / 3)


def test_one_prediction_matches_one_gt():
    gts = [[0, 0, 3, 3], [4, 0, 7, 3]]
    r, p, _ = recall_f1([[0, 0, 7, 3]], gts)
    assert r == 0.5 and p == 1.0


boxes = st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(0, 5), st.integers(0, 5))
                 .map(lambda b: [b[0], b[1], b[0] + b[2], b[1] + b[3]]), max_size=6)


@given(pred=boxes, gt=boxes)
@settings(max_examples=100, deadline=None)
def test_recall_f1_bounds(pred, gt):
    r, p, f = recall_f1(pred, gt)
    assert all(0 <= v <= 1 for v in (r, p, f))
    if r == 0 or p == 0:
        assert f == 0


def test_detection_rule_validation():
    with pytest.raises(ConfigError):
        DetectionRule(overlap_fraction=0.0)


def test_report_hash_ignores_runtime():
    kw = dict(method="thor", noise="gaussian", t_start=350, dice_avg=0.3, dice_small=0.1, dice_medium=0.3,
              dice_large=0.5, threshold=0.01, recall=0.5, precision=0.5, f1=0.5, healthy_mae=0.02, n_images=3)
    a, b = EvalReport(**kw, runtime_seconds=1.0), EvalReport(**kw, runtime_seconds=2.0)
    assert a.content_hash() == b.content_hash()
    assert [r["size_class"] for r in a.csv_rows()] == ["average", "small", "medium", "large"]
