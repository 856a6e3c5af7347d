import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thor.data import (
    AnomalySpec,
    DatasetConfig,
    PhantomSpec,
    build_dataset,
    generate_phantom,
    inject_anomaly,
    load_split,
    manifest_hash,
    preprocess,
    size_bounds,
)
from thor.errors import ConfigError
from thor.evaluation import stratify
from thor.geometry import mask_boxes


def test_phantom_deterministic_and_seed_dependent():
    a = generate_phantom(PhantomSpec(seed=1))
    np.testing.assert_array_equal(a, generate_phantom(PhantomSpec(seed=1)))
    b = generate_phantom(PhantomSpec(seed=2))
    assert np.abs(a - b).mean() > 0


def test_phantom_range_over_many_specs():
    rng = np.random.default_rng(0)
    for seed in rng.integers(0, 2**62, size=1000):
        img = generate_phantom(PhantomSpec(seed=int(seed), size=(32, 32), texture_amplitude=0.2))
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_phantom_dark_background():
    img = generate_phantom(PhantomSpec(seed=3))
    assert img[0, 0] < 0.01 and img[-1, -1] < 0.01
    assert img[32, 32] > 0.1


def test_phantom_spec_validation():
    with pytest.raises(ConfigError):
        PhantomSpec(n_structures=(3, 1))
    with pytest.raises(ConfigError):
        PhantomSpec(intensity_bands=((1.4, 0.0),))


@pytest.mark.parametrize("size", [(64, 64), (128, 128)])
@pytest.mark.parametrize("cls", ["small", "medium", "large"])
@pytest.mark.parametrize("polarity", ["hypo", "hyper"])
def test_injected_lesion_matches_class(size, cls, polarity):
    for seed in range(4):
        base = generate_phantom(PhantomSpec(seed=seed, size=size))
        img, mask, boxes = inject_anomaly(base, AnomalySpec(seed=seed, size_class=cls, polarity=polarity))
        count = int(mask.sum())
        small, large = size_bounds(size)
        if cls == "small":
            assert count < small
        elif cls == "large":
            assert count >= large
        else:
            assert small <= count < large
        assert stratify(mask) == cls
        np.testing.assert_array_equal(img[~mask], base[~mask])
        assert boxes == mask_boxes(mask)
        assert img.min() >= 0 and img.max() <= 1
        delta = img[mask] - base[mask]
        assert np.all(delta <= 0) if polarity == "hypo" else np.all(delta >= 0)


def test_classes_at_128():
    base = generate_phantom(PhantomSpec(seed=0, size=(128, 128)))
    _, small, _ = inject_anomaly(base, AnomalySpec(seed=1, size_class="small"))
    _, large, _ = inject_anomaly(base, AnomalySpec(seed=1, size_class="large"))
    assert small.sum() < 71
    assert large.sum() >= 570


def test_inject_fails_without_foreground():
    with pytest.raises(ValueError):
        inject_anomaly(np.zeros((32, 32)), AnomalySpec(size_class="large"))


def test_preprocess_examples():
    raw = np.zeros((10, 10))
    raw[:, :] = np.linspace(0.1, 2.0, 100).reshape(10, 10)
    p98 = np.percentile(raw[raw > 0], 98, method="lower")
    out = preprocess(raw, (10, 10))
    np.testing.assert_allclose(out[raw < p98], raw[raw < p98] / p98)
    assert np.all(out[raw >= p98] == 1.0)

    halved = np.full((6, 6), 2.0)
    halved[0, 0] = 1.0
    np.testing.assert_allclose(preprocess(halved, (6, 6))[0, 0], 0.5)
    np.testing.assert_array_equal(preprocess(np.full((5, 5), 5.0), (5, 5)), 1.0)


def test_preprocess_resizes_and_rejects_bad_input():
    out = preprocess(np.random.default_rng(0).random((40, 30)) + 0.1, (16, 16))
    assert out.shape == (16, 16) and out.min() >= 0 and out.max() <= 1
    with pytest.raises(ValueError):
        preprocess(np.zeros((4, 4)), (4, 4))
    with pytest.raises(ValueError):
        preprocess(np.array([[1.0, np.nan]]), (1, 2))


@given(seed=st.integers(0, 10**9))
@settings(max_examples=30, deadline=None)
def test_preprocess_idempotent(seed):
    rng = np.random.default_rng(seed)
    raw = rng.gamma(2.0, 1.0, size=(24, 24)) * (rng.random((24, 24)) > 0.2)
    once = preprocess(raw, (24, 24))
    np.testing.assert_allclose(preprocess(once, (24, 24)), once, atol=1e-6)


@pytest.fixture(scope="module")
def small_cfg():
    return DatasetConfig(seed=7, size=(32, 32), n_train=5, n_test_healthy=2,
                         n_test_anomalous={"small": 2, "medium": 3, "large": 1})


def test_build_dataset_counts_and_consistency(tmp_path, small_cfg):
    manifest = build_dataset(small_cfg, tmp_path)
    by_split = {}
    for r in manifest["records"]:
        by_split.setdefault(r["split"], []).append(r)
    assert len(by_split["train"]) == 5
    assert len(by_split["test_healthy"]) == 2
    assert len(by_split["test_anomalous"]) == 6
    anomalous = load_split(tmp_path, "test_anomalous")
    for rec, mask in zip(anomalous.records, anomalous.masks):
        assert rec["boxes"] == mask_boxes(mask)
        assert rec["size_class"] == stratify(mask)
    assert sorted(r["size_class"] for r in anomalous.records).count("medium") == 3
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["version"] == 1 and on_disk["seed"] == 7


def test_build_dataset_reproducible(tmp_path, small_cfg):
    build_dataset(small_cfg, tmp_path / "a")
    build_dataset(small_cfg, tmp_path / "b")
    assert manifest_hash(tmp_path / "a" / "manifest.json") == manifest_hash(tmp_path / "b" / "manifest.json")
    np.testing.assert_array_equal(load_split(tmp_path / "a", "train").images, load_split(tmp_path / "b", "train").images)


def test_load_split_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path, "train")
