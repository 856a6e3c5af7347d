import csv
import json

import numpy as np
import pytest

from thor.data import PhantomSpec, generate_phantom
from thor.denoiser import (
    DenoiserConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
    predict_noise,
    save_checkpoint,
    sidecar_path,
    train,
)
from thor.errors import CompatibilityError, ConfigError, ShapeError
from thor.noise import NoiseSpec, sample_noise
from thor.schedules import forward_closed, make_linear_schedule

TINY = DenoiserConfig(base_channels=8, depth=2, time_embed_dim=16, image_size=(16, 16))


def healthy(n, size=(16, 16)):
    return [generate_phantom(PhantomSpec(seed=s, size=size, n_structures=(1, 2))) for s in range(n)]


def test_config_validation():
    with pytest.raises(ConfigError):
        DenoiserConfig(depth=3, image_size=(20, 20))
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    DenoiserConfig(base_channels=12, depth=2, image_size=(16, 16))


@pytest.mark.parametrize("t", [1, 37, 100])
def test_prediction_shape_and_determinism(toy, t):
    x = np.random.default_rng(t).random((16, 16))
    a = predict_noise(toy, x, t)
    assert a.shape == x.shape
    np.testing.assert_array_equal(a, predict_noise(toy, x, t))
    batch = predict_noise(toy, np.stack([x, x]), t)
    assert batch.shape == (2, 16, 16)


def test_prediction_rejects_bad_input(toy):
    with pytest.raises(ShapeError):
        predict_noise(toy, np.zeros((8, 8)), 1)
    with pytest.raises(ConfigError):
        predict_noise(toy, np.zeros((16, 16)), 0)


def test_train_rejects_bad_data(toy_schedule):
    with pytest.raises(ValueError):
        train([], toy_schedule, TrainConfig(epochs=1), TINY)
    with pytest.raises(ShapeError):
        train(healthy(2, (32, 32)), toy_schedule, TrainConfig(epochs=1), TINY)


def test_one_epoch_checkpoint_round_trip(tmp_path, toy_schedule):
    model = train(healthy(8), toy_schedule, TrainConfig(epochs=1, batch_size=4, seed=3), TINY,
                  curve_path=tmp_path / "curve.csv")
    path = save_checkpoint(model, tmp_path / "m.pt")
    loaded = load_checkpoint(path)
    assert loaded.fingerprint == model.fingerprint
    loaded.check_compatible(toy_schedule, NoiseSpec())
    x = healthy(1)[0]
    np.testing.assert_array_equal(predict_noise(loaded, x, 50), predict_noise(model, x, 50))
    rows = list(csv.reader(open(tmp_path / "curve.csv")))
    assert rows[0] == ["epoch", "mean_loss"] and len(rows) == 2


def test_metadata_schema(tmp_path, toy):
    path = save_checkpoint(toy, tmp_path / "m.pt")
    meta = json.loads(sidecar_path(path).read_text())
    assert {"T", "beta_min", "beta_max", "noise_kind", "seed", "fingerprint", "config"} <= set(meta)
    assert meta["T"] == 100 and meta["noise_kind"] == "gaussian"


def test_wrong_schedule_or_noise_rejected(toy):
    with pytest.raises(CompatibilityError):
        toy.check_compatible(make_linear_schedule(100, 1e-4, 0.02), NoiseSpec())
    sched = make_linear_schedule(100, 1e-4, 0.05)
    with pytest.raises(CompatibilityError):
        toy.check_compatible(sched, NoiseSpec("simplex"))
    toy.check_compatible(sched, NoiseSpec("simplex"), strict_noise=False)
    toy.check_compatible(sched, NoiseSpec(seed=123))


def test_corrupt_and_missing_checkpoint(tmp_path, toy):
    with pytest.raises(FileNotFoundError, match="nope.pt"):
        load_checkpoint(tmp_path / "nope.pt")
    path = save_checkpoint(toy, tmp_path / "m.pt")
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="corrupt"):
        load_checkpoint(path)


def test_seeded_training_reproducible(toy_schedule):
    cfg = TrainConfig(epochs=2, batch_size=4, seed=5)
    a = train(healthy(8), toy_schedule, cfg, TINY)
    b = train(healthy(8), toy_schedule, cfg, TINY)
    assert abs(a.history[-1][1] - b.history[-1][1]) <= 1e-4


def test_simplex_training_records_noise_kind(toy_schedule):
    m = train(healthy(4), toy_schedule, TrainConfig(epochs=1, noise_spec=NoiseSpec("simplex")), TINY)
    assert m.noise["kind"] == "simplex"
    m.check_compatible(toy_schedule, NoiseSpec("simplex", seed=9))


def test_loss_decreases_over_training(toy_schedule):
    m = train(healthy(16), toy_schedule, TrainConfig(epochs=20, batch_size=8, learning_rate=2e-3), TINY)
    assert m.history[-1][1] < m.history[0][1]


def test_constant_image_error_well_below_untrained():
    sched = make_linear_schedule(100, 1e-4, 0.05)
    img = np.full((16, 16), 0.6)
    model = train([img] * 16, sched, TrainConfig(epochs=200, batch_size=16, learning_rate=2e-3), TINY)
    baseline = build_model(TINY, sched, NoiseSpec(), 0)
    eps = np.stack([sample_noise(NoiseSpec(seed=99), (16, 16), k) for k in range(32)])
    t = 10
    x_t = forward_closed(np.broadcast_to(img, eps.shape), t, sched, eps)
    trained_err = np.linalg.norm(predict_noise(model, x_t, t) - eps)
    untrained_err = np.linalg.norm(predict_noise(baseline, x_t, t) - eps)
    assert untrained_err >= 5 * trained_err
