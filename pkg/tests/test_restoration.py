import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_model
from thor.errors import CompatibilityError, ConfigError, ShapeError
from thor.noise import NoiseSpec
from thor.restoration import (
    HarmonizationPlan,
    default_steps,
    default_t_start,
    predict_x0,
    restore_plain,
    restore_thor,
    reverse_step,
    split_trace,
)
from thor.schedules import forward_closed, forward_step, make_linear_schedule

SCHED = make_linear_schedule()


def schedule_with_alpha(a):
    """Single-step schedule whose only alpha is ``a``."""
    return make_linear_schedule(1, 1 - a, 1 - a)


def test_reverse_step_examples():
    s = schedule_with_alpha(0.81)
    np.testing.assert_allclose(reverse_step(np.full((3, 3), 0.9), 1, np.zeros((3, 3)), s), 1.0, atol=1e-12)
    x = np.full((2, 2), 0.3)
    np.testing.assert_allclose(reverse_step(x, 500, np.zeros_like(x), SCHED), x / np.sqrt(SCHED.alpha(500)))


@given(seed=st.integers(0, 2**32), t=st.integers(1, 1000))
@settings(max_examples=100, deadline=None)
def test_exact_noise_inversion(seed, t):
    rng = np.random.default_rng(seed)
    x = rng.random((8, 8))
    eps = rng.standard_normal((8, 8))
    np.testing.assert_allclose(reverse_step(forward_step(x, t, SCHED, eps), t, eps, SCHED), x, atol=1e-5)
    np.testing.assert_allclose(predict_x0(forward_closed(x, t, SCHED, eps), t, eps, SCHED, clamp=False), x,
                               atol=1e-5)


def test_stochastic_reverse_term():
    x = np.zeros((4, 4))
    z = np.ones((4, 4))
    out = reverse_step(x, 10, np.zeros_like(x), SCHED, stochastic=True, noise=z)
    np.testing.assert_allclose(out, np.sqrt(SCHED.beta(10)))
    np.testing.assert_array_equal(reverse_step(x, 1, x, SCHED, stochastic=True, noise=z), x)
    with pytest.raises(ValueError):
        reverse_step(x, 10, x, SCHED, stochastic=True)
    with pytest.raises(ShapeError):
        reverse_step(x, 10, np.zeros((3, 3)), SCHED)


def test_predict_x0_examples():
    s = make_linear_schedule(1, 0.75, 0.75)  # alpha_bar(1) = 0.25
    np.testing.assert_allclose(predict_x0(np.full((2, 2), 0.4), 1, np.zeros((2, 2)), s), 0.8)
    raw = predict_x0(np.full((2, 2), 0.85), 1, np.zeros((2, 2)), s, clamp=False)
    np.testing.assert_allclose(raw, 1.7)
    np.testing.assert_allclose(predict_x0(np.full((2, 2), 0.85), 1, np.zeros((2, 2)), s), 1.0)


def test_defaults():
    assert default_t_start("gaussian", 1000) == 350
    assert default_t_start("simplex", 1000) == 250
    assert default_t_start("gaussian", 200) == 70
    assert default_steps(350) == (263, 175, 88)


@pytest.mark.parametrize("steps", [(5, 5), (3, 7), (0,), (11,)])
def test_plan_validation(steps):
    with pytest.raises(ConfigError):
        HarmonizationPlan(10, steps)


def test_plan_round_trip():
    p = HarmonizationPlan.default(40)
    assert HarmonizationPlan.from_dict(p.to_dict()) == p


def test_plain_t0_is_identity(toy, toy_schedule, toy_images):
    np.testing.assert_array_equal(restore_plain(toy, toy_images, 0, toy_schedule, NoiseSpec()), toy_images)
    tr = restore_thor(toy, toy_images[0], HarmonizationPlan(0), toy_schedule, NoiseSpec())
    np.testing.assert_array_equal(tr.final, toy_images[0])


@pytest.mark.parametrize("stochastic", [False, True])
def test_plain_reproducible(toy, toy_schedule, toy_images, stochastic):
    a = restore_plain(toy, toy_images, 30, toy_schedule, NoiseSpec(), stochastic, seed=4)
    b = restore_plain(toy, toy_images, 30, toy_schedule, NoiseSpec(), stochastic, seed=4)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, restore_plain(toy, toy_images, 30, toy_schedule, NoiseSpec(), stochastic, seed=5))


def test_batch_matches_single_images(toy, toy_schedule, toy_images):
    from thor.restoration import image_seeds

    seeds = image_seeds(11, len(toy_images))
    batch = restore_plain(toy, toy_images, 20, toy_schedule, NoiseSpec(), seed=seeds)
    single = restore_plain(toy, toy_images[1], 20, toy_schedule, NoiseSpec(), seed=seeds[1])
    np.testing.assert_allclose(batch[1], single, atol=1e-5)


@pytest.mark.parametrize("stochastic", [False, True])
@pytest.mark.parametrize("noise", ["gaussian", "simplex"])
def test_forced_masks_degenerate(toy_schedule, toy_images, stochastic, noise):
    spec = NoiseSpec(noise)
    model = toy_model(toy_schedule, spec)
    plan = HarmonizationPlan(30, (30, 20, 10, 1), stochastic_reverse=stochastic)
    keep = restore_thor(model, toy_images, plan, toy_schedule, spec, seed=2, mask_hook=lambda t, w: np.zeros_like(w))
    assert np.abs(keep.final - toy_images).max() <= 1e-6
    chain = restore_thor(model, toy_images, plan, toy_schedule, spec, seed=2, mask_hook=lambda t, w: np.ones_like(w))
    plain = restore_plain(model, toy_images, 30, toy_schedule, spec, stochastic, seed=2)
    np.testing.assert_array_equal(chain.final, plain)


def test_empty_plan_equals_plain(toy, toy_schedule, toy_images):
    tr = restore_thor(toy, toy_images, HarmonizationPlan(25), toy_schedule, NoiseSpec(), seed=8)
    np.testing.assert_array_equal(tr.final, restore_plain(toy, toy_images, 25, toy_schedule, NoiseSpec(), seed=8))
    assert tr.per_step_maps == [] and tr.final_map.shape == toy_images.shape
    np.testing.assert_array_equal(tr.score(), tr.final_map)


def test_trace_complete_and_tagged(toy, toy_schedule, toy_images):
    plan = HarmonizationPlan.default(40)
    tr = restore_thor(toy, toy_images, plan, toy_schedule, NoiseSpec(), keep_x0=True)
    assert [t for t, _ in tr.per_step_maps] == list(plan.harmonization_steps)
    assert [t for t, _ in tr.per_step_x0] == list(plan.harmonization_steps)
    for _, w in tr.per_step_masks:
        assert w.min() >= 0 and w.max() <= 1
    assert tr.score().shape == toy_images.shape
    one = split_trace(tr, 2)
    np.testing.assert_array_equal(one.final, tr.final[2])
    assert len(one.per_step_maps) == 3


def test_reverse_visits_each_step_once(toy, toy_schedule, toy_images):
    seen = []
    plan = HarmonizationPlan(12, tuple(range(12, 0, -1)))
    restore_thor(toy, toy_images[0], plan, toy_schedule, NoiseSpec(), mask_hook=lambda t, w: seen.append(t) or w)
    assert seen == list(range(12, 0, -1))


def test_incompatible_schedule_rejected(toy, toy_images):
    with pytest.raises(CompatibilityError):
        restore_plain(toy, toy_images, 10, make_linear_schedule(50), NoiseSpec())
    with pytest.raises(CompatibilityError):
        restore_thor(toy, toy_images, HarmonizationPlan(10), make_linear_schedule(100, 1e-4, 0.05),
                     NoiseSpec("simplex"))
