"""Optimizer tests: clipping, noise, the update bound and the stall schedule."""

import numpy as np
import pytest

from dngpu.autodiff import Parameter, UsageError
from dngpu.optimizer import (AdaMaxState, LrSchedule, OptimConfig, adamax_apply,
                             add_gradient_noise, clip_by_decayed_max, lr_for_maps)


def make_param(data, name="w"):
    return Parameter(np.asarray(data, dtype=np.float64), name)


class TestClip:
    def test_first_step_passthrough(self):
        g = np.array([10.0, -3.0])
        out = clip_by_decayed_max(g, np.zeros(2), 1.0)
        np.testing.assert_array_equal(out, g)

    def test_clips_to_scaled_max(self):
        out = clip_by_decayed_max(np.array([10.0]), np.array([1.0]), 2.0)
        np.testing.assert_array_equal(out, [2.0])

    def test_inside_range_unchanged(self):
        out = clip_by_decayed_max(np.array([-0.5]), np.array([1.0]), 2.0)
        np.testing.assert_array_equal(out, [-0.5])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        g = rng.normal(size=100) * 10
        u = np.abs(rng.normal(size=100))
        once = clip_by_decayed_max(g, u, 1.0)
        twice = clip_by_decayed_max(once, u, 1.0)
        np.testing.assert_array_equal(once, twice)


class TestNoise:
    def test_zero_scale_identity(self):
        g = np.array([1.0, 2.0])
        out = add_gradient_noise(g, 0.005, 0.0, np.random.default_rng(0))
        assert out is g

    def test_stddev_proportional_to_lr(self):
        rng = np.random.default_rng(1)
        g = np.zeros(1_000_000)
        out = add_gradient_noise(g, 0.005, 1.0, rng)
        assert abs(out.std() - 0.005) < 0.005 * 0.02

    def test_fixed_seed_reproducible(self):
        g = np.zeros(100)
        a = add_gradient_noise(g, 0.01, 1.0, np.random.default_rng(7))
        b = add_gradient_noise(g, 0.01, 1.0, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)


class TestAdaMax:
    def test_first_step_hand_computed(self):
        # g=1 at t=0: m=0.1, u=1, delta = (lr/(1-0.9)) * 0.1/(1+eps) = lr/(1+eps)
        cfg = OptimConfig(lr=0.005, noise_scale=0.0)
        p = make_param([1.0])
        p.grad = np.array([1.0])
        state = AdaMaxState([p])
        adamax_apply([p], state, cfg, lr=cfg.lr)
        want = 1.0 - 0.005 / (1.0 + cfg.eps)
        assert abs(float(p.data[0]) - want) < 1e-12

    def test_zero_gradients_never_move_params(self):
        cfg = OptimConfig(lr=0.01, noise_scale=0.0)
        p = make_param([1.0, -2.0, 3.0])
        state = AdaMaxState([p])
        for _ in range(5):
            p.grad = np.zeros(3)
            adamax_apply([p], state, cfg, lr=cfg.lr)
        np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])

    def test_step_bound_over_randomized_steps(self):
        # paper bound: per-element |delta| <= lr / (1 - beta1^t)
        cfg = OptimConfig(lr=0.005, noise_scale=0.0)
        rng = np.random.default_rng(2)
        p = make_param(rng.normal(size=50))
        state = AdaMaxState([p])
        for t in range(1, 1001):
            before = p.data.copy()
            p.grad = rng.normal(size=50) * 10.0 ** float(rng.integers(-3, 3))
            adamax_apply([p], state, cfg, lr=cfg.lr)
            bound = cfg.lr / (1.0 - cfg.beta1 ** t) + 1e-6
            assert np.max(np.abs(p.data - before)) <= bound

    def test_decayed_max_converges_to_gradient_magnitude(self):
        cfg = OptimConfig(lr=0.005, noise_scale=0.0)
        p = make_param([0.0])
        state = AdaMaxState([p])
        for _ in range(200):
            p.grad = np.array([0.25])
            adamax_apply([p], state, cfg, lr=cfg.lr)
        assert abs(state.u["w"][0] - 0.25) < 1e-12

    def test_nonfinite_gradient_aborts_naming_parameter(self):
        cfg = OptimConfig(lr=0.005, noise_scale=0.0)
        p = make_param([1.0], name="bad_one")
        p.grad = np.array([np.nan])
        state = AdaMaxState([p])
        with pytest.raises(UsageError, match="bad_one"):
            adamax_apply([p], state, cfg, lr=cfg.lr)
        np.testing.assert_array_equal(p.data, [1.0])  # nothing moved

    def test_clamped_parameter_stays_in_range(self):
        cfg = OptimConfig(lr=0.5, noise_scale=0.0)
        p = Parameter(np.array([0.99, -0.99]), "emb", clamp=(-1.0, 1.0))
        state = AdaMaxState([p])
        for _ in range(10):
            p.grad = np.array([-1.0, 1.0])
            adamax_apply([p], state, cfg, lr=cfg.lr)
        assert p.data.min() >= -1.0 and p.data.max() <= 1.0

    def test_deterministic_without_noise(self):
        cfg = OptimConfig(lr=0.01, noise_scale=0.0)
        results = []
        for _ in range(2):
            rng = np.random.default_rng(3)
            p = make_param(np.ones(10))
            state = AdaMaxState([p])
            for _ in range(20):
                p.grad = rng.normal(size=10)
                adamax_apply([p], state, cfg, lr=cfg.lr)
            results.append(p.data.copy())
        np.testing.assert_array_equal(results[0], results[1])

    def test_t_increments_once_per_apply(self):
        cfg = OptimConfig(lr=0.01, noise_scale=0.0)
        p = make_param([1.0])
        state = AdaMaxState([p])
        for want in range(1, 4):
            p.grad = np.array([0.5])
            adamax_apply([p], state, cfg, lr=cfg.lr)
            assert state.t == want


class TestLrSchedule:
    def test_improving_error_keeps_lr(self):
        cfg = OptimConfig(lr=0.01, patience=600, decay=0.7)
        sched = LrSchedule(cfg)
        for step in range(1, 3001):
            sched.update(1.0 / step, step)
        assert sched.lr == 0.01

    def test_flat_error_decays_after_patience(self):
        cfg = OptimConfig(lr=0.01, patience=600, decay=0.7)
        sched = LrSchedule(cfg)
        for step in range(1, 601):
            sched.update(1.0, step)
        assert abs(sched.lr - 0.01 * 0.7) < 1e-15

    def test_flat_error_decays_three_times(self):
        cfg = OptimConfig(lr=0.01, patience=600, decay=0.7)
        sched = LrSchedule(cfg)
        for step in range(1, 1801):
            sched.update(1.0, step)
        assert abs(sched.lr - 0.01 * 0.7 ** 3) < 1e-15

    def test_never_increases(self):
        cfg = OptimConfig(lr=0.01, patience=10, decay=0.5)
        sched = LrSchedule(cfg)
        rng = np.random.default_rng(4)
        last = sched.lr
        for step in range(1, 500):
            sched.update(float(rng.uniform(0.5, 1.5)), step)
            assert sched.lr <= last
            last = sched.lr

    def test_floor_at_one_percent_of_base(self):
        cfg = OptimConfig(lr=0.01, patience=10, decay=0.5)
        sched = LrSchedule(cfg)
        for step in range(1, 5000):
            sched.update(1.0, step)
        assert sched.lr >= 0.01 * cfg.lr_floor_ratio - 1e-15

    def test_scalar_round_trip(self):
        cfg = OptimConfig(lr=0.01)
        sched = LrSchedule(cfg)
        for step in range(1, 50):
            sched.update(1.0 / step, step)
        other = LrSchedule(cfg)
        other.load_scalars(sched.state_scalars())
        assert other.lr == sched.lr and other.best == sched.best
        assert other.best_step == sched.best_step


def test_lr_scaling_rule():
    assert lr_for_maps(96) == 0.005
    assert abs(lr_for_maps(48) - 0.01) < 1e-15
    assert abs(lr_for_maps(192) - 0.0025) < 1e-15
