import math

import numpy as np
import pytest

from rangediff.schedule import (
    build_cosine_schedule,
    build_linear_schedule,
    schedule_from_betas,
    schedule_from_metadata,
    schedule_to_metadata,
)


def brute_force_alpha_bars(betas):
    """Independent oracle: plain Python running product."""
    bars = [1.0]
    acc = 1.0
    for b in betas:
        acc *= 1.0 - float(b)
        bars.append(acc)
    return np.array(bars)


def test_single_step_linear():
    s = build_linear_schedule(T=1, beta_start=0.5, beta_end=0.5)
    assert s.betas.tolist() == [0.5]
    assert s.alpha_bars.tolist() == [1.0, 0.5]


def test_two_step_hand_product():
    s = build_linear_schedule(T=2, beta_start=0.1, beta_end=0.3)
    assert s.alpha_bars == pytest.approx([1.0, 0.9, 0.63], abs=1e-15)


@pytest.mark.parametrize(
    "schedule",
    [
        build_linear_schedule(1000, 1e-4, 0.02),
        build_cosine_schedule(1000),
    ],
    ids=["linear", "cosine"],
)
def test_alpha_bar_matches_product_oracle(schedule):
    oracle = brute_force_alpha_bars(schedule.betas)
    rel = np.abs(schedule.alpha_bars - oracle) / oracle
    assert rel.max() < 1e-10
    assert np.all(np.diff(schedule.alpha_bars) < 0)
    assert schedule.alpha_bars[0] == 1.0
    assert schedule.alpha_bars[-1] > 0.0


def test_cosine_alpha_bar_zero_is_one():
    for T in (1, 7, 100):
        assert build_cosine_schedule(T).alpha_bar(0) == 1.0


def test_cosine_strictly_decreasing_small_T():
    s = build_cosine_schedule(10)
    assert np.all(np.diff(s.alpha_bars) < 0)


def test_recurrence_identity():
    for s in (build_linear_schedule(200, 1e-4, 0.02), build_cosine_schedule(200)):
        for t in range(1, s.T + 1):
            assert abs(s.alpha_bar(t) - s.alpha(t) * s.alpha_bar(t - 1)) <= 1e-12


def test_signal_noise_coefficient_identity():
    s = build_linear_schedule(500, 1e-4, 0.02)
    for t in range(s.T + 1):
        ab = s.alpha_bar(t)
        total = math.sqrt(ab) ** 2 + math.sqrt(1.0 - ab) ** 2
        assert abs(total - 1.0) <= 1e-12


def test_accessor_range_checks(small_schedule):
    with pytest.raises(ValueError):
        small_schedule.beta(0)
    with pytest.raises(ValueError):
        small_schedule.beta(small_schedule.T + 1)
    with pytest.raises(ValueError):
        small_schedule.alpha_bar(-1)
    assert small_schedule.alpha_bar(0) == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T=0, beta_start=0.1, beta_end=0.2),
        dict(T=10, beta_start=0.0, beta_end=0.2),
        dict(T=10, beta_start=0.3, beta_end=0.2),
        dict(T=10, beta_start=0.1, beta_end=1.0),
    ],
)
def test_linear_rejects_bad_inputs(kwargs):
    with pytest.raises(ValueError):
        build_linear_schedule(**kwargs)


def test_cosine_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_cosine_schedule(0)
    with pytest.raises(ValueError):
        build_cosine_schedule(10, offset=0.0)


def test_from_betas_validates():
    with pytest.raises(ValueError):
        schedule_from_betas([0.1, 1.0])
    with pytest.raises(ValueError):
        schedule_from_betas([])
    s = schedule_from_betas([0.25, 0.5])
    assert s.alpha_bars.tolist() == [1.0, 0.75, 0.375]


def test_metadata_round_trip_bit_exact():
    for s in (build_linear_schedule(777, 2e-4, 0.015), build_cosine_schedule(321, 0.01)):
        meta = schedule_to_metadata(s)
        rebuilt = schedule_from_metadata(meta)
        assert np.array_equal(rebuilt.betas, s.betas)
        assert np.array_equal(rebuilt.alpha_bars, s.alpha_bars)


def test_metadata_requires_recipe():
    with pytest.raises(ValueError):
        schedule_to_metadata(schedule_from_betas([0.1]))
    with pytest.raises(ValueError):
        schedule_from_metadata({"type": "mystery"})


def test_schedules_are_immutable(small_schedule):
    with pytest.raises(ValueError):
        small_schedule.betas[0] = 0.5
