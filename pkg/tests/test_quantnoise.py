import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import kstest

from ticketcodec.numcore import derive_stream
from ticketcodec.quantnoise import (
    STAGE2_TEMPERATURE,
    PlateauDecay,
    StageSchedule,
    hard_round,
    hard_round_surrogate_grad,
    kumaraswamy_b,
    kumaraswamy_noise,
    schedule_at,
    soft_round,
    soft_round_grad,
)


def _soft_round_mp(z, t):
    mpmath.mp.dps = 40
    z, t = mpmath.mpf(z), mpmath.mpf(t)
    base = mpmath.floor(z)
    delta = z - base - mpmath.mpf("0.5")
    return base + mpmath.mpf("0.5") + mpmath.tanh(delta / t) / (2 * mpmath.tanh(1 / (2 * t)))


def test_soft_round_integer_fixed_points():
    for t in (0.05, 0.3, 1.0, 5.0):
        for k in (-3.0, 0.0, 1.0, 7.0):
            assert soft_round(k, t) == k


def test_soft_round_closed_form_value():
    ref = float(_soft_round_mp(0.3, 0.3))
    assert abs(ref - 0.18704922604) < 1e-10
    assert abs(float(soft_round(0.3, 0.3)) - ref) < 1e-14


def test_soft_round_low_temperature_limit():
    assert abs(float(soft_round(0.3, 1e-4))) <= 1e-3


def test_soft_round_matches_hard_round_away_from_halves(rng):
    z = rng.uniform(-20, 20, 10_000)
    frac = np.abs(z - np.floor(z) - 0.5)
    z = z[frac >= 0.01]
    assert np.max(np.abs(soft_round(z, 1e-4) - hard_round(z))) <= 1e-3


def test_soft_round_gradient_matches_finite_differences(rng):
    z = rng.uniform(-3, 3, 200)
    h = 1e-6
    fd = (soft_round(z + h, 0.3) - soft_round(z - h, 0.3)) / (2 * h)
    np.testing.assert_allclose(soft_round_grad(z, 0.3), fd, rtol=1e-6)


@given(st.integers(-50, 50), st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6),
       st.floats(0.05, 2.0))
def test_soft_round_strictly_increasing(k, u, v, t):
    a, b = sorted((u, v))
    if b - a < 1e-6:
        return
    lo, hi = k - 0.5 + a, k - 0.5 + b
    assert soft_round(lo, t) < soft_round(hi, t)


def test_nonpositive_temperature():
    with pytest.raises(ValueError):
        soft_round(0.2, 0.0)


def test_kumaraswamy_shape():
    assert kumaraswamy_b(1.0) == 1.0
    assert kumaraswamy_b(2.0) == 2.5
    a = 2.0
    b = kumaraswamy_b(a)
    mode = ((a - 1) / (a * b - 1)) ** (1 / a)
    assert abs(mode - 0.5) < 1e-12


def test_kumaraswamy_uniform_at_one():
    u = kumaraswamy_noise(1.0, derive_stream(0, "kumaraswamy"), 10_000)
    stat, p = kstest(u + 0.5, "uniform")
    assert stat <= 0.02 and p > 0.01


def test_kumaraswamy_support_and_peak():
    u = kumaraswamy_noise(2.0, derive_stream(1, "kumaraswamy"), 10_000)
    assert np.all((u > -0.5) & (u < 0.5))
    assert np.std(u) < 1 / math.sqrt(12)


def test_kumaraswamy_rejects_small_strength():
    with pytest.raises(ValueError):
        kumaraswamy_noise(0.5, derive_stream(0, "k"), 3)


def test_hard_round_ties_and_surrogate():
    np.testing.assert_array_equal(hard_round(np.array([0.5, -0.5, 2.4, -2.6, 1.5])), [1, -1, 2, -3, 2])
    assert hard_round_surrogate_grad(0.2) == soft_round_grad(0.2, STAGE2_TEMPERATURE)


def test_stage_one_endpoints_exact():
    s = StageSchedule.stage1(1000)
    assert schedule_at(s, 0) == (1e-2, 0.3, 2.0)
    lr, t, a = schedule_at(s, 999)
    assert (t, a) == (0.1, 1.0)
    assert abs(lr) < 1e-18


def test_stage_one_monotone():
    s = StageSchedule.stage1(50)
    vals = [s.at(i) for i in range(50)]
    for (l0, t0, a0), (l1, t1, a1) in zip(vals, vals[1:]):
        assert l1 <= l0 and t1 <= t0 and a1 <= a0


def test_stage_two_values():
    s = StageSchedule.stage2(100)
    assert s.at(0) == (1e-4, 1e-4, 1.0)
    assert not s.noise
    with pytest.raises(ValueError):
        s.at(100)


def test_plateau_decay_three_times():
    p = PlateauDecay(1e-4, patience=40, decay=0.8)
    p.step(1.0)
    for _ in range(3 * 40):
        p.step(2.0)
    assert p.n_decays == 3
    assert p.lr == pytest.approx(1e-4 * 0.8 ** 3, rel=1e-15)


def test_plateau_floor_and_reset():
    p = PlateauDecay(1e-7, patience=1, decay=0.1, floor=1e-8)
    p.step(1.0)
    for _ in range(5):
        p.step(1.0)
    assert p.lr == 1e-8
    q = PlateauDecay(1.0, patience=2)
    for loss in (5.0, 4.0, 3.0, 2.0):
        q.step(loss)
    assert q.n_decays == 0
