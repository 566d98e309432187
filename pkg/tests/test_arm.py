import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ticketcodec.arm import (
    SCALE_MAX,
    SCALE_MIN,
    arm_eval,
    arm_forward,
    as_float64,
    context_template,
    extract_context,
    gather_contexts,
    init_arm,
    laplace_cdf,
    laplace_integer_pmf,
    laplace_log_pmf,
    latent_rate_bits,
    latent_rate_per_element,
    raw_to_scale,
    scatter_contexts,
)
from ticketcodec.coder.latents import encode_latents, latent_bits_quantized, latent_bounds
from ticketcodec.numcore import UnstableConfigurationError, finite_diff_check


def _zero_psi(c):
    return {k: np.zeros_like(v, dtype=np.float64) for k, v in init_arm(c, 0).items()}


def _random_psi(c, seed, out_scale=0.5):
    psi = as_float64(init_arm(c, seed))
    rng = np.random.default_rng(seed)
    psi["w3"] = rng.normal(scale=out_scale, size=psi["w3"].shape)
    psi["b3"] = np.array([0.0, 4.0])
    return psi


@pytest.mark.parametrize("c", [8, 16, 24, 32])
def test_template_is_causal_and_sorted(c):
    t = context_template(c)
    assert len(t) == len(set(t)) == c
    assert all(dy < 0 or (dy == 0 and dx < 0) for dy, dx in t)
    keys = [(dy * dy + dx * dx, -dy, -dx) for dy, dx in t]
    assert keys == sorted(keys)


def test_template_prefix_property():
    assert context_template(16) == context_template(24)[:16]
    assert context_template(4) == [(0, -1), (-1, 0), (-1, 1), (-1, -1)]
    with pytest.raises(ValueError):
        context_template(0)


def test_corner_context_is_zero():
    grid = np.arange(1, 26, dtype=float).reshape(5, 5)
    assert not extract_context(grid, (0, 0), context_template(16)).any()


def test_constant_interior_context():
    grid = np.full((9, 9), 3.0)
    np.testing.assert_array_equal(extract_context(grid, (4, 4), context_template(16)), 3.0)


def test_three_by_three_hand_listing():
    grid = np.arange(1, 10, dtype=float).reshape(3, 3)
    # left, up, up-right, up-left of the centre value 5
    assert extract_context(grid, (1, 1), context_template(4)).tolist() == [4, 2, 3, 1]
    assert extract_context(grid, (1, 0), context_template(4)).tolist() == [0, 1, 2, 0]


def test_batched_contexts_match_per_position():
    rng = np.random.default_rng(0)
    grid = rng.normal(size=(6, 7))
    t = context_template(16)
    batch = gather_contexts(grid, t)
    for y in range(6):
        for x in range(7):
            np.testing.assert_array_equal(batch[y * 7 + x], extract_context(grid, (y, x), t))
    v = rng.normal(size=batch.shape)
    lhs = float((batch * v).sum())
    rhs = float((scatter_contexts(v, grid.shape, t) * grid).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_scale_mapping():
    s, _ = raw_to_scale(np.array([4.0, -100.0, 100.0]))
    assert s.tolist() == [1.0, SCALE_MIN, SCALE_MAX]
    psi = _zero_psi(8)
    psi["b3"][:] = [0.3, 4.0]
    assert arm_eval(np.zeros(8), psi) == (0.3, 1.0)
    psi["b3"][1] = -100.0
    assert arm_eval(np.zeros(8), psi)[1] == 1e-2


def test_zero_network():
    mu, b = arm_eval(np.ones(16), _zero_psi(16))
    assert mu == 0.0
    assert b == pytest.approx(math.exp(-4)) and b == pytest.approx(0.0183, abs=1e-4)


def test_non_finite_output_raises():
    psi = _zero_psi(8)
    psi["b3"][0] = np.nan
    with pytest.raises(UnstableConfigurationError):
        arm_eval(np.zeros(8), psi)


def test_batched_and_scalar_routes_agree():
    psi = _random_psi(16, 3)
    ctx = np.random.default_rng(1).normal(size=(20, 16))
    mu, raw, _ = arm_forward(ctx, psi)
    scale, _ = raw_to_scale(raw)
    for i in range(20):
        m, b = arm_eval(ctx[i], psi)
        assert m == pytest.approx(mu[i], rel=1e-12, abs=1e-14)
        assert b == pytest.approx(scale[i], rel=1e-12)


def test_pmf_at_zero():
    assert abs(float(laplace_integer_pmf(0, 0.0, 1.0)) - (1 - math.exp(-0.5))) <= 1e-9
    assert float(laplace_integer_pmf(0, 0.0, 1.0)) == pytest.approx(0.393469, abs=1e-6)


def test_pmf_mass_and_symmetry():
    k = np.arange(-50, 51)
    p = laplace_integer_pmf(k, 0.0, 1.0)
    assert p.sum() >= 1 - 1e-6
    np.testing.assert_array_equal(p, p[::-1])
    assert (p > 0).all() and (p <= 1).all()


@given(st.integers(-60, 60), st.floats(-5, 5), st.floats(1e-2, 150))
def test_pmf_matches_cdf_difference(k, mu, b):
    p = float(laplace_integer_pmf(k, mu, b))
    ref = float(laplace_cdf(k + 0.5, mu, b) - laplace_cdf(k - 0.5, mu, b))
    # Far tails underflow as probabilities; the log stays finite.
    assert 0.0 <= p <= 1.0
    assert math.isfinite(float(laplace_log_pmf(k - mu, b)))
    if ref > 1e-12:
        assert p == pytest.approx(ref, rel=1e-7)


def test_pmf_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        laplace_integer_pmf(0, 0.0, 0.0)


def test_log_pmf_gradients():
    rng = np.random.default_rng(2)
    x = rng.normal(scale=2.0, size=50)
    b = rng.uniform(0.05, 5.0, size=50)
    _, dx, db = laplace_log_pmf(x, b, with_grad=True)
    eps = 1e-6
    num_dx = (laplace_log_pmf(x + eps, b) - laplace_log_pmf(x - eps, b)) / (2 * eps)
    num_db = (laplace_log_pmf(x, b + eps) - laplace_log_pmf(x, b - eps)) / (2 * eps)
    np.testing.assert_allclose(dx, num_dx, rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(db, num_db, rtol=1e-4, atol=1e-6)


def test_half_probability_is_one_bit():
    # Find b with P(0; 0, b) = 1/2, i.e. exp(-1/(2b)) = 1/2.
    b = 0.5 / math.log(2.0)
    assert float(-laplace_log_pmf(0.0, b) / math.log(2.0)) == pytest.approx(1.0, rel=1e-12)


def test_zero_pyramid_rate():
    t = context_template(8)
    lat = [np.zeros((4, 4)), np.zeros((2, 2)), np.zeros((1, 1))]
    bits = latent_rate_bits(lat, _zero_psi(8), t)
    p0 = 1 - math.exp(-0.5 / math.exp(-4))
    assert bits == pytest.approx(21 * -math.log2(p0), rel=1e-12)


def test_rate_gradient_finite_difference():
    rng = np.random.default_rng(3)
    t = context_template(8)
    psi = _random_psi(8, 4)
    keys = sorted(psi)
    z = rng.normal(scale=2.0, size=(4, 4))
    sizes = [z.size] + [psi[k].size for k in keys]

    def loss(flat):
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        p = {k: v.reshape(psi[k].shape) for k, v in zip(keys, parts[1:])}
        bits, dz, dpsi = latent_rate_bits([parts[0].reshape(4, 4)], p, t, with_grad=True)
        return bits, np.concatenate([dz[0].ravel()] + [dpsi[k].ravel() for k in keys])

    flat = np.concatenate([z.ravel()] + [psi[k].ravel() for k in keys])
    assert finite_diff_check(loss, flat, epsilon=1e-6, n_samples=None, floor=1e-4) <= 1e-3


def test_causality_by_perturbation():
    rng = np.random.default_rng(5)
    t = context_template(16)
    psi = _random_psi(16, 6)
    z = np.round(rng.normal(scale=3.0, size=(6, 6)))
    base = latent_rate_per_element([z], psi, t)
    for q in (7, 20, 35):
        moved = z.copy()
        moved.flat[q] += 5.0
        changed = latent_rate_per_element([moved], psi, t)
        np.testing.assert_array_equal(changed[:q], base[:q])


def test_levels_do_not_share_context():
    rng = np.random.default_rng(6)
    t = context_template(8)
    psi = _random_psi(8, 7)
    a = [np.round(rng.normal(size=(4, 4))), np.zeros((2, 2))]
    b = [a[0], np.full((2, 2), 3.0)]
    np.testing.assert_array_equal(latent_rate_per_element(a, psi, t)[:16],
                                  latent_rate_per_element(b, psi, t)[:16])


def test_coded_length_matches_rate_per_grid():
    rng = np.random.default_rng(8)
    t = context_template(16)
    psi = _random_psi(16, 9, out_scale=0.3)
    lat = [np.round(rng.laplace(scale=s, size=sh)) for s, sh in ((3.0, (32, 32)), (1.5, (16, 16)), (0.7, (8, 8)))]
    for z in lat:
        lo, hi = latent_bounds([z])
        coded = 8 * len(encode_latents([z], psi, t, lo, hi))
        ideal = latent_bits_quantized([z], psi, t, lo, hi)[0]
        assert ideal <= coded <= ideal + 32 + 1e-3 * ideal
        # Tables are renormalized over [lo, hi], so they can only be cheaper.
        cont = latent_rate_bits([z], psi, t)
        assert ideal <= cont + 1e-3 * cont
