import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ticketcodec.complexity import count_macs
from ticketcodec.model import ArchConfig, CodecModel
from ticketcodec.modnet import modnet_widths
from ticketcodec.numcore import finite_diff_check, gelu, gelu_grad
from ticketcodec.supermask import (
    SuperMaskNet,
    active_count,
    compute_mask,
    layer_shapes,
    pixel_coords,
    synth_backward,
    synth_forward,
    update_scores,
)


def test_two_layer_mask_example():
    scores = [np.array([[1.0, 5.0, 3.0]]), np.array([[2.0, 4.0, 6.0]])]
    masks = compute_mask(scores, 0.5)
    assert masks[0].astype(int).tolist() == [[0, 1, 0]]
    assert masks[1].astype(int).tolist() == [[0, 1, 1]]


def test_full_ratio_and_scaling():
    rng = np.random.default_rng(0)
    scores = [rng.normal(size=(3, 4)), rng.normal(size=(2, 5))]
    assert all(m.all() for m in compute_mask(scores, 1.0))
    a = compute_mask(scores, 0.3)
    b = compute_mask([7 * s for s in scores], 0.3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_tie_break_layer_then_row_major():
    scores = [np.zeros((2, 2)), np.zeros((1, 3))]
    masks = compute_mask(scores, 3 / 7)
    flat = np.concatenate([m.ravel() for m in masks])
    assert flat.astype(int).tolist() == [1, 1, 1, 0, 0, 0, 0]


@pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
def test_invalid_ratio(ratio):
    with pytest.raises(ValueError):
        compute_mask([np.ones((2, 2))], ratio)


@pytest.mark.parametrize("ratio", [round(0.1 * k, 1) for k in range(1, 10)])
def test_cardinality_on_grid(ratio):
    net = SuperMaskNet((32, 24, 16), modnet_widths(32, 0), ratio, seed=3)
    n = net.n_weights
    assert n == 2 * 32 + 35 * 24 + 30 * 16 + 54 * 3
    ones = sum(int(m.sum()) for m in net.masks())
    assert ones == int(np.floor(ratio * n + 0.5)) == active_count(ratio, n)


@given(st.floats(0.05, 1.0), st.floats(0.01, 100.0), st.floats(-50, 50), st.integers(0, 2 ** 32))
def test_argtop_affine_invariance(ratio, scale, shift, seed):
    rng = np.random.default_rng(seed)
    scores = [rng.normal(size=(4, 3)), rng.normal(size=(5, 2))]
    a = compute_mask(scores, ratio)
    b = compute_mask([scale * s + shift for s in scores], ratio)
    # Affine maps can merge distinct floats; skip draws where that happens.
    flat = np.concatenate([s.ravel() for s in scores])
    moved = np.concatenate([(scale * s + shift).ravel() for s in scores])
    if len(np.unique(moved)) == len(np.unique(flat)):
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_layer_dims_base_and_improved():
    assert layer_shapes((32, 24, 16), modnet_widths(48, 0)) == [(32, 2), (24, 35), (16, 30), (3, 70)]
    assert layer_shapes((32, 24, 16), modnet_widths(32, 1)) == [(32, 2), (24, 38), (16, 33), (3, 57)]


def test_full_mask_zero_mods_single_pixel_is_dense_mlp():
    net = SuperMaskNet((4, 3, 2), [1, 1, 1], 1.0, seed=1, dtype=np.float64)
    x = np.array([[0.2], [-0.4]])
    mods = [np.zeros((1, 1))] * 3
    rgb, _ = net.forward(x, mods)
    h = x
    for i, w in enumerate(net.w0):
        g = h if i == 0 else np.vstack([np.zeros((1, 1)), h])
        h = gelu(w @ g) if i < 3 else np.tanh(w @ g)
    np.testing.assert_allclose(rgb, (h + 1) / 2, rtol=1e-12)


def test_hand_built_two_neuron_net():
    # One hidden GELU neuron pair and a single output, no modulation.
    w1 = np.array([[0.5, -1.0], [2.0, 0.25]])
    w2 = np.array([[1.5, -0.5]])
    x = np.array([[0.3], [0.8]])
    a1 = w1 @ x
    h = a1 * 0.5 * (1 + np.vectorize(math.erf)(a1 / np.sqrt(2)))
    expect = (np.tanh(w2 @ h) + 1) / 2
    rgb, _ = synth_forward([w1, w2], x, [np.zeros((0, 1))])
    np.testing.assert_allclose(rgb, expect, atol=1e-12)


def test_ste_score_gradient_product_form():
    # Score gradient = dL/da_k * w0_kj * g_j for every weight, masked or not.
    w0 = [np.array([[0.7, -0.3], [0.4, 1.1]]), np.array([[0.9, -1.2]])]
    mask = [np.array([[1, 0], [1, 1]], bool), np.array([[1, 0]], bool)]
    x = np.array([[0.6], [-0.2]])
    eff = [w * m for w, m in zip(w0, mask)]
    rgb, tape = synth_forward(eff, x, [np.zeros((0, 1))])
    g_out = np.array([[1.3]])
    wg, _ = synth_backward(eff, tape, g_out)
    score_grads = [g * w for g, w in zip(wg, w0)]
    # Hand chain rule.
    a1 = eff[0] @ x
    h = gelu(a1)
    y = np.tanh(eff[1] @ h)
    d_a2 = 0.5 * g_out * (1 - y ** 2)
    d_a1 = (eff[1].T @ d_a2) * gelu_grad(a1)
    np.testing.assert_array_equal(score_grads[1], d_a2 @ h.T * w0[1])
    np.testing.assert_allclose(score_grads[0], d_a1 @ x.T * w0[0], rtol=0, atol=1e-15)
    # The masked output weight still receives a gradient.
    assert eff[1][0, 1] == 0.0 and score_grads[1][0, 1] != 0.0


def test_single_weight_chain_rule():
    # Layer 1 has one hidden input h and one modulation input m = 2.
    w = [np.array([[1.0]]), np.array([[0.0, 0.8]])]
    rgb, tape = synth_forward(w, np.array([[0.1]]), [np.array([[2.0]])])
    g = 0.7
    wg, mg = synth_backward(w, tape, np.array([[g]]))
    sigma = tape.act_grads[-1][0, 0]
    assert wg[1][0, 0] == pytest.approx(0.5 * g * sigma * 2.0, rel=1e-12)
    assert mg[0][0, 0] == 0.0


def test_modulation_gradients_finite_difference():
    rng = np.random.default_rng(2)
    net = SuperMaskNet((5, 4, 3), [2, 3, 4], 0.6, seed=9, dtype=np.float64)
    coords = pixel_coords(2, 2, np.float64)
    masks = net.masks()
    weights = net.effective_weights(masks)
    mods = [rng.normal(size=(k, 4)) for k in (2, 3, 4)]
    target = rng.random((3, 4))
    sizes = [m.size for m in mods]

    def loss(flat):
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        ms = [p.reshape(m.shape) for p, m in zip(parts, mods)]
        rgb, tape = synth_forward(weights, coords, ms)
        diff = rgb - target
        _, dm = synth_backward(weights, tape, 2 * diff)
        return float((diff ** 2).sum()), np.concatenate([d.ravel() for d in dm])

    flat = np.concatenate([m.ravel() for m in mods])
    assert finite_diff_check(loss, flat, epsilon=1e-6, n_samples=None) <= 1e-3


def test_channel_mismatch_names_layer():
    net = SuperMaskNet((4, 3, 2), [1, 1, 1], 1.0, seed=0)
    mods = [np.zeros((1, 1)), np.zeros((2, 1)), np.zeros((1, 1))]
    with pytest.raises(ValueError, match="layer 2"):
        net.forward(pixel_coords(1, 1), mods)


def test_update_scores_sgd():
    s = [np.array([[1.0]])]
    update_scores(s, [np.array([[2.0]])], 0.1)
    assert s[0][0, 0] == pytest.approx(0.8)
    t = [np.array([[0.3, -0.2]])]
    update_scores(t, [np.zeros((1, 2))], 0.1)
    assert t[0].tolist() == [[0.3, -0.2]]


def test_w0_read_only():
    net = SuperMaskNet((4, 3, 2), [1, 1, 1], 0.5, seed=1)
    with pytest.raises(ValueError):
        net.w0[0][0, 0] = 1.0


def test_coordinates():
    c = pixel_coords(3, 2, np.float64)
    assert c[:, 0].tolist() == [-1.0, -1.0]
    assert c[:, -1].tolist() == [1.0, 1.0]
    assert c[0].tolist() == [-1, -1, 0, 0, 1, 1]
    assert pixel_coords(1, 1).tolist() == [[0.0], [0.0]]


def _macs(ratio, mode="full"):
    arch = ArchConfig(d=32, c=16, mask_ratio=ratio, mode=mode)
    return count_macs(CodecModel(16, 16, arch, seed=0))


def test_macs_supermask_term():
    n = 1546
    assert _macs(1.0).synth_active == n
    assert _macs(0.5).synth_active == round(0.5 * n)
    for r in (0.1, 0.3, 0.7, 1.0):
        m = _macs(r)
        assert m.lower <= m.upper
        assert m.upper - m.lower == n - active_count(r, n)


def test_macs_decrease_linearly_with_sparsity():
    ratios = [0.1 * k for k in range(1, 10)]
    lows = [_macs(r).lower for r in ratios]
    shared = _macs(0.5).shared
    for r, low in zip(ratios, lows):
        assert low == shared + active_count(r, 1546)
    assert all(a < b for a, b in zip(lows, lows[1:]))
