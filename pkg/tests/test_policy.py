import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drlsolve import diffcore as dc
from drlsolve import residuals as R
from drlsolve.optim import AdamState, adam_step
from drlsolve.policy import (MlpPolicy, PolicyOutput, act, forward, init_policy,
                             likelihood_weight, load_checkpoint, param_count,
                             save_checkpoint)


def naive_forward(policy, x):
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if policy.input_lo is not None:
        lo, hi = np.array(policy.input_lo), np.array(policy.input_hi)
        h = 2.0 * (h - lo) / (hi - lo) - 1.0
    widths = policy.layer_widths
    o = 0
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        w = policy.params[o:o + a * b].reshape(a, b)
        o += a * b
        h = h @ w + policy.params[o:o + b]
        o += b
        if k < len(widths) - 2:
            h = np.tanh(h)
    return h


def test_same_seed_same_parameters():
    a = init_policy(1, [32, 32, 32], 2, seed=7)
    b = init_policy(1, [32, 32, 32], 2, seed=7)
    assert a.params.tobytes() == b.params.tobytes()
    assert init_policy(1, [32, 32, 32], 2, seed=8).params.tobytes() != a.params.tobytes()


def test_parameter_count_closed_form():
    widths = [2, 32, 64, 64, 64, 64, 64, 32, 2]
    expected = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    pol = init_policy(2, widths[1:-1], 2, seed=1)
    assert pol.params.size == expected == param_count(widths) == 20994


def test_nine_output_heads():
    pol = init_policy(1, [32, 32, 32], 9, seed=3)
    assert forward(pol, [0.2]).mu.shape == (9,)


@pytest.mark.parametrize("widths", [(0, [4], 1), (1, [4, 0], 1), (1, [4], -1)])
def test_bad_widths_rejected(widths):
    with pytest.raises(ValueError):
        init_policy(*widths, seed=0)


def test_glorot_bounds_and_zero_biases():
    pol = init_policy(3, [20], 5, seed=0)
    w1 = pol.params[:60]
    assert np.all(np.abs(w1) <= math.sqrt(6 / 23))
    assert np.all(pol.params[60:80] == 0)


def test_zero_network_outputs_zero():
    pol = init_policy(2, [8, 8], 3, seed=0)
    pol.params[:] = 0
    assert np.array_equal(forward(pol, [0.4, -0.1]).mu, np.zeros(3))
    assert np.array_equal(act(pol, [0.4, -0.1]), np.zeros(3))


def test_fixed_sigma():
    pol = init_policy(1, [8], 2, seed=0, sigma0=0.1)
    for x in (-3.0, 0.0, 9.0):
        assert forward(pol, [x]).sigma.tolist() == [0.1, 0.1]


def test_forward_matches_naive():
    pol = init_policy(1, [32, 32, 32], 2, seed=21)
    ref = naive_forward(pol, [[0.5]])[0]
    assert np.max(np.abs(forward(pol, [0.5]).mu - ref)) <= 1e-12


def test_forward_with_input_scaling_matches_naive():
    pol = init_policy(2, [16, 16], 1, seed=2, input_lo=(-1, 0), input_hi=(1, 0.5))
    pts = np.array([[0.2, 0.1], [-0.9, 0.45]])
    assert np.max(np.abs(forward(pol, pts).mu - naive_forward(pol, pts))) <= 1e-12


def test_act_is_forward_mean():
    pol = init_policy(2, [16, 16], 2, seed=5)
    pts = np.random.default_rng(0).uniform(-1, 1, (100, 2))
    for p in pts:
        assert np.array_equal(act(pol, p), forward(pol, p).mu)


def test_shape_check():
    pol = init_policy(2, [4], 1, seed=0)
    with pytest.raises(dc.ShapeError):
        forward(pol, [1.0, 2.0, 3.0])


def test_likelihood_weight_values():
    assert likelihood_weight(PolicyOutput(np.zeros(1), np.array([1.0]))) == pytest.approx(
        0.3989422804014327, rel=1e-15)
    assert likelihood_weight(np.array([0.5, 0.5])) == pytest.approx(2 / math.pi, rel=1e-15)
    with pytest.raises(ValueError):
        likelihood_weight(np.array([0.1, 0.0]))


def test_trainable_sigma_positive_after_updates():
    pol = init_policy(1, [8], 2, seed=0, sigma_mode="trainable")
    state = AdamState.fresh(pol.params.size)
    rng = np.random.default_rng(1)
    for _ in range(20):
        pol.params, state = adam_step(pol.params, rng.normal(size=pol.params.size) * 50,
                                      state, 0.5)
    sig = pol.sigma_values(rng.uniform(-5, 5, (200, 1)))
    assert np.all(sig > 0)


def test_trial_composition_holds_for_any_parameters():
    rng = np.random.default_rng(3)
    for seed in range(5):
        pol = init_policy(2, [8, 8], 1, seed=seed)
        pol.params = rng.normal(scale=3.0, size=pol.params.size)
        x = rng.uniform(-1, 1, 200)
        t = rng.uniform(0, 1, 200)
        for pts, target in ((np.column_stack([x, 0 * x]), -np.sin(np.pi * x)),
                            (np.column_stack([np.ones(200), t]), 0.0),
                            (np.column_stack([-np.ones(200), t]), 0.0)):
            j = dc.seed_inputs(pts)
            u = R.burgers_trial((j.col(0), j.col(1)), pol.mu_jet(j, pol.params).col(0))
            assert np.max(np.abs(u.value.value - target)) <= 1e-12


def test_second_derivatives_vs_finite_differences():
    pol = init_policy(2, [12, 12], 1, seed=6)
    x0 = np.array([[0.25, -0.3]])
    j = pol.mu_jet(dc.seed_inputs(x0, 2), pol.params)
    h = 1e-4
    for i in range(2):
        e = np.zeros((1, 2))
        e[0, i] = h
        f = lambda p: act(pol, p[0])[0]  # noqa: E731
        fd = (f(x0 + e) - 2 * f(x0) + f(x0 - e)) / h ** 2
        assert abs(j.dd(i).value[0, 0] - fd) <= 1e-5 * max(1, abs(fd))


@given(st.integers(0, 10 ** 6), st.sampled_from(["fixed", "trainable"]))
@settings(max_examples=15, deadline=None)
def test_checkpoint_round_trip_bitwise(tmp_path_factory, seed, mode):
    pol = init_policy(2, [5, 7], 3, seed=seed, sigma_mode=mode, sigma0=0.1 + 1e-17,
                      input_lo=(-1.0, 0.0), input_hi=(1.0, 1.0 / 3.0))
    path = tmp_path_factory.mktemp("ck") / "p.bin"
    save_checkpoint(pol, path)
    back = load_checkpoint(path)
    assert back.params.tobytes() == pol.params.tobytes()
    assert (back.hidden, back.sigma_mode, back.sigma0, back.input_hi) == (
        pol.hidden, pol.sigma_mode, pol.sigma0, pol.input_hi)
    save_checkpoint(back, path.with_suffix(".2"))
    assert path.read_bytes() == path.with_suffix(".2").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_architecture_mismatch_rejected():
    with pytest.raises(dc.ShapeError):
        MlpPolicy(1, (4,), 1, np.zeros(3))
