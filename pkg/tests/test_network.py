"""Tests for network assembly, initialization, prediction and checkpoints.

Single-layer networks are checked against scalar-loop oracles written here
by hand from the architecture definition; deeper stacks are checked through
structural invariants (lengths, causality, receptive field, delegation).
"""

import numpy as np
import pytest

from wavecast.errors import CheckpointError, ConfigError
from wavecast.network import (
    NetworkConfig,
    forecast_n_steps,
    forward_conditional,
    forward_unconditional,
    init_params,
    load_params,
    param_count,
    predict_next,
    receptive_field,
    save_params,
)


def zeroed(params):
    for p in params.all_parameters():
        p.value[:] = 0.0
    return params


# ---------------------------------------------------------------------------
# Receptive field and initialization.
# ---------------------------------------------------------------------------

def test_receptive_field_values():
    assert receptive_field(NetworkConfig(layers=1, filter_width=2)) == 2
    assert receptive_field(NetworkConfig(layers=4, filter_width=2)) == 16
    assert receptive_field(NetworkConfig(layers=3, filter_width=2)) == 8


def test_init_is_deterministic():
    cfg = NetworkConfig(layers=3, channels=2, num_conditions=1, seed=11)
    a = init_params(cfg)
    b = init_params(cfg)
    for pa, pb in zip(a.all_parameters(), b.all_parameters()):
        assert np.array_equal(pa.value, pb.value)
    c = init_params(cfg, rng_seed=12)
    assert any(
        not np.array_equal(pa.value, pc.value)
        for pa, pc in zip(a.all_parameters(), c.all_parameters())
    )


def test_init_biases_zero():
    params = init_params(NetworkConfig(layers=4, channels=3, num_conditions=2, seed=5))
    for p in params.all_parameters():
        if p.name.endswith(".bias"):
            assert np.array_equal(p.value, np.zeros_like(p.value))


def test_init_weight_scale_matches_he_rule():
    # Wide middle layer so the draw count is ~1e5: weights of layer 2 have
    # shape (2, 224, 224); target std is sqrt(2 / (out_channels * k)).
    cfg = NetworkConfig(layers=3, channels=(224, 224, 224), seed=1)
    params = init_params(cfg)
    w = params.dilated[1].weights.value
    assert w.size >= 100_000
    target = np.sqrt(2.0 / (224 * 2))
    assert abs(float(np.std(w)) - target) / target < 0.02
    # M_l = 1, k = 2 gives z = 2 and unit target std.
    cfg1 = NetworkConfig(layers=1, channels=1)
    assert np.sqrt(2.0 / (1 * cfg1.filter_width)) == 1.0


def test_init_linear_tail_starts_at_zero():
    # The last dilated layer and the output convolution sit on the linear
    # tail and start at zero; every rectified branch must not.
    params = init_params(NetworkConfig(layers=4, channels=1, num_conditions=2, seed=7))
    assert np.array_equal(params.dilated[-1].weights.value, np.zeros((2, 1, 1)))
    assert np.array_equal(params.output.weights.value, np.zeros((1, 1, 1)))
    for f in params.dilated[:-1] + params.conditions:
        assert np.any(f.weights.value != 0.0)
    assert np.any(params.skip_input.weights.value != 0.0)
    # A fresh network therefore computes the zero map.
    x = np.linspace(-2, 2, 25)
    conds = [np.sin(x), np.cos(x)]
    assert np.array_equal(forward_conditional(params, x, conds), np.zeros(26))


def test_param_count_closed_form():
    for cfg in [
        NetworkConfig(layers=4, channels=1, num_conditions=0),
        NetworkConfig(layers=4, channels=1, num_conditions=2),
        NetworkConfig(layers=3, channels=(2, 3, 2), num_conditions=1),
    ]:
        params = init_params(cfg)
        actual = sum(p.value.size for p in params.all_parameters())
        assert actual == param_count(cfg)


def test_param_count_formula_independent():
    # Spelled out for the plain single-channel case: L dilated filters of
    # k weights plus a bias each, plus the 1x1 output filter.
    L, k = 4, 2
    expected = L * (k + 1) + 2
    assert param_count(NetworkConfig(layers=L, channels=1)) == expected


# ---------------------------------------------------------------------------
# Forward pass values.
# ---------------------------------------------------------------------------

def uwn_l1_oracle(x, w0, w1, b1, wo, bo):
    """Scalar-loop single-layer network: pad 2 zeros, conv, identity shortcut,
    linear output.  With one layer the dilated conv is the last one, so it
    gets no relu."""
    xp = np.concatenate([[0.0, 0.0], x])
    out = np.zeros(len(x) + 1)
    for i in range(len(out)):
        pre = b1 + w0 * xp[i + 1] + w1 * xp[i]
        out[i] = wo * (pre + xp[i + 1]) + bo
    return out


def uwn_l2_oracle(x, w0, w1, b1, u0, u1, b2, wo, bo):
    """Scalar-loop two-layer network: relu on layer 1 only, layer 2 is the
    linear tail; identity shortcuts on both."""
    xp = np.concatenate([np.zeros(4), x])
    f1 = np.zeros(len(xp) - 1)
    for i in range(len(f1)):
        f1[i] = max(b1 + w0 * xp[i + 1] + w1 * xp[i], 0.0) + xp[i + 1]
    out = np.zeros(len(x) + 1)
    for i in range(len(out)):
        pre = b2 + u0 * f1[i + 2] + u1 * f1[i]
        out[i] = wo * (pre + f1[i + 2]) + bo
    return out


def cwn_l1_oracle(x, c, w0, w1, b1, v0, v1, bv, sx, bsx, sc, bsc, wo, bo):
    """Scalar-loop single-layer conditional network: two linear branches (the
    single layer is the last, hence unrectified) plus parametrized shortcuts
    from the padded target and condition."""
    xp = np.concatenate([[0.0, 0.0], x])
    cp = np.concatenate([[0.0, 0.0], c])
    out = np.zeros(len(x) + 1)
    for i in range(len(out)):
        px = b1 + w0 * xp[i + 1] + w1 * xp[i]
        pc = bv + v0 * cp[i + 1] + v1 * cp[i]
        h = px + pc + (sx * xp[i + 1] + bsx) + (sc * cp[i + 1] + bsc)
        out[i] = wo * h + bo
    return out


def cwn_l2_oracle(x, c, w0, w1, b1, v0, v1, bv, sx, bsx, sc, bsc, u0, u1, b2, wo, bo):
    """Scalar-loop two-layer conditional network: rectified branches and
    shortcuts on layer 1, then a linear dilated layer with identity residual."""
    xp = np.concatenate([np.zeros(4), x])
    cp = np.concatenate([np.zeros(4), c])
    f1 = np.zeros(len(xp) - 1)
    for i in range(len(f1)):
        px = b1 + w0 * xp[i + 1] + w1 * xp[i]
        pc = bv + v0 * cp[i + 1] + v1 * cp[i]
        f1[i] = max(px, 0.0) + max(pc, 0.0) + (sx * xp[i + 1] + bsx) + (sc * cp[i + 1] + bsc)
    out = np.zeros(len(x) + 1)
    for i in range(len(out)):
        pre = b2 + u0 * f1[i + 2] + u1 * f1[i]
        out[i] = wo * (pre + f1[i + 2]) + bo
    return out


def test_single_layer_matches_hand_oracle():
    cfg = NetworkConfig(layers=1, channels=1, seed=3)
    params = init_params(cfg)
    params.dilated[0].weights.value[:] = np.array([[[0.7]], [[-0.4]]])  # taps 0, 1
    params.dilated[0].bias.value[:] = 0.2
    params.output.weights.value[:] = np.array([[[1.3]]])
    params.output.bias.value[:] = -0.1
    x = np.array([0.5, -1.0, 2.0, 0.3])
    got = forward_unconditional(params, x)
    want = uwn_l1_oracle(x, 0.7, -0.4, 0.2, 1.3, -0.1)
    assert got.shape == (5,)
    assert np.allclose(got, want, atol=1e-15)


def test_single_layer_conditional_matches_hand_oracle():
    cfg = NetworkConfig(layers=1, channels=1, num_conditions=1, seed=3)
    params = init_params(cfg)
    params.dilated[0].weights.value[:] = np.array([[[0.7]], [[-0.4]]])
    params.dilated[0].bias.value[:] = 0.2
    params.conditions[0].weights.value[:] = np.array([[[-0.9]], [[0.6]]])
    params.conditions[0].bias.value[:] = -0.3
    params.skip_input.weights.value[:] = 0.5
    params.skip_input.bias.value[:] = 0.05
    params.skip_conditions[0].weights.value[:] = -1.1
    params.skip_conditions[0].bias.value[:] = 0.0
    params.output.weights.value[:] = np.array([[[1.3]]])
    params.output.bias.value[:] = -0.1
    x = np.array([0.5, -1.0, 2.0, 0.3])
    c = np.array([1.5, 0.2, -0.7, 0.9])
    got = forward_conditional(params, x, [c])
    want = cwn_l1_oracle(x, c, 0.7, -0.4, 0.2, -0.9, 0.6, -0.3, 0.5, 0.05, -1.1, 0.0, 1.3, -0.1)
    assert np.allclose(got, want, atol=1e-15)


def test_two_layer_matches_hand_oracle():
    cfg = NetworkConfig(layers=2, channels=1, seed=3)
    params = init_params(cfg)
    params.dilated[0].weights.value[:] = np.array([[[0.7]], [[-0.4]]])
    params.dilated[0].bias.value[:] = 0.2
    params.dilated[1].weights.value[:] = np.array([[[-0.8]], [[0.5]]])
    params.dilated[1].bias.value[:] = -0.15
    params.output.weights.value[:] = np.array([[[1.3]]])
    params.output.bias.value[:] = -0.1
    x = np.array([0.5, -1.0, 2.0, 0.3, -0.6])
    got = forward_unconditional(params, x)
    want = uwn_l2_oracle(x, 0.7, -0.4, 0.2, -0.8, 0.5, -0.15, 1.3, -0.1)
    assert got.shape == (6,)
    assert np.allclose(got, want, atol=1e-15)


def test_two_layer_conditional_matches_hand_oracle():
    cfg = NetworkConfig(layers=2, channels=1, num_conditions=1, seed=3)
    params = init_params(cfg)
    params.dilated[0].weights.value[:] = np.array([[[0.7]], [[-0.4]]])
    params.dilated[0].bias.value[:] = 0.2
    params.conditions[0].weights.value[:] = np.array([[[-0.9]], [[0.6]]])
    params.conditions[0].bias.value[:] = -0.3
    params.skip_input.weights.value[:] = 0.5
    params.skip_input.bias.value[:] = 0.05
    params.skip_conditions[0].weights.value[:] = -1.1
    params.skip_conditions[0].bias.value[:] = 0.0
    params.dilated[1].weights.value[:] = np.array([[[-0.8]], [[0.5]]])
    params.dilated[1].bias.value[:] = -0.15
    params.output.weights.value[:] = np.array([[[1.3]]])
    params.output.bias.value[:] = -0.1
    x = np.array([0.5, -1.0, 2.0, 0.3, -0.6])
    c = np.array([1.5, 0.2, -0.7, 0.9, 0.4])
    got = forward_conditional(params, x, [c])
    want = cwn_l2_oracle(
        x, c, 0.7, -0.4, 0.2, -0.9, 0.6, -0.3, 0.5, 0.05, -1.1, 0.0, -0.8, 0.5, -0.15, 1.3, -0.1
    )
    assert np.allclose(got, want, atol=1e-15)


def test_output_length_is_input_plus_one():
    rng = np.random.default_rng(2)
    for L in (1, 2, 4):
        cfg = NetworkConfig(layers=L, channels=1, seed=0)
        params = init_params(cfg)
        for n in (1, 7, 40):
            assert forward_unconditional(params, rng.normal(size=n)).shape == (n + 1,)


def test_zero_network_outputs_zero():
    cfg = NetworkConfig(layers=4, channels=1, num_conditions=2, seed=0)
    params = zeroed(init_params(cfg))
    x = np.linspace(-1, 1, 20)
    conds = [np.sin(x), np.cos(x)]
    assert np.array_equal(forward_conditional(params, x, conds), np.zeros(21))
    ucfg = NetworkConfig(layers=4, channels=1, seed=0)
    uparams = zeroed(init_params(ucfg))
    assert np.array_equal(forward_unconditional(uparams, x), np.zeros(21))


def test_discarded_conditions_reduce_to_unconditional():
    # Zeroing every condition-branch parameter (condition filters and their
    # shortcut 1x1s) must leave exactly the unconditional function of the
    # remaining parameters.
    cfg = NetworkConfig(layers=3, channels=1, num_conditions=2, seed=9)
    params = init_params(cfg)
    for f in params.conditions + params.skip_conditions:
        f.weights.value[:] = 0.0
        f.bias.value[:] = 0.0
    rng = np.random.default_rng(4)
    x = rng.normal(size=30)
    conds = [rng.normal(size=30), rng.normal(size=30)]
    got = forward_conditional(params, x, conds)
    want = forward_unconditional(params, x)
    assert np.array_equal(got, want)


def test_no_conditions_delegates_to_unconditional():
    cfg = NetworkConfig(layers=2, channels=1, seed=6)
    params = init_params(cfg)
    x = np.random.default_rng(8).normal(size=15)
    assert np.array_equal(forward_conditional(params, x, []), forward_unconditional(params, x))


def test_condition_count_mismatch_rejected():
    cfg = NetworkConfig(layers=2, channels=1, num_conditions=1, seed=0)
    params = init_params(cfg)
    x = np.ones(10)
    with pytest.raises(ConfigError):
        forward_conditional(params, x, [])
    with pytest.raises(ConfigError):
        forward_conditional(params, x, [x, x])


def test_filter_width_other_than_two_rejected_in_forward():
    cfg = NetworkConfig(layers=2, filter_width=3, channels=1, seed=0)
    params = init_params(cfg)
    with pytest.raises(ConfigError):
        forward_unconditional(params, np.ones(30))


# ---------------------------------------------------------------------------
# Causality and receptive field.
# ---------------------------------------------------------------------------

def test_causality_and_receptive_field_bound():
    cfg = NetworkConfig(layers=3, channels=1, num_conditions=1, seed=14)
    params = init_params(cfg)
    r = receptive_field(cfg)
    rng = np.random.default_rng(21)
    n = 40
    x = rng.normal(size=n)
    c = rng.normal(size=n)
    base = forward_conditional(params, x, [c])
    for _ in range(25):
        t = int(rng.integers(0, n - 1))
        # Perturb strictly after t: predictions up to index t+1 must not move.
        x2, c2 = x.copy(), c.copy()
        if rng.random() < 0.5:
            x2[t + 1:] += rng.normal(size=n - t - 1)
        else:
            c2[t + 1:] += rng.normal(size=n - t - 1)
        after = forward_conditional(params, x2, [c2])
        assert np.array_equal(base[: t + 2], after[: t + 2])
        # Perturb strictly before t+1-r: prediction at index t+1 must not move.
        lo = t + 1 - r
        if lo > 0:
            x3, c3 = x.copy(), c.copy()
            x3[:lo] += rng.normal(size=lo)
            c3[:lo] += rng.normal(size=lo)
            after = forward_conditional(params, x3, [c3])
            assert after[t + 1] == base[t + 1]


# ---------------------------------------------------------------------------
# Prediction and iterated forecasting.
# ---------------------------------------------------------------------------

def test_predict_next_matches_forward_tail():
    cfg = NetworkConfig(layers=4, channels=1, num_conditions=2, seed=31)
    params = init_params(cfg)
    r = receptive_field(cfg)
    rng = np.random.default_rng(33)
    x = rng.normal(size=60)
    conds = [rng.normal(size=60) for _ in range(2)]
    full = forward_conditional(params, x, conds)
    single = predict_next(params, x[-r:], [c[-r:] for c in conds])
    assert single == full[-1]
    longer = predict_next(params, x, conds)  # longer window: trailing r used
    assert longer == full[-1]


def test_predict_next_zero_network():
    params = zeroed(init_params(NetworkConfig(layers=2, channels=1, seed=0)))
    assert predict_next(params, np.ones(4)) == 0.0


def test_predict_next_short_window_rejected():
    params = init_params(NetworkConfig(layers=4, channels=1, seed=0))
    with pytest.raises(ConfigError):
        predict_next(params, np.ones(15))  # r is 16


def test_forecast_one_step_equals_predict_next():
    cfg = NetworkConfig(layers=3, channels=1, seed=17)
    params = init_params(cfg)
    x = np.random.default_rng(18).normal(size=20)
    out = forecast_n_steps(params, x, 1)
    assert out.shape == (1,)
    assert out[0] == predict_next(params, x)


def test_forecast_zero_network_is_zeros():
    params = zeroed(init_params(NetworkConfig(layers=2, channels=1, seed=0)))
    assert np.array_equal(forecast_n_steps(params, np.ones(10), 5), np.zeros(5))


def test_forecast_two_steps_manual_substitution():
    # Step two must see the step-one prediction in place of an observation.
    cfg = NetworkConfig(layers=1, channels=1, seed=3)
    params = init_params(cfg)
    params.dilated[0].weights.value[:] = np.array([[[0.8]], [[0.1]]])
    params.dilated[0].bias.value[:] = 0.05
    params.output.weights.value[:] = np.array([[[0.9]]])
    params.output.bias.value[:] = 0.0
    x = np.array([0.4, 1.2])
    got = forecast_n_steps(params, x, 2)
    step1 = uwn_l1_oracle(x, 0.8, 0.1, 0.05, 0.9, 0.0)[-1]
    step2 = uwn_l1_oracle(np.array([0.4, 1.2, step1]), 0.8, 0.1, 0.05, 0.9, 0.0)[-1]
    assert got[0] == pytest.approx(step1, abs=1e-15)
    assert got[1] == pytest.approx(step2, abs=1e-15)


def test_forecast_holds_conditions_at_last_value():
    # With the condition branch dominant and the target branch zeroed, every
    # step repeats the function of the held-constant condition value.
    cfg = NetworkConfig(layers=1, channels=1, num_conditions=1, seed=3)
    params = zeroed(init_params(cfg))
    params.skip_conditions[0].weights.value[:] = 1.0
    params.output.weights.value[:] = 1.0
    x = np.array([5.0, 5.0])
    c = np.array([1.0, 3.0])
    got = forecast_n_steps(params, x, 4, [c])
    assert np.array_equal(got, np.full(4, 3.0))


# ---------------------------------------------------------------------------
# Checkpoints.
# ---------------------------------------------------------------------------

def test_save_load_round_trip_bitwise(tmp_path):
    cfg = NetworkConfig(layers=4, channels=(1, 2, 2, 1), num_conditions=2, seed=44)
    params = init_params(cfg)
    path = tmp_path / "model.json"
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.config == cfg
    originals = list(params.all_parameters())
    restored = list(loaded.all_parameters())
    assert len(originals) == len(restored)
    for a, b in zip(originals, restored):
        assert a.value.tobytes() == b.value.tobytes()
    # And the restored network computes the same function, bitwise.
    rng = np.random.default_rng(5)
    x = rng.normal(size=25)
    conds = [rng.normal(size=25) for _ in range(2)]
    assert np.array_equal(
        forward_conditional(params, x, conds), forward_conditional(loaded, x, conds)
    )


def test_load_with_mismatched_config_rejected(tmp_path):
    cfg = NetworkConfig(layers=4, channels=1, seed=0)
    path = tmp_path / "model.json"
    save_params(init_params(cfg), path)
    with pytest.raises(CheckpointError) as err:
        load_params(path, expected_config=NetworkConfig(layers=3, channels=1, seed=0))
    assert "layers" in str(err.value)


def test_load_rejects_tampered_payload(tmp_path):
    cfg = NetworkConfig(layers=2, channels=1, seed=0)
    path = tmp_path / "model.json"
    save_params(init_params(cfg), path)
    text = path.read_text().replace('"format_version": 1', '"format_version": 99')
    path.write_text(text)
    with pytest.raises(CheckpointError):
        load_params(path)


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(layers=0)
    with pytest.raises(ConfigError):
        NetworkConfig(layers=2, channels=(1, 2, 3))
    with pytest.raises(ConfigError):
        NetworkConfig(layers=2, channels=0)
    with pytest.raises(ConfigError):
        NetworkConfig(layers=2, num_conditions=-1)
    with pytest.raises(ConfigError):
        NetworkConfig(layers=2, l2_gamma=-0.5)
