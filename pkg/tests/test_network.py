import numpy as np
import pytest

from wtfree import ConfigError, ContractError, DimensionError
from wtfree.layers import AvgPool, Conv, Dense, FeedbackMode, Flatten, Relu
from wtfree.network import (
    NetworkSpec,
    build_lenet,
    init_network,
    loss_and_output_delta,
    network_backward,
    network_forward,
    network_logits,
    predictions,
    softmax_probs,
    tie_feedback,
)
from wtfree.tensor import make_rng

from .naive import central_difference, relative_error

BP = FeedbackMode.WEIGHT_TRANSPORT
FA = FeedbackMode.FEEDBACK_ALIGNMENT


def tiny_net(n_classes=3):
    """Small conv net with the same layer vocabulary as the full model."""
    return NetworkSpec(
        layers=(
            Conv(1, 2, 3),
            Relu(),
            AvgPool(),
            Flatten(),
            Dense(8, 5),
            Relu(),
            Dense(5, n_classes),
        ),
        input_shape=(1, 6, 6),
        n_classes=n_classes,
    )


# ------------------------------------------------------------ spec walks


def test_lenet_shapes_mnist():
    spec = build_lenet((1, 28, 28), 10)
    shapes = spec.shapes()
    assert shapes[0] == (1, 28, 28)
    assert (6, 24, 24) in shapes and (6, 12, 12) in shapes
    assert (16, 8, 8) in shapes and (16, 4, 4) in shapes
    assert (256,) in shapes
    assert shapes[-1] == (10,)


def test_lenet_shapes_cifar():
    spec = build_lenet((3, 32, 32), 10)
    shapes = spec.shapes()
    assert (16, 5, 5) in shapes
    assert (400,) in shapes
    assert shapes[-1] == (10,)


def test_lenet_rejects_tiny_inputs():
    with pytest.raises(ConfigError):
        build_lenet((1, 8, 8), 10)


def test_network_spec_catches_shape_arithmetic_errors():
    with pytest.raises(ConfigError):
        NetworkSpec(layers=(Flatten(), Dense(99, 3)), input_shape=(1, 4, 4), n_classes=3)
    with pytest.raises(ConfigError):
        NetworkSpec(layers=(Flatten(), Dense(16, 4)), input_shape=(1, 4, 4), n_classes=3)
    with pytest.raises(ConfigError):
        NetworkSpec(layers=(Conv(2, 4, 3),), input_shape=(1, 6, 6), n_classes=4)


def test_network_spec_dict_round_trip():
    spec = build_lenet((1, 28, 28), 10)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


# ------------------------------------------------------------------ init


def test_init_network_layout_and_determinism():
    spec = tiny_net()
    states = init_network(spec, 11, 22)
    assert len(states) == len(spec.layers)
    assert states[0] is not None and states[4] is not None and states[6] is not None
    assert states[1] is None and states[2] is None and states[3] is None

    again = init_network(spec, 11, 22)
    for a, b in zip(states, again):
        if a is not None:
            np.testing.assert_array_equal(a.weight, b.weight)
            np.testing.assert_array_equal(a.feedback, b.feedback)


def test_feedback_seed_only_changes_feedback():
    spec = tiny_net()
    a = init_network(spec, 11, 22)
    b = init_network(spec, 11, 23)
    for sa, sb in zip(a, b):
        if sa is None:
            continue
        np.testing.assert_array_equal(sa.weight, sb.weight)
        assert not np.array_equal(sa.feedback, sb.feedback)


# --------------------------------------------------------------- forward


def test_forward_single_sample_matches_batch_row():
    spec = tiny_net()
    states = init_network(spec, 1, 2)
    x = make_rng(5).random((4, 1, 6, 6))
    batch = network_logits(spec, states, x)
    assert batch.shape == (4, 3)
    for n in range(4):
        row = network_logits(spec, states, x[n])
        assert row.shape == (3,)
        # Equal up to accumulation order: batch-of-1 and batch-of-4 matmuls
        # may round differently in the last ulp.
        np.testing.assert_allclose(row, batch[n], rtol=0, atol=1e-14)


def test_forward_rejects_wrong_shape():
    spec = tiny_net()
    states = init_network(spec, 1, 2)
    with pytest.raises(DimensionError):
        network_logits(spec, states, np.zeros((2, 1, 5, 5)))
    with pytest.raises(ContractError):
        network_logits(spec, states[:-1], np.zeros((2, 1, 6, 6)))


# ------------------------------------------------------------------ loss


def test_loss_hand_case_uniform_logits():
    loss, delta = loss_and_output_delta(np.zeros(2), np.array(0))
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)
    np.testing.assert_allclose(delta, [-0.5, 0.5], atol=1e-15)


def test_loss_is_stable_for_huge_logits():
    loss, delta = loss_and_output_delta(np.array([1000.0, 0.0]), np.array(0))
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(delta))


def test_loss_batch_matches_per_sample():
    rng = make_rng(4)
    logits = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, size=6)
    losses, delta = loss_and_output_delta(logits, labels)
    assert losses.shape == (6,) and delta.shape == (6, 4)
    for n in range(6):
        ln, dn = loss_and_output_delta(logits[n], labels[n])
        assert losses[n] == pytest.approx(ln, abs=0)
        np.testing.assert_array_equal(delta[n], dn)


def test_loss_delta_matches_finite_differences():
    rng = make_rng(9)
    logits = rng.standard_normal((3, 5))
    labels = np.array([1, 0, 4])

    def f(z):
        losses, _ = loss_and_output_delta(z, labels)
        return float(losses.sum())

    _, delta = loss_and_output_delta(logits, labels)
    assert relative_error(delta, central_difference(f, logits)) < 1e-9


def test_loss_label_validation():
    with pytest.raises(ContractError):
        loss_and_output_delta(np.zeros((2, 3)), np.array([0.0, 1.0]))
    with pytest.raises(ContractError):
        loss_and_output_delta(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(DimensionError):
        loss_and_output_delta(np.zeros((2, 3)), np.array([0, 1, 2]))


def test_softmax_rows_sum_to_one():
    p = softmax_probs(make_rng(0).standard_normal((5, 7)) * 30)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_predictions_argmax():
    logits = np.array([[0.1, 0.9, 0.3], [2.0, -1.0, 2.0]])
    np.testing.assert_array_equal(predictions(logits), [1, 0])


# ----------------------------------------- end-to-end gradient checking


def relu_margins(spec, states, x):
    """Smallest |pre-activation| feeding any relu, to keep FD off the kink."""
    margins = []
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 3:
        h = h[np.newaxis]
    from wtfree.layers import layer_forward

    for layer, state in zip(spec.layers, states):
        if isinstance(layer, Relu):
            margins.append(float(np.abs(h).min()))
        h, _ = layer_forward(layer, state, h)
    return min(margins)


def test_network_gradients_match_finite_differences():
    spec = tiny_net()
    states = init_network(spec, 21, 22)
    rng = make_rng(12)
    x = rng.random((2, 1, 6, 6))
    labels = np.array([0, 2])
    # FD uses h=1e-5, so stay well clear of the relu kink.
    assert relu_margins(spec, states, x) > 1e-2

    logits, tapes = network_forward(spec, states, x)
    _, delta = loss_and_output_delta(logits, labels)
    input_grad, grads = network_backward(spec, states, tapes, delta, BP)

    def loss_of_input(xv):
        losses, _ = loss_and_output_delta(network_logits(spec, states, xv), labels)
        return float(losses.sum())

    assert relative_error(input_grad, central_difference(loss_of_input, x)) < 1e-6

    for i, g in enumerate(grads):
        if g is None:
            continue
        dw, db = g

        def loss_of_weight(wv, i=i):
            patched = list(states)
            patched[i] = states[i].with_params(wv, states[i].bias)
            losses, _ = loss_and_output_delta(network_logits(spec, patched, x), labels)
            return float(losses.sum())

        def loss_of_bias(bv, i=i):
            patched = list(states)
            patched[i] = states[i].with_params(states[i].weight, bv)
            losses, _ = loss_and_output_delta(network_logits(spec, patched, x), labels)
            return float(losses.sum())

        assert relative_error(dw, central_difference(loss_of_weight, states[i].weight)) < 1e-6
        assert relative_error(db, central_difference(loss_of_bias, states[i].bias)) < 1e-6


def test_batched_input_grad_is_per_sample_exact():
    # Each row of the batched input gradient equals the gradient computed
    # for that sample alone: batching introduces no cross-terms, only
    # last-ulp accumulation-order noise.
    spec = tiny_net()
    states = init_network(spec, 3, 4)
    rng = make_rng(6)
    x = rng.random((3, 1, 6, 6))
    labels = np.array([1, 2, 0])
    logits, tapes = network_forward(spec, states, x)
    _, delta = loss_and_output_delta(logits, labels)
    gx, _ = network_backward(spec, states, tapes, delta, BP)
    for n in range(3):
        ln, tn = network_forward(spec, states, x[n])
        _, dn = loss_and_output_delta(ln, labels[n])
        gn, _ = network_backward(spec, states, tn, dn, BP)
        np.testing.assert_allclose(gx[n], gn, rtol=0, atol=1e-14)


def test_modes_agree_bitwise_when_tied():
    spec = tiny_net()
    states = tie_feedback(init_network(spec, 41, 42))
    x = make_rng(43).random((2, 1, 6, 6))
    labels = np.array([0, 1])
    out = {}
    for mode in (BP, FA):
        logits, tapes = network_forward(spec, states, x)
        _, delta = loss_and_output_delta(logits, labels)
        out[mode] = network_backward(spec, states, tapes, delta, mode)
    gx_bp, grads_bp = out[BP]
    gx_fa, grads_fa = out[FA]
    np.testing.assert_array_equal(gx_bp, gx_fa)
    for gb, gf in zip(grads_bp, grads_fa):
        if gb is None:
            assert gf is None
            continue
        np.testing.assert_array_equal(gb[0], gf[0])
        np.testing.assert_array_equal(gb[1], gf[1])


def test_modes_differ_with_independent_feedback():
    spec = tiny_net()
    states = init_network(spec, 41, 42)
    x = make_rng(44).random((1, 1, 6, 6))
    labels = np.array([2])
    gx = {}
    for mode in (BP, FA):
        logits, tapes = network_forward(spec, states, x)
        _, delta = loss_and_output_delta(logits, labels)
        gx[mode], _ = network_backward(spec, states, tapes, delta, mode)
    assert not np.array_equal(gx[BP], gx[FA])
