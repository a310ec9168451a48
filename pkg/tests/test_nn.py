import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from vflsim import nn
from vflsim.errors import ShapeError, StateError, ValidationError

from conftest import central_diff, min_relu_margin, rel_err


def _model(*layers):
    return nn.MlpModel([nn.Layer(np.asarray(w, float), np.asarray(b, float), act) for w, b, act in layers])


def test_identity_forward_and_backward():
    m = _model((np.eye(2), [0, 0], "identity"))
    out, trace = nn.forward(m, [[1.0, 2.0]])
    np.testing.assert_array_equal(out, [[1.0, 2.0]])
    _, g_in = nn.backward(m, trace, [[1.0, 0.0]])
    np.testing.assert_array_equal(g_in, [[1.0, 0.0]])


def test_relu_gate():
    m = _model(([[1.0], [-1.0]], [0, 0], "relu"))
    out, trace = nn.forward(m, [[3.0]])
    np.testing.assert_array_equal(out, [[3.0, 0.0]])
    grads, g_in = nn.backward(m, trace, [[0.0, 1.0]])
    # the only upstream signal hits the dead unit
    assert g_in[0, 0] == 0.0
    assert grads[0].weight[1, 0] == 0.0


def test_forward_matches_hand_rolled_reference(rng):
    m = nn.init_mlp([5, 7, 3], rng)
    x = rng.normal(size=(6, 5))
    out, _ = nn.forward(m, x)
    w1, b1 = m.layers[0].weight, m.layers[0].bias
    w2, b2 = m.layers[1].weight, m.layers[1].bias
    expected = np.zeros((6, 3))
    for r in range(6):
        hidden = [max(0.0, sum(w1[j, i] * x[r, i] for i in range(5)) + b1[j]) for j in range(7)]
        for k in range(3):
            expected[r, k] = sum(w2[k, j] * hidden[j] for j in range(7)) + b2[k]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_forward_shape_error_names_dims(rng):
    m = nn.init_mlp([4, 2], rng)
    with pytest.raises(ShapeError, match="3 columns.*expects 4"):
        nn.forward(m, np.zeros((2, 3)))


def test_backward_rejects_foreign_trace(rng):
    a, b = nn.init_mlp([3, 4, 2], rng), nn.init_mlp([3, 5, 2], rng)
    _, trace = nn.forward(a, np.ones((1, 3)))
    with pytest.raises(StateError):
        nn.backward(b, trace, np.ones((1, 2)))


def test_backward_rejects_wrong_upstream_shape(rng):
    m = nn.init_mlp([3, 2], rng)
    _, trace = nn.forward(m, np.ones((4, 3)))
    with pytest.raises(ShapeError):
        nn.backward(m, trace, np.ones((4, 3)))


def test_init_is_glorot_uniform_with_zero_bias():
    m = nn.init_mlp([30, 20], np.random.default_rng(0))
    limit = np.sqrt(6 / 50)
    assert np.all(np.abs(m.layers[0].weight) <= limit)
    assert m.layers[0].weight.std() == pytest.approx(limit / np.sqrt(3), rel=0.1)
    assert np.all(m.layers[0].bias == 0)


def test_same_seed_same_parameters():
    a = nn.init_mlp([4, 8, 3], np.random.default_rng(9))
    b = nn.init_mlp([4, 8, 3], np.random.default_rng(9))
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa, pb)


# ---------------------------------------------------------------------------
# finite-difference oracle over a model zoo


zoo = st.tuples(
    st.lists(st.integers(1, 8), min_size=2, max_size=4),  # layer sizes: depth 1..3
    st.sampled_from(["relu", "identity"]),
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=60, deadline=None)
@given(zoo)
def test_gradients_match_finite_differences(case):
    sizes, act, seed = case
    rng = np.random.default_rng(seed)
    model = nn.init_mlp(sizes, rng, hidden_activation=act, output_activation=act)
    for layer in model.layers:
        layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
    x = rng.normal(size=(3, sizes[0]))
    U = rng.normal(size=(3, sizes[-1]))
    assume(min_relu_margin(model, x) > 1e-3)

    out, trace = nn.forward(model, x)
    grads, g_in = nn.backward(model, trace, U)

    def loss():
        return float(np.sum(U * nn.forward(model, x)[0]))

    for layer, g in zip(model.layers, grads):
        assert np.all(rel_err(g.weight, central_diff(loss, layer.weight)) <= 1e-4)
        assert np.all(rel_err(g.bias, central_diff(loss, layer.bias)) <= 1e-4)
    assert np.all(rel_err(g_in, central_diff(loss, x)) <= 1e-4)


# ---------------------------------------------------------------------------
# softmax / cross-entropy


def test_softmax_examples():
    np.testing.assert_array_equal(nn.softmax([[0.0, 0.0]]), [[0.5, 0.5]])
    big = nn.softmax([[1000.0, 0.0]])
    assert np.all(np.isfinite(big))
    assert big[0, 0] == pytest.approx(1.0) and big[0, 1] < 1e-300


def test_softmax_matches_mpmath():
    mpmath.mp.dps = 50
    ours = nn.softmax([[1.0, 2.0, 3.0]])[0]
    exps = [mpmath.exp(v) for v in (1, 2, 3)]
    total = sum(exps)
    for got, e in zip(ours, exps):
        assert abs(got - float(e / total)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=1, max_size=12))
def test_softmax_rows_are_distributions(row):
    p = nn.softmax([row])
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(p >= 0) and np.all(p <= 1)


def test_cross_entropy_one_hot_equals_standard(rng):
    logits = rng.normal(size=(5, 4))
    y = np.array([0, 3, 1, 1, 2])
    loss, _ = nn.cross_entropy_soft(logits, nn.one_hot(y, 4))
    logp = nn.log_softmax(logits)
    assert loss == pytest.approx(-logp[np.arange(5), y].mean(), abs=1e-14)


def test_cross_entropy_minimum_is_entropy():
    t = np.array([[0.2, 0.3, 0.5]])
    loss, grad = nn.cross_entropy_soft(np.log(t), t)
    assert loss == pytest.approx(-(t * np.log(t)).sum(), abs=1e-14)
    np.testing.assert_allclose(grad, 0, atol=1e-15)


def test_cross_entropy_gradient_finite_differences(rng):
    logits = rng.normal(size=(4, 3))
    t = nn.softmax(rng.normal(size=(4, 3)))
    _, grad = nn.cross_entropy_soft(logits, t)
    num = central_diff(lambda: nn.cross_entropy_soft(logits, t)[0], logits)
    assert np.all(rel_err(grad, num) <= 1e-4)


def test_cross_entropy_rejects_unnormalized_targets():
    with pytest.raises(ValidationError):
        nn.cross_entropy_soft(np.zeros((1, 2)), [[0.5, 0.6]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 10_000))
def test_cross_entropy_nonnegative(n, c, seed):
    r = np.random.default_rng(seed)
    loss, _ = nn.cross_entropy_soft(r.normal(scale=5, size=(n, c)), nn.softmax(r.normal(size=(n, c))))
    assert loss >= 0


def test_binary_cross_entropy_gradient(rng):
    z = rng.normal(size=(6, 1))
    t = rng.uniform(size=6)
    loss, grad = nn.binary_cross_entropy_logits(z, t)
    sig = 1 / (1 + np.exp(-z[:, 0]))
    assert loss == pytest.approx(-np.mean(t * np.log(sig) + (1 - t) * np.log(1 - sig)), abs=1e-12)
    num = central_diff(lambda: nn.binary_cross_entropy_logits(z, t)[0], z)
    assert np.all(rel_err(grad, num) <= 1e-4)


# ---------------------------------------------------------------------------
# sgd


def test_sgd_arithmetic_and_zero_lr():
    m = _model(([[1.0]], [0.0], "identity"))
    nn.sgd_step(m, [nn.LayerGrad(np.array([[2.0]]), np.array([0.0]))], 0.1)
    assert m.layers[0].weight[0, 0] == pytest.approx(0.8)
    before = m.layers[0].weight.copy()
    nn.sgd_step(m, [nn.LayerGrad(np.array([[5.0]]), np.array([1.0]))], 0.0)
    np.testing.assert_array_equal(m.layers[0].weight, before)


def test_sgd_shape_mismatch(rng):
    m = nn.init_mlp([2, 2], rng)
    with pytest.raises(StateError):
        nn.sgd_step(m, [nn.LayerGrad(np.zeros((3, 2)), np.zeros(2))], 0.1)


def test_sgd_step_decreases_quadratic(rng):
    m = nn.init_mlp([3, 1], rng, output_activation="identity")
    x = rng.normal(size=(20, 3))
    target = x @ np.array([1.0, -2.0, 0.5])

    def loss_and_grads():
        out, trace = nn.forward(m, x)
        r = out[:, 0] - target
        grads, _ = nn.backward(m, trace, (r / len(r))[:, None])
        return 0.5 * np.mean(r**2), grads

    before, grads = loss_and_grads()
    nn.sgd_step(m, grads, 0.05)
    after, _ = loss_and_grads()
    assert after < before
