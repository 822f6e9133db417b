import numpy as np
import pytest
from scipy.special import log_softmax

from stabilab.errors import BadMagicError, InputError, TruncatedFileError
from stabilab.mixture import LinearClassifier
from stabilab.models import (
    MlpClassifier,
    as_mlp,
    backprop,
    forward,
    init_mlp,
    input_grad,
    load_model,
    loss,
    model_digest,
    model_from_bytes,
    model_to_bytes,
    per_example_loss,
    predict,
    save_model,
    sigmoid,
    softplus,
)
from stabilab.numerics import RngState, finite_diff_grad


def tiny_mlp(arch=(4, 6, 1), seed=0):
    return init_mlp(arch, RngState(seed, 0))


def flatten_params(model):
    return np.concatenate(
        [W.ravel() for W in model.weights] + [b.ravel() for b in model.biases]
    )


def unflatten_params(model, theta):
    out = model.copy()
    pos = 0
    for i, W in enumerate(out.weights):
        out.weights[i] = theta[pos : pos + W.size].reshape(W.shape)
        pos += W.size
    for i, b in enumerate(out.biases):
        out.biases[i] = theta[pos : pos + b.size].reshape(b.shape)
        pos += b.size
    return out


def test_init_shapes_and_scaling():
    m = init_mlp((100, 50, 3), RngState(1, 0))
    assert [W.shape for W in m.weights] == [(100, 50), (50, 3)]
    assert all(np.all(b == 0.0) for b in m.biases)
    # He scaling: std close to sqrt(2/fan_in) on a big fan-in
    assert abs(m.weights[0].std() - np.sqrt(2.0 / 100)) < 0.01
    np.testing.assert_array_equal(
        m.weights[0], init_mlp((100, 50, 3), RngState(1, 0)).weights[0]
    )
    with pytest.raises(InputError):
        init_mlp((4,), RngState(0, 0))
    with pytest.raises(InputError):
        init_mlp((4, 0, 1), RngState(0, 0))


def test_as_mlp_matches_linear_decision():
    f = LinearClassifier(np.array([0.5, -1.0, 2.0]), b=0.25)
    net = as_mlp(f)
    X = np.random.default_rng(2).normal(size=(8, 3))
    np.testing.assert_allclose(forward(net, X), f.decision_function(X), atol=0)
    np.testing.assert_array_equal(predict(net, X), f.predict(X))


def test_forward_shapes():
    m = tiny_mlp()
    X = np.random.default_rng(0).normal(size=(5, 4))
    assert forward(m, X).shape == (5,)
    assert forward(m, X[0]).shape == (1,)
    multi = tiny_mlp((4, 6, 3))
    assert forward(multi, X).shape == (5, 3)
    with pytest.raises(InputError):
        forward(m, np.zeros((5, 3)))


def test_predict_conventions():
    m = tiny_mlp()
    X = np.random.default_rng(1).normal(size=(20, 4))
    p = predict(m, X)
    assert set(np.unique(p)).issubset({-1, 1})
    multi = tiny_mlp((4, 6, 5))
    pm = predict(multi, X)
    assert pm.min() >= 0 and pm.max() < 5


def test_logistic_loss_formula():
    f = LinearClassifier(np.array([1.0, -2.0]), b=0.5)
    net = as_mlp(f)
    X = np.array([[0.3, 0.1], [-0.2, 0.4]])
    y = np.array([1, -1])
    margins = y * (X @ f.w + f.b)
    want = np.log1p(np.exp(-margins))
    np.testing.assert_allclose(per_example_loss(net, X, y, "logistic"), want, atol=1e-12)
    assert loss(net, X, y, "logistic") == pytest.approx(want.mean(), abs=1e-12)


def test_softmax_loss_matches_scipy():
    m = tiny_mlp((4, 6, 3), seed=3)
    X = np.random.default_rng(4).normal(size=(10, 4))
    y = np.random.default_rng(5).integers(0, 3, 10)
    z = forward(m, X)
    want = -log_softmax(z, axis=1)[np.arange(10), y]
    np.testing.assert_allclose(per_example_loss(m, X, y, "softmax"), want, atol=1e-12)
    assert loss(m, X, y, "softmax") == pytest.approx(want.mean(), abs=1e-12)


def test_loss_label_validation():
    m = tiny_mlp()
    X = np.zeros((2, 4))
    with pytest.raises(InputError):
        loss(m, X, np.array([0, 1]), "logistic")  # needs -1/+1
    with pytest.raises(InputError):
        loss(m, X, np.array([1]), "logistic")  # misaligned
    with pytest.raises(InputError):
        loss(m, X, np.array([1, -1]), "poisson")  # unknown kind
    multi = tiny_mlp((4, 6, 3))
    with pytest.raises(InputError):
        loss(multi, X, np.array([0, 3]), "softmax")  # out of range
    with pytest.raises(InputError):
        loss(m, X, np.array([0, 1]), "softmax")  # single logit


@pytest.mark.parametrize(
    "arch,kind", [((4, 1), "logistic"), ((4, 8, 1), "logistic"), ((4, 8, 3), "softmax")]
)
def test_backprop_matches_finite_differences(arch, kind):
    model = tiny_mlp(arch, seed=7)
    draws = RngState(11, 0).draws()
    X = draws.normal((3, 4))
    y = (
        np.where(draws.uniform(3) < 0.5, -1, 1)
        if kind == "logistic"
        else (draws.uniform(3) * arch[-1]).astype(np.int64)
    )
    grads, _ = backprop(model, X, y, kind)
    got = np.concatenate(
        [g.ravel() for g, _ in grads] + [g.ravel() for _, g in grads]
    )
    theta = flatten_params(model)
    want = finite_diff_grad(
        lambda t: loss(unflatten_params(model, t), X, y, kind), theta
    )
    err = np.max(np.abs(got - want)) / (1.0 + np.max(np.abs(want)))
    assert err < 1e-7


def test_input_grad_matches_finite_differences():
    model = tiny_mlp((4, 8, 1), seed=9)
    x = np.array([0.2, -0.4, 0.9, 0.05])
    y = np.array([1])
    got = input_grad(model, x[None, :], y, "logistic")[0]
    want = finite_diff_grad(lambda v: loss(model, v[None, :], y, "logistic"), x.copy())
    np.testing.assert_allclose(got, want, atol=1e-8)


def test_per_example_input_grads_are_independent():
    # each row of the input gradient belongs to that row's own loss
    model = tiny_mlp((3, 5, 1), seed=13)
    X = np.random.default_rng(6).normal(size=(4, 3))
    y = np.array([1, -1, 1, -1])
    whole = input_grad(model, X, y, "logistic")
    for i in range(4):
        alone = input_grad(model, X[i : i + 1], y[i : i + 1], "logistic")[0]
        np.testing.assert_allclose(whole[i], alone, atol=1e-14)


def test_model_round_trip(tmp_path):
    mlp = tiny_mlp((4, 6, 2), seed=15)
    p = tmp_path / "m.rslm"
    save_model(mlp, p)
    back = load_model(p)
    assert isinstance(back, MlpClassifier)
    for a, b in zip(mlp.weights, back.weights):
        np.testing.assert_array_equal(a, b)
    lin = LinearClassifier(np.array([1.0, -0.5]), b=2.0)
    save_model(lin, tmp_path / "l.rslm")
    lin_back = load_model(tmp_path / "l.rslm")
    assert isinstance(lin_back, LinearClassifier)
    np.testing.assert_array_equal(lin_back.w, lin.w)
    assert lin_back.b == 2.0


def test_model_digest_and_corruption():
    mlp = tiny_mlp()
    assert model_digest(mlp) == model_digest(mlp.copy())
    raw = bytearray(model_to_bytes(mlp))
    raw[:4] = b"JUNK"
    with pytest.raises(BadMagicError):
        model_from_bytes(bytes(raw))
    with pytest.raises(TruncatedFileError):
        model_from_bytes(model_to_bytes(mlp)[:-2])


def test_activation_helpers_are_stable():
    assert softplus(np.array([-800.0]))[0] == 0.0
    assert softplus(np.array([800.0]))[0] == 800.0
    assert sigmoid(np.array([-800.0]))[0] == 0.0
    assert sigmoid(np.array([800.0]))[0] == 1.0
    z = np.linspace(-30, 30, 13)
    np.testing.assert_allclose(sigmoid(z) + sigmoid(-z), np.ones_like(z), atol=1e-12)
