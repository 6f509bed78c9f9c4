import numpy as np
import pytest

from retro_omrl.diffcompute import (
    ApproximatorSpec,
    NonFiniteError,
    OptimizerState,
    ParameterVector,
    Tensor,
    adam_step,
    concat,
    finite_diff_check,
    forward,
    grad,
    init_params,
    load_checkpoint,
    minimum,
    mlp,
    save_checkpoint,
)


def _hand_forward(params, x):
    """Straight-line evaluation of a 3-2-2 relu net, independent of the library."""
    v = params
    W0 = [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]]
    b0 = [v[6], v[7]]
    W1 = [[v[8], v[9]], [v[10], v[11]]]
    b1 = [v[12], v[13]]
    h = []
    for j in range(2):
        acc = b0[j]
        for i in range(3):
            acc += x[i] * W0[i][j]
        h.append(max(acc, 0.0))
    out = []
    for j in range(2):
        acc = b1[j]
        for i in range(2):
            acc += h[i] * W1[i][j]
        out.append(acc)
    return out


def test_forward_matches_hand_evaluation():
    spec = ApproximatorSpec((3, 2, 2))
    params = np.array([0.5, -1.0, 0.25, 2.0, -0.75, 0.1, 0.2, -0.3, 1.5, -0.5, 0.7, 0.9, 0.05, -0.2])
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(forward(spec, params, x), _hand_forward(params, x), atol=1e-15)


def test_zero_weights_give_zero():
    spec = ApproximatorSpec((4, 3, 2))
    np.testing.assert_array_equal(forward(spec, np.zeros(spec.n_params), np.ones(4)), 0.0)


def test_softmax_output():
    spec = ApproximatorSpec((1, 2), output_transform="softmax")
    np.testing.assert_allclose(forward(spec, np.zeros(spec.n_params), [3.0]), [0.5, 0.5])
    rng = np.random.default_rng(0)
    out = forward(spec, init_params(spec, rng), rng.normal(size=(5, 1)))
    np.testing.assert_allclose(out.sum(axis=1), 1.0)


def test_forward_errors_and_purity():
    spec = ApproximatorSpec((2, 3, 1))
    params = init_params(spec, np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(spec, params, np.ones(3))
    bad = params.values.copy()
    bad[0] = np.nan
    with pytest.raises(ValueError):
        forward(spec, bad, np.ones(2))
    x = np.random.default_rng(1).normal(size=(4, 2))
    assert forward(spec, params, x).tobytes() == forward(spec, params, x).tobytes()


def test_spec_validation():
    with pytest.raises(ValueError):
        ApproximatorSpec((3,))
    with pytest.raises(ValueError):
        ApproximatorSpec((3, 0, 1))
    with pytest.raises(ValueError):
        ApproximatorSpec((3, 1), activation="gelu")
    with pytest.raises(ValueError):
        ParameterVector(np.zeros(3), ApproximatorSpec((3, 1)))


def test_grad_of_half_square_is_identity():
    x = np.array([1.0, -2.0, 3.5])
    value, (g,) = grad(lambda p: (p * p).sum() * 0.5, x)
    assert value == pytest.approx(0.5 * np.dot(x, x))
    np.testing.assert_allclose(g, x)


def test_constant_loss_zero_gradient():
    _, (g,) = grad(lambda p: Tensor(np.array(3.0)), np.ones(4))
    np.testing.assert_array_equal(g, 0.0)
    assert finite_diff_check(lambda p: Tensor(np.array(3.0)), np.ones(4)) == 0.0


def test_quadratic_fd_error():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    loss = lambda p: (p @ Tensor(A) * p).sum()  # noqa: E731
    assert finite_diff_check(loss, np.array([0.7, -1.3])) <= 1e-7


def _cross_entropy_loss(spec, x, labels):
    def loss(p):
        logits = mlp(spec, p, x)
        logp = logits.log_softmax(axis=-1)
        return -logp[np.arange(len(labels)), labels].mean()
    return loss


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_mlp_cross_entropy_matches_finite_difference(activation):
    rng = np.random.default_rng(3)
    for _ in range(5):
        spec = ApproximatorSpec((4, 8, 8, 3), activation=activation)
        x = rng.normal(size=(6, 4))
        labels = rng.integers(3, size=6)
        params = init_params(spec, rng)
        assert finite_diff_check(_cross_entropy_loss(spec, x, labels), params) <= 1e-4


def test_elementwise_ops_finite_difference():
    rng = np.random.default_rng(4)
    x = rng.uniform(0.5, 1.5, size=6)

    def loss(p):
        a = p[:3]
        b = p[3:]
        terms = [
            (a * b).sum(), (a / b).sum(), a.exp().mean(), b.log().sum(), a.tanh().sum(),
            a.softplus().sum(), b.sqrt().sum(), (a ** 3).sum(), a.logsumexp(axis=-1),
            minimum(a, b * 0.9).sum(), concat([a, -b]).softmax(axis=-1)[0],
            (a.reshape(3, 1) @ b.reshape(1, 3)).T.sum(axis=0)[1],
        ]
        out = terms[0]
        for t in terms[1:]:
            out = out + t
        return out

    assert finite_diff_check(loss, x) <= 1e-4


def test_grad_rejects_non_finite():
    with np.errstate(divide="ignore"), pytest.raises(NonFiniteError):
        grad(lambda p: (p * 0.0).log().sum(), np.ones(2))


def test_adam_zero_gradient():
    params, _ = adam_step(np.ones(3), np.zeros(3), OptimizerState.zeros(3, learning_rate=1e-2))
    np.testing.assert_array_equal(params, 1.0)
    state = OptimizerState(np.full(3, 0.5), np.full(3, 0.25), 4, 1e-2)
    _, new = adam_step(np.ones(3), np.zeros(3), state)
    np.testing.assert_allclose(new.first_moment, 0.9 * 0.5)
    np.testing.assert_allclose(new.second_moment, 0.999 * 0.25)
    assert new.step_count == 5


def test_adam_first_step_is_sign():
    g = np.array([3.0, -0.01, 2e-3])
    params, state = adam_step(np.zeros(3), g, OptimizerState.zeros(3, learning_rate=0.1))
    np.testing.assert_allclose(params, -0.1 * np.sign(g), rtol=1e-4)
    assert state.step_count == 1


def test_adam_quadratic_bowl():
    rng = np.random.default_rng(0)
    target = rng.normal(size=5)
    params = ParameterVector(np.zeros(5), ApproximatorSpec((4, 1)))
    state = OptimizerState.zeros(5, learning_rate=0.01)
    losses = []
    for _ in range(100):
        value, (g,) = grad(lambda p: ((p - Tensor(target)) ** 2).sum(), params)
        losses.append(value)
        params, state = adam_step(params, g, state)
    assert all(b < a for a, b in zip(losses[5:], losses[6:]))


def test_adam_errors():
    with pytest.raises(ValueError):
        adam_step(np.zeros(3), np.zeros(2), OptimizerState.zeros(3))
    with pytest.raises(NonFiniteError):
        adam_step(np.zeros(2), np.array([np.inf, 0.0]), OptimizerState.zeros(2))


def test_relu_kink_subgradient_zero():
    _, (g,) = grad(lambda p: p.relu().sum(), np.array([0.0, 1.0, -1.0]))
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    spec = ApproximatorSpec((3, 4, 2), activation="tanh", output_transform="tanh_scaled",
                            output_scale=2.5)
    p = init_params(spec, rng)
    opt = OptimizerState(rng.normal(size=spec.n_params), rng.uniform(size=spec.n_params), 7, 4e-3)
    save_checkpoint(tmp_path / "c.npz", {"net": p}, {"net": opt}, {"step": 7})
    nets, opts, meta = load_checkpoint(tmp_path / "c.npz")
    assert nets["net"].spec == spec
    np.testing.assert_array_equal(nets["net"].values, p.values)
    np.testing.assert_array_equal(opts["net"].second_moment, opt.second_moment)
    assert opts["net"].step_count == 7 and meta["step"] == 7
