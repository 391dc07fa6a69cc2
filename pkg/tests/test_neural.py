import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from hrcl.neural import Adam, DenseNetwork, adam_step, gradient_check, load_network, save_network, softmax


def _zero(net):
    for v in net.params.values():
        v[...] = 0.0
    return net


def policy_loss(x, actions, adv):
    """Mean of -adv * log pi(a|x): the cross-entropy-style loss used by the actor."""
    def loss(net):
        out, cache = net.forward(x)
        n = np.arange(len(actions))
        value = -float(np.mean(adv * np.log(out[n, actions])))
        onehot = np.zeros_like(out)
        onehot[n, actions] = 1.0
        g = -(adv[:, None] * (onehot - out)) / len(actions)
        return value, net.backward(cache, g, wrt_logits=True)
    return loss


def squared_loss(x, y):
    def loss(net):
        out, cache = net.forward(x)
        diff = out - y
        return float(np.mean(diff ** 2)), net.backward(cache, 2.0 * diff / diff.size)
    return loss


def test_zero_network_outputs():
    net = _zero(DenseNetwork([3, 4, 4, 2], "identity", seed=0))
    assert net(np.ones(3)).tolist() == [0.0, 0.0]
    soft = _zero(DenseNetwork([3, 4, 4, 5], "softmax", seed=0))
    np.testing.assert_allclose(soft(np.ones(3)), np.full(5, 0.2), rtol=0, atol=1e-15)


def test_unit_chain_is_zero_at_zero():
    net = DenseNetwork([1, 1, 1, 1], "identity", seed=0)
    for k in net.params:
        net.params[k][...] = 1.0 if k.startswith("W") else 0.0
    assert net(np.zeros(1))[0] == 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        DenseNetwork([3, 4, 4, 2], seed=0)(np.ones(4))


def test_init_range_and_determinism():
    a, b = DenseNetwork([5, 8, 8, 3], seed=4), DenseNetwork([5, 8, 8, 3], seed=4)
    for k in a.params:
        assert np.all(np.abs(a.params[k]) <= 0.1)
        assert a.params[k].tobytes() == b.params[k].tobytes()


@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_properties(z, c):
    p = softmax(z)
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.max(np.abs(softmax(z + c) - p)) < 1e-12


def test_backward_base_cases():
    net = DenseNetwork([2, 3, 3, 1], "identity", seed=1)
    _, cache = net.forward(np.array([[0.3, -0.2]]))
    grads = net.backward(cache, np.ones((1, 1)))
    assert grads["b3"].tolist() == [1.0]
    zero = net.backward(cache, np.zeros((1, 1)))
    assert all(np.all(g == 0) for g in zero.values())
    with pytest.raises(ValueError):
        net.backward(None, np.ones((1, 1)))


def test_gradient_check_policy_net():
    rng = np.random.default_rng(0)
    net = DenseNetwork([4, 8, 8, 3], "softmax", seed=2)
    x = rng.standard_normal((5, 4))
    report = gradient_check(net, policy_loss(x, rng.integers(0, 3, 5), rng.standard_normal(5)))
    assert report.passed and report.max_relative_error < 1e-4


def test_gradient_check_softmax_output_gradient_path():
    # gradient given w.r.t. probabilities, routed through the softmax Jacobian
    rng = np.random.default_rng(1)
    net = DenseNetwork([3, 5, 5, 4], "softmax", seed=3)
    x, w = rng.standard_normal((4, 3)), rng.standard_normal((4, 4))

    def loss(n):
        out, cache = n.forward(x)
        return float(np.sum(w * out)), n.backward(cache, w)

    assert gradient_check(net, loss).max_relative_error < 1e-4


def test_gradient_check_scalar_critic():
    rng = np.random.default_rng(2)
    net = DenseNetwork([3, 6, 6, 1], "identity", seed=5)
    report = gradient_check(net, squared_loss(rng.standard_normal((6, 3)), rng.standard_normal((6, 1))))
    assert report.max_relative_error < 1e-6


def test_gradient_check_catches_sign_flip():
    rng = np.random.default_rng(3)
    net = DenseNetwork([3, 4, 4, 1], "identity", seed=6)
    good = squared_loss(rng.standard_normal((4, 3)), rng.standard_normal((4, 1)))

    def flipped(n):
        value, grads = good(n)
        grads["W2"] = -grads["W2"]
        return value, grads

    report = gradient_check(net, flipped)
    assert not report.passed and report.worst_parameter.startswith("W2")


def test_adam_zero_gradient_leaves_parameters():
    net = DenseNetwork([2, 3, 3, 2], seed=0)
    before = {k: v.copy() for k, v in net.params.items()}
    adam_step(net, {k: np.zeros_like(v) for k, v in net.params.items()}, Adam())
    for k in before:
        np.testing.assert_array_equal(net.params[k], before[k])


def test_adam_descends_against_constant_gradient():
    net = DenseNetwork([2, 3, 3, 2], seed=0)
    start = net.params["b3"].copy()
    opt = Adam(lr=1e-2)
    g = {"b3": np.array([1.0, -2.0])}
    for _ in range(50):
        opt.step(net, g)
    delta = net.params["b3"] - start
    assert delta[0] < 0 < delta[1]


def test_adam_identical_streams_identical_trajectories():
    a, b = DenseNetwork([2, 3, 3, 2], seed=9), DenseNetwork([2, 3, 3, 2], seed=9)
    oa, ob = Adam(), Adam()
    rng = np.random.default_rng(0)
    for _ in range(10):
        g = {k: rng.standard_normal(v.shape) for k, v in a.params.items()}
        oa.step(a, g)
        ob.step(b, {k: v.copy() for k, v in g.items()})
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_checkpoint_round_trip_is_exact_and_byte_stable(tmp_path):
    net = DenseNetwork([3, 4, 4, 2], "softmax", seed=11)
    save_network(net, tmp_path / "a.ckpt", step=7)
    loaded, step = load_network(tmp_path / "a.ckpt")
    assert step == 7 and loaded.sizes == net.sizes and loaded.head == "softmax" and loaded.seed == 11
    assert all(loaded.params[k].tobytes() == net.params[k].tobytes() for k in net.params)
    save_network(loaded, tmp_path / "b.ckpt", step=7)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_text("something else\n")
    with pytest.raises(ValueError):
        load_network(tmp_path / "bad.ckpt")
