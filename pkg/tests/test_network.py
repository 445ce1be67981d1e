import json
import math

import numpy as np
import pytest

from conftest import central_diff, jittered_net

from abstainnet.losses import LossConfig, combined_loss, double_sigmoid_grads, aux_cross_entropy_grads
from abstainnet.network import (Decision, DenseLayer, AbstainNetwork, OptimizerState,
                                ShapeError, backward, backward_batch, decide,
                                decide_batch, forward, forward_batch, from_json_dict,
                                init_network, load_network, rho_of, save_network,
                                to_json_dict)


def zero_net():
    body = [DenseLayer(np.zeros((3, 2)), np.zeros(3))]
    pred = [DenseLayer(np.zeros((1, 3)), np.zeros(1), "identity")]
    return AbstainNetwork(input_dim=2, body=body, pred_head=pred,
                          rej_mode="scalar", raw_rho=np.array([1.0]))


def test_forward_zero_network():
    out, _ = forward(zero_net(), [0.7, -0.3])
    assert out.f == 0.0
    assert out.rho == 1.0
    assert out.aux_logits is None


def test_forward_hand_product():
    body = [DenseLayer(np.eye(2), np.zeros(2), "identity")]
    pred = [DenseLayer(np.array([[1.0, 1.0]]), np.zeros(1), "identity")]
    net = AbstainNetwork(2, body, pred, "scalar", raw_rho=np.array([0.5]))
    out, _ = forward(net, [2.0, 3.0])
    assert out.f == 5.0


def _pure_python_forward(net, x):
    """Independent re-evaluation without numpy: plain lists and math."""
    a = list(map(float, x))
    for layer in net.body + net.pred_head:
        z = []
        for row, b in zip(layer.weights.tolist(), layer.bias.tolist()):
            acc = b
            for w, v in zip(row, a):
                acc += w * v
            z.append(max(acc, 0.0) if layer.activation == "relu" else acc)
        a = z
    return a[0]


def test_forward_matches_independent_evaluation(rng):
    for seed in range(5):
        net = jittered_net((3, 6, 5), seed=seed)
        for _ in range(4):
            x = rng.normal(size=3)
            out, _ = forward(net, x)
            assert out.f == pytest.approx(_pure_python_forward(net, x), abs=1e-12)


def test_forward_is_pure(rng):
    net = jittered_net((4, 8), seed=3)
    x = rng.normal(size=4)
    a, _ = forward(net, x)
    b, _ = forward(net, x)
    assert a.f == b.f and a.rho == b.rho


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        forward(zero_net(), [1.0, 2.0, 3.0])


def test_rho_of():
    net = zero_net()
    net.raw_rho[0] = -0.5
    assert rho_of(net, [0, 0]) == 0.0
    net.raw_rho[0] = 0.8
    assert rho_of(net, [0, 0]) == 0.8
    assert rho_of(net, [5, -3]) == 0.8
    # constant instance head: zero weights, bias on the final neuron
    body = [DenseLayer(np.zeros((3, 2)), np.zeros(3))]
    pred = [DenseLayer(np.zeros((1, 3)), np.zeros(1), "identity")]
    rej = [DenseLayer(np.zeros((1, 3)), np.array([0.3]), "identity")]
    inet = AbstainNetwork(2, body, pred, "instance", rej_head=rej)
    assert rho_of(inet, [1.0, -1.0]) == pytest.approx(0.3)
    assert rho_of(inet, [0.0, 2.0]) == pytest.approx(0.3)


def test_decide():
    assert decide(0.6, 0.5) == Decision.POS
    assert decide(0.5, 0.5) == Decision.REJECT
    assert decide(-0.6, 0.5) == Decision.NEG
    assert decide(-0.5, 0.5) == Decision.REJECT


def test_decide_exhaustive_exclusive(rng):
    f = rng.uniform(-3, 3, 2000)
    rho = rng.uniform(0, 2, 2000)
    d = decide_batch(f, rho)
    assert set(np.unique(d)) <= {-1, 0, 1}
    for fi, ri, di in zip(f[:200], rho[:200], d[:200]):
        assert decide(fi, ri) == di


def test_backward_zero_upstream(rng):
    net = jittered_net((3, 5, 4), rej_mode="instance", aux=True, seed=1)
    x = rng.normal(size=(6, 3))
    _, _, _, tr = forward_batch(net, x)
    grads = backward_batch(net, tr, np.zeros(6), np.zeros(6), np.zeros((6, 2)))
    for g in grads:
        assert not g.any()


def test_backward_matches_finite_differences(rng):
    for seed, (rej, aux) in enumerate([("scalar", False), ("instance", False),
                                       ("instance", True), ("scalar", True)]):
        net = jittered_net((3, 5, 4), rej_mode=rej, aux=aux, seed=seed)
        cfg = LossConfig(d=0.3, gamma=1.7, alpha=0.6 if aux else 1.0)
        x = rng.normal(size=(4, 3))
        y = np.where(rng.normal(size=4) > 0, 1, -1)

        def total_loss():
            f, rho, auxl, _ = forward_batch(net, x)
            return sum(combined_loss(y[i] * f[i], rho[i],
                                     None if auxl is None else auxl[i], y[i], cfg)
                       for i in range(4))

        f, rho, auxl, tr = forward_batch(net, x)
        dm, dr = double_sigmoid_grads(y * f, rho, cfg)
        if aux:
            dlog = aux_cross_entropy_grads(auxl, y) * (1 - cfg.alpha)
            dm, dr = dm * cfg.alpha, dr * cfg.alpha
        else:
            dlog = None
        grads = backward_batch(net, tr, y * dm, dr, dlog)
        fd = central_diff(total_loss, net.parameters())
        for g, gfd in zip(grads, fd):
            assert np.allclose(g, gfd, rtol=1e-5, atol=1e-8)


def test_backward_dead_scalar_rho():
    net = jittered_net((2, 4), seed=5)
    net.raw_rho[0] = -0.7
    x = np.array([[0.3, -0.2]])
    _, _, _, tr = forward_batch(net, x)
    grads = backward_batch(net, tr, np.array([0.0]), np.array([1.0]))
    assert grads[-1][0] == 0.0  # ReLU dead region, zero subgradient


def test_backward_trace_mismatch(rng):
    net_a = jittered_net((2, 4), seed=1)
    net_b = jittered_net((2, 4), rej_mode="instance", seed=2)
    _, _, _, tr = forward_batch(net_a, rng.normal(size=(2, 2)))
    with pytest.raises(ShapeError):
        backward_batch(net_b, tr, np.zeros(2), np.zeros(2))


def test_backward_single_sample_wrapper(rng):
    net = jittered_net((2, 4), seed=8)
    x = rng.normal(size=2)
    _, tr = forward(net, x)
    grads = backward(net, tr, 1.0, 0.5)
    _, _, _, trb = forward_batch(net, x.reshape(1, -1))
    gb = backward_batch(net, trb, np.array([1.0]), np.array([0.5]))
    for a, b in zip(grads, gb):
        assert np.array_equal(a, b)


def test_init_network_determinism_and_shapes():
    a = init_network((2, 64, 64, 64), seed=123)
    b = init_network((2, 64, 64, 64), seed=123)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa, pb)
    assert len(a.body) == 3
    assert all(l.out_dim == 64 for l in a.body)
    assert a.raw_rho[0] == 1.0
    c = init_network((2, 64, 64, 64), seed=124)
    assert any(not np.array_equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))
    with pytest.raises(Exception):
        init_network((5,))


def test_serialization_roundtrip_bit_exact(tmp_path):
    for rej, aux in [("scalar", False), ("instance", True)]:
        net = jittered_net((3, 7, 5), rej_mode=rej, aux=aux, seed=9)
        path = tmp_path / f"{rej}.json"
        save_network(net, path)
        loaded = load_network(path)
        for a, b in zip(net.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)  # bit-exact through the decimal form
        assert loaded.rej_mode == net.rej_mode
        # round-tripping the loaded model reproduces the same document
        assert to_json_dict(loaded) == to_json_dict(net)
        doc = json.loads(path.read_text())
        assert set(doc) == {"config", "layers", "rej_mode", "aux_head"}


def test_optimizer_adagrad_first_step():
    p = [np.array([0.0])]
    g = [np.array([3.0])]
    opt = OptimizerState(kind="adagrad", lr=1.0, epsilon=1e-8)
    opt.step(p, g)
    assert p[0][0] == pytest.approx(-1.0, rel=1e-8)


def test_optimizer_sgdm_two_steps():
    p = [np.array([0.0])]
    opt = OptimizerState(kind="sgdm", lr=0.1, momentum=0.9)
    opt.step(p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(-0.1, abs=1e-15)
    opt.step(p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(-0.29, abs=1e-15)


def test_optimizer_zero_grad_no_motion():
    p = [np.array([1.5, -2.0])]
    for kind in ("adagrad", "sgdm"):
        opt = OptimizerState(kind=kind, lr=0.5)
        opt.step(p, [np.zeros(2)])
        assert np.array_equal(p[0], [1.5, -2.0])


def test_optimizer_decoupled_weight_decay():
    p = [np.array([2.0])]
    opt = OptimizerState(kind="adagrad", lr=0.1, weight_decay=0.5)
    opt.step(p, [np.array([0.0])])
    # shrinkage only: p -= lr * wd * p; the accumulator never sees it
    assert p[0][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-15)
    assert opt.slots[0][0] == 0.0
