import numpy as np
import pytest

from abstainnet.network import init_network


def jittered_net(widths, rej_mode="scalar", aux=False, seed=0, scale=0.3):
    """Seeded network with biases nudged off zero so no ReLU preactivation
    sits exactly on the kink (where finite differences and the subgradient
    convention legitimately disagree)."""
    net = init_network(widths, rej_mode=rej_mode, aux=aux, seed=seed)
    rng = np.random.default_rng(seed + 90210)
    for p in net.parameters():
        if p.ndim == 1:
            p += rng.normal(size=p.shape) * scale
    return net


def central_diff(fn, params, h=1e-5):
    """Central finite differences of a scalar fn over a list of arrays."""
    grads = [np.zeros_like(p) for p in params]
    for p, g in zip(params, grads):
        flat, gf = p.ravel(), g.ravel()
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp = fn()
            flat[j] = old - h
            lm = fn()
            flat[j] = old
            gf[j] = (lp - lm) / (2.0 * h)
    return grads


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)
