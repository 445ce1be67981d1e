import numpy as np
import pytest

from abstainnet.losses import (ConfigError, LossConfig, aux_cross_entropy,
                               aux_cross_entropy_grads, combined_loss,
                               double_sigmoid_grads, double_sigmoid_loss,
                               sigma, zero_d_one_loss)

# frozen oracle values, derived once with 40-digit arithmetic
SIGMA_8 = 0.00033535013046647810
LDS_EXAMPLE = 0.18345796563210490        # margin=1, rho=0.5, d=0.2, gamma=2
CE_SHARP = 2.0611536203143807e-09        # logits (10, -10), label +1
COMBINED_EXAMPLE = 0.90794415416798359   # 0.7 * 1.0 + 0.3 * ln 2


def test_sigma_basics():
    assert sigma(0.0, 1.0) == 0.5
    assert sigma(8.0, 1.0) == pytest.approx(SIGMA_8, rel=1e-12)
    a = np.linspace(-30, 30, 101)
    assert np.allclose(sigma(a) + sigma(-a), 1.0, atol=1e-15)
    for g in (0.5, 1.0, 4.0):
        v = sigma(a, g)
        assert (np.diff(v) < 0).all()


def test_sigma_clamp_no_overflow():
    assert sigma(1e9, 1.0) == 0.0
    assert sigma(-1e9, 1.0) == 1.0
    assert np.isfinite(sigma(700.0, 1.0))


def test_zero_d_one_branches():
    assert zero_d_one_loss(0.6, 0.5, 0.25) == 0.0
    assert zero_d_one_loss(0.3, 0.5, 0.25) == 0.25
    # boundary is <=, the error branch is strict <
    assert zero_d_one_loss(-0.5, 0.5, 0.25) == 0.25
    assert zero_d_one_loss(-0.6, 0.5, 0.25) == 1.0
    assert zero_d_one_loss(0.5, 0.5, 0.25) == 0.25


def test_double_sigmoid_values():
    cfg = LossConfig(d=0.25, gamma=1.0)
    assert double_sigmoid_loss(0.0, 0.0, cfg) == pytest.approx(1.0, abs=1e-15)
    assert double_sigmoid_loss(-10.0, 0.0, cfg) == pytest.approx(2.0, abs=1e-3)
    cfg2 = LossConfig(d=0.2, gamma=2.0)
    assert double_sigmoid_loss(1.0, 0.5, cfg2) == pytest.approx(LDS_EXAMPLE, rel=1e-12)


def test_double_sigmoid_range_and_monotonicity(rng):
    for _ in range(200):
        cfg = LossConfig(d=rng.uniform(0.01, 0.49), gamma=rng.uniform(0.5, 4.0))
        rho = rng.uniform(0, 5)
        m = np.sort(rng.uniform(-10, 10, size=50))
        v = double_sigmoid_loss(m, rho, cfg)
        assert ((v > 0) & (v < 2)).all()
        assert (np.diff(v) < 0).all()


def test_surrogate_dominates_zero_d_one(rng):
    n = 10_000
    m = rng.uniform(-10, 10, n)
    rho = rng.uniform(0, 5, n)
    d = rng.uniform(0.01, 0.49, n)
    g = rng.uniform(0.5, 4, n)
    l01 = np.array([zero_d_one_loss(mi, ri, di) for mi, ri, di in zip(m, rho, d)])
    lds = 2 * d * sigma(g * (m - rho)) + 2 * (1 - d) * sigma(g * (m + rho))
    assert (l01 <= lds + 1e-15).all()


def test_grads_closed_form_point():
    cfg = LossConfig(d=0.25, gamma=1.0)
    dm, dr = double_sigmoid_grads(0.0, 0.0, cfg)
    assert dm == pytest.approx(-0.5, abs=1e-15)
    assert dr == pytest.approx(-0.25, abs=1e-15)


def test_grads_saturate():
    cfg = LossConfig(d=0.3, gamma=1.0)
    for m in (-1e3, 1e3):
        dm, dr = double_sigmoid_grads(m, 1.0, cfg)
        assert abs(dm) < 1e-300 or dm == 0.0
        assert abs(dr) < 1e-300 or dr == 0.0


def test_grads_match_finite_differences(rng):
    h = 1e-6
    for _ in range(300):
        cfg = LossConfig(d=rng.uniform(0.05, 0.45), gamma=rng.uniform(0.5, 4.0))
        m = rng.uniform(-8, 8)
        rho = rng.uniform(0.01, 4)
        dm, dr = double_sigmoid_grads(m, rho, cfg)
        fdm = (double_sigmoid_loss(m + h, rho, cfg) - double_sigmoid_loss(m - h, rho, cfg)) / (2 * h)
        fdr = (double_sigmoid_loss(m, rho + h, cfg) - double_sigmoid_loss(m, rho - h, cfg)) / (2 * h)
        assert dm == pytest.approx(fdm, rel=1e-7, abs=1e-10)
        assert dr == pytest.approx(fdr, rel=1e-7, abs=1e-10)


def test_aux_cross_entropy():
    assert aux_cross_entropy((0.0, 0.0), 1) == pytest.approx(np.log(2), rel=1e-15)
    assert aux_cross_entropy((0.0, 0.0), -1) == pytest.approx(np.log(2), rel=1e-15)
    assert aux_cross_entropy((10.0, -10.0), 1) == pytest.approx(CE_SHARP, rel=1e-9)
    # swapping logits mirrors the label
    for a, b in [(0.3, -1.2), (5.0, 2.0)]:
        assert aux_cross_entropy((a, b), 1) == pytest.approx(aux_cross_entropy((b, a), -1), rel=1e-14)


def test_aux_cross_entropy_grads_match_fd(rng):
    h = 1e-6
    for _ in range(50):
        logits = rng.normal(size=2) * 3
        label = 1 if rng.random() < 0.5 else -1
        g = aux_cross_entropy_grads(logits, label)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (aux_cross_entropy(logits + e, label) - aux_cross_entropy(logits - e, label)) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_combined_loss():
    cfg1 = LossConfig(d=0.25, gamma=1.0, alpha=1.0)
    assert combined_loss(0.3, 0.1, None, 1, cfg1) == double_sigmoid_loss(0.3, 0.1, cfg1)
    cfg0 = LossConfig(d=0.25, gamma=1.0, alpha=0.0)
    assert combined_loss(0.3, 0.1, (0.0, 0.0), 1, cfg0) == pytest.approx(np.log(2), rel=1e-15)
    cfg7 = LossConfig(d=0.25, gamma=1.0, alpha=0.7)
    assert combined_loss(0.0, 0.0, (0.0, 0.0), 1, cfg7) == pytest.approx(COMBINED_EXAMPLE, rel=1e-12)
    with pytest.raises(ConfigError):
        combined_loss(0.0, 0.0, None, 1, cfg7)


def test_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(d=0.0)
    with pytest.raises(ConfigError):
        LossConfig(d=0.6)
    with pytest.raises(ConfigError):
        LossConfig(d=0.2, gamma=0.0)
    with pytest.raises(ConfigError):
        LossConfig(d=0.2, alpha=1.5)
    LossConfig(d=0.5)  # sweep endpoint is allowed
