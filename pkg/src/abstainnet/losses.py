"""Abstention losses: the 0-d-1 loss, its double-sigmoid surrogate, and the
auxiliary cross-entropy mixed in via a convex combination.

All functions accept scalars or numpy arrays (broadcasting elementwise) and
are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Exponent arguments are clamped here before exponentiation.  exp(500) is
# finite in float64 and any |arg| > ~37 already saturates the sigmoid to
# machine precision, so clamping never changes an unclamped result.
EXP_CLAMP = 500.0


class ConfigError(ValueError):
    """Invalid configuration (bad loss parameters, inconsistent heads...)."""


@dataclass(frozen=True)
class LossConfig:
    d: float            # cost of rejection, in (0, 0.5]; 0.5 only for sweep endpoints
    gamma: float = 1.0  # sigmoid sharpness, > 0
    alpha: float = 1.0  # weight of the surrogate in the combined loss, [0, 1]

    def __post_init__(self):
        if not 0.0 < self.d <= 0.5:
            raise ConfigError(f"rejection cost d must lie in (0, 0.5], got {self.d}")
        if not self.gamma > 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


def sigma(a, gamma: float = 1.0):
    """Decreasing sigmoid 1 / (1 + exp(gamma * a))."""
    z = np.clip(np.asarray(a, dtype=np.float64) * gamma, -EXP_CLAMP, EXP_CLAMP)
    out = 1.0 / (1.0 + np.exp(z))
    return out if out.ndim else float(out)


def zero_d_one_loss(margin, rho, d: float):
    """0-d-1 loss: 1 on a confident error, d inside the rejection band, else 0.

    The band is closed (|margin| <= rho rejects); the error branch is strict
    (margin < -rho).
    """
    margin = np.asarray(margin, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    out = np.where(margin < -rho, 1.0, np.where(np.abs(margin) <= rho, d, 0.0))
    return out if out.ndim else float(out)


def double_sigmoid_loss(margin, rho, cfg: LossConfig):
    """Smooth surrogate 2d*sigma(margin - rho) + 2(1-d)*sigma(margin + rho)."""
    m = np.asarray(margin, dtype=np.float64)
    out = 2.0 * cfg.d * sigma(m - rho, cfg.gamma) + 2.0 * (1.0 - cfg.d) * sigma(m + rho, cfg.gamma)
    return out if np.ndim(out) else float(out)


def double_sigmoid_grads(margin, rho, cfg: LossConfig):
    """Analytic (dL/dmargin, dL/drho) of the double sigmoid loss.

    With s1 = sigma(margin - rho), s2 = sigma(margin + rho):
      dL/dmargin = -gamma * (2d*s1*(1-s1) + 2(1-d)*s2*(1-s2))
      dL/drho    =  gamma * (2d*s1*(1-s1) - 2(1-d)*s2*(1-s2))
    """
    m = np.asarray(margin, dtype=np.float64)
    s1 = sigma(m - rho, cfg.gamma)
    s2 = sigma(m + rho, cfg.gamma)
    t1 = 2.0 * cfg.d * s1 * (1.0 - s1)
    t2 = 2.0 * (1.0 - cfg.d) * s2 * (1.0 - s2)
    dm = -cfg.gamma * (t1 + t2)
    dr = cfg.gamma * (t1 - t2)
    if np.ndim(dm):
        return dm, dr
    return float(dm), float(dr)


def aux_cross_entropy(aux_logits, label):
    """Two-class softmax cross-entropy; class index 1 is label +1.

    Computed in the stable log-sum-exp form.
    """
    logits = np.asarray(aux_logits, dtype=np.float64)
    if logits.shape[-1] != 2:
        raise ConfigError(f"auxiliary head must emit 2 logits, got shape {logits.shape}")
    idx = (np.asarray(label) > 0).astype(np.intp)
    hi = np.max(logits, axis=-1)
    lse = hi + np.log(np.sum(np.exp(logits - hi[..., None]), axis=-1))
    true_logit = np.take_along_axis(logits, idx[..., None].reshape(logits.shape[:-1] + (1,)), axis=-1)[..., 0] \
        if logits.ndim > 1 else logits[idx]
    out = lse - true_logit
    return out if np.ndim(out) else float(out)


def aux_cross_entropy_grads(aux_logits, label):
    """d(cross-entropy)/d(logits) = softmax(logits) - onehot(label)."""
    logits = np.atleast_2d(np.asarray(aux_logits, dtype=np.float64))
    hi = np.max(logits, axis=-1, keepdims=True)
    e = np.exp(logits - hi)
    p = e / e.sum(axis=-1, keepdims=True)
    idx = np.atleast_1d((np.asarray(label) > 0).astype(np.intp))
    g = p.copy()
    g[np.arange(len(g)), idx] -= 1.0
    return g if np.ndim(aux_logits) > 1 else g[0]


def combined_loss(margin, rho, aux_logits, label, cfg: LossConfig):
    """alpha * L_ds + (1 - alpha) * L_ce; requires aux logits when alpha < 1."""
    lds = double_sigmoid_loss(margin, rho, cfg)
    if cfg.alpha == 1.0:
        return lds
    if aux_logits is None:
        raise ConfigError("alpha < 1 requires auxiliary-head logits")
    lce = aux_cross_entropy(aux_logits, label)
    return cfg.alpha * lds + (1.0 - cfg.alpha) * lce
