"""Norm-based generalization-bound calculator for trained scalar-bandwidth
networks: group norms, their layer product, the surrogate Lipschitz constant,
and the high-probability risk bound

    empirical + rho_bar/sqrt(m) + sqrt(8 ln(4/delta)/m) + sqrt(2 ln(2/delta)/m)
              + (2 beta / sqrt(m) * max_i ||x_i||_{p*}) * (2 H^{[1/p* - 1/q]+})^(n-1)

with 1/p + 1/p* = 1 and [a]+ = max(a, 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import ConfigError, LossConfig, double_sigmoid_loss
from .network import SCALAR, AbstainNetwork, forward_batch


class ScopeError(ValueError):
    """The bound covers constant-bandwidth networks only."""


@dataclass(frozen=True)
class NormSpec:
    p: float = 2.0
    q: float = 2.0

    def __post_init__(self):
        if self.p < 1.0 or not math.isfinite(self.p) or self.q < 1.0:
            raise ConfigError("need finite p >= 1 and q >= 1")

    @property
    def p_conj(self) -> float:
        """Holder conjugate; p = 1 maps to infinity (max norm)."""
        return math.inf if self.p == 1.0 else self.p / (self.p - 1.0)


def vector_norm(x: np.ndarray, p: float) -> float:
    x = np.abs(np.asarray(x, dtype=np.float64))
    if math.isinf(p):
        return float(x.max()) if x.size else 0.0
    return float((x ** p).sum() ** (1.0 / p))


def group_norm(W: np.ndarray, p: float, q: float) -> float:
    """Per-unit p-norm of incoming weights, aggregated by a q-norm over units.

    Rows are units, columns their incoming weights.
    """
    if p < 1.0 or q < 1.0:
        raise ConfigError("need p, q >= 1")
    W = np.abs(np.asarray(W, dtype=np.float64))
    if W.ndim == 1:
        W = W[None, :]
    row = (W ** p).sum(axis=1) ** (1.0 / p)
    return float((row ** q).sum() ** (1.0 / q))


def beta_product(weights: list[np.ndarray], p: float, q: float) -> float:
    """Product of layer group norms (biases excluded)."""
    if not weights:
        raise ConfigError("need at least one weight matrix")
    out = 1.0
    for W in weights:
        out *= group_norm(W, p, q)
    return out


def lipschitz_const(rho: float, gamma: float = 1.0) -> float:
    """Surrogate slope constant 2 gamma sigma(gamma rho) sigma(-gamma rho);
    0.5 at rho = 0, gamma = 1 (the value used inside the bound constant)."""
    if rho < 0.0:
        raise ConfigError("rho must be nonnegative")
    a = min(gamma * rho, 500.0)
    s = 1.0 / (1.0 + math.exp(a))
    return 2.0 * gamma * s * (1.0 - s)


@dataclass
class BoundInputs:
    weight_matrices: list[np.ndarray]    # body + prediction head, in order
    m: int                               # sample count
    delta: float
    rho_bar: float
    hidden_width: int
    x_norm_max: float                    # max_i ||x_i||_{p_conj}
    empirical_risk: float

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must lie in (0, 1]")
        if self.rho_bar < 0.0:
            raise ConfigError("rho_bar must be nonnegative")
        if not self.weight_matrices:
            raise ConfigError("need at least one layer")

    @property
    def n_layers(self) -> int:
        return len(self.weight_matrices)


def bound_terms(inputs: BoundInputs, spec: NormSpec) -> dict:
    """All additive terms of the bound, separately."""
    m = inputs.m
    beta = beta_product(inputs.weight_matrices, spec.p, spec.q)
    expo = max(1.0 / spec.p_conj - 1.0 / spec.q, 0.0) if math.isfinite(spec.p_conj) \
        else max(-1.0 / spec.q, 0.0)
    width_factor = 2.0 * float(inputs.hidden_width) ** expo
    complexity = (2.0 * beta / math.sqrt(m) * inputs.x_norm_max) * width_factor ** (inputs.n_layers - 1)
    return {
        "empirical_risk": inputs.empirical_risk,
        "rho_term": inputs.rho_bar / math.sqrt(m),
        "conc_hoeffding": math.sqrt(8.0 * math.log(4.0 / inputs.delta) / m),
        "conc_mcdiarmid": math.sqrt(2.0 * math.log(2.0 / inputs.delta) / m),
        "complexity": complexity,
        "beta": beta,
        "width_factor": width_factor,
    }


def generalization_bound(inputs: BoundInputs, spec: NormSpec) -> float:
    t = bound_terms(inputs, spec)
    return t["empirical_risk"] + t["rho_term"] + t["conc_hoeffding"] \
        + t["conc_mcdiarmid"] + t["complexity"]


def _augmented(weights: list[np.ndarray], biases: list[np.ndarray]) -> list[np.ndarray]:
    return [np.hstack([W, b[:, None]]) for W, b in zip(weights, biases)]


def bound_report(net: AbstainNetwork, dataset, cfg: LossConfig, spec: NormSpec,
                 delta: float, test_dataset=None, rho_bar: float | None = None) -> dict:
    """Evaluate the bound for a trained network on a sample.

    Uses the realized bandwidth as rho_bar unless overridden.  Networks with
    nonzero biases fall outside the bias-free function class the bound is
    stated for; the report then carries a warning plus a second beta/bound
    where each bias is folded in as an extra input coordinate fixed at 1.
    """
    if net.rej_mode != SCALAR:
        raise ScopeError("the bound is proven for a constant bandwidth only")
    layers = net.body + net.pred_head
    weights = [l.weights for l in layers]
    biases = [l.bias for l in layers]
    hidden = max([l.out_dim for l in net.body], default=net.input_dim)

    def risks(ds):
        f, rho, _, _ = forward_batch(net, ds.x)
        margins = ds.y * f
        return float(np.mean(double_sigmoid_loss(margins, rho, cfg)))

    emp = risks(dataset)
    rho_real = float(max(net.raw_rho[0], 0.0))
    rb = rho_real if rho_bar is None else float(rho_bar)
    xnorm = max(vector_norm(x, spec.p_conj) for x in dataset.x)
    inputs = BoundInputs(weight_matrices=weights, m=dataset.n, delta=delta,
                         rho_bar=rb, hidden_width=hidden, x_norm_max=xnorm,
                         empirical_risk=emp)
    terms = bound_terms(inputs, spec)
    report = {
        "m": dataset.n,
        "d": cfg.d,
        "gamma": cfg.gamma,
        "p": spec.p,
        "q": spec.q,
        "delta": delta,
        "empirical_risk": emp,
        "rho_bar": rb,
        "beta": terms["beta"],
        "x_norm_max": xnorm,
        "n_layers": inputs.n_layers,
        "hidden_width": hidden,
        "lipschitz_at_rho": lipschitz_const(rho_real, cfg.gamma),
        "bound": generalization_bound(inputs, spec),
        "terms": {k: terms[k] for k in
                  ("empirical_risk", "rho_term", "conc_hoeffding", "conc_mcdiarmid", "complexity")},
    }
    has_bias = any(np.any(b != 0.0) for b in biases)
    report["bias_warning"] = bool(has_bias)
    if has_bias:
        aug = _augmented(weights, biases)
        xnorm_aug = max(vector_norm(np.append(x, 1.0), spec.p_conj) for x in dataset.x)
        inputs_aug = BoundInputs(weight_matrices=aug, m=dataset.n, delta=delta,
                                 rho_bar=rb, hidden_width=hidden, x_norm_max=xnorm_aug,
                                 empirical_risk=emp)
        report["beta_with_bias"] = beta_product(aug, spec.p, spec.q)
        report["bound_with_bias"] = generalization_bound(inputs_aug, spec)
    if test_dataset is not None:
        report["test_risk"] = risks(test_dataset)
    return report
