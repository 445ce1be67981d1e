"""Dense feed-forward abstain network.

Architecture: a shared body of fully connected layers feeds a prediction head
(single score f), a rejection bandwidth (either one shared scalar or an
instance-specific head), and an optional 2-logit auxiliary head used only
during training.  The realized bandwidth is always ReLU-rectified so it stays
nonnegative.

Everything here is plain numpy and float64.  The compiled training kernels in
``abstainnet._kernels`` reimplement the batched hot path; this module is the
reference semantics and the public per-example API.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .losses import ConfigError
from .rng import Stream

RELU = "relu"
IDENTITY = "identity"

SCALAR = "scalar"
INSTANCE = "instance"


class Decision(IntEnum):
    NEG = -1
    REJECT = 0
    POS = 1


class ShapeError(ValueError):
    """Input or trace does not match the network that must consume it."""


@dataclass
class DenseLayer:
    weights: np.ndarray          # (out_dim, in_dim)
    bias: np.ndarray             # (out_dim,)
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}")
        if self.activation not in (RELU, IDENTITY):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("non-finite layer parameters")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class AbstainNetwork:
    input_dim: int
    body: list[DenseLayer]
    pred_head: list[DenseLayer]
    rej_mode: str                       # SCALAR or INSTANCE
    raw_rho: np.ndarray | None = None   # shape (1,), SCALAR mode
    rej_head: list[DenseLayer] = field(default_factory=list)
    aux_head: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        dims = [self.input_dim] + [l.out_dim for l in self.body]
        for prev, layer in zip(dims, self.body):
            if layer.in_dim != prev:
                raise ShapeError("body layer widths do not chain")
        feat = dims[-1]
        _check_chain(self.pred_head, feat, 1, "prediction head")
        if self.rej_mode == SCALAR:
            if self.raw_rho is None:
                self.raw_rho = np.array([1.0])
            self.raw_rho = np.ascontiguousarray(self.raw_rho, dtype=np.float64).reshape(1)
        elif self.rej_mode == INSTANCE:
            _check_chain(self.rej_head, feat, 1, "rejection head")
        else:
            raise ConfigError(f"unknown rejection mode {self.rej_mode!r}")
        if self.aux_head:
            _check_chain(self.aux_head, feat, 2, "auxiliary head")

    @property
    def has_aux(self) -> bool:
        return bool(self.aux_head)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list; gradients from backward() use the same order."""
        params: list[np.ndarray] = []
        for layer in self.body + self.pred_head:
            params += [layer.weights, layer.bias]
        if self.rej_mode == SCALAR:
            params.append(self.raw_rho)
        else:
            for layer in self.rej_head:
                params += [layer.weights, layer.bias]
        for layer in self.aux_head:
            params += [layer.weights, layer.bias]
        return params


def _check_chain(layers: list[DenseLayer], in_dim: int, out_dim: int, name: str):
    if not layers:
        raise ConfigError(f"{name} must have at least one layer")
    d = in_dim
    for layer in layers:
        if layer.in_dim != d:
            raise ShapeError(f"{name} widths do not chain")
        d = layer.out_dim
    if d != out_dim:
        raise ShapeError(f"{name} must end with {out_dim} output(s), got {d}")


@dataclass
class HeadOutputs:
    f: float
    rho: float
    aux_logits: np.ndarray | None = None


@dataclass
class ForwardTrace:
    """Per-chain inputs and pre-activations retained for backward()."""
    x: np.ndarray                                   # (B, input_dim)
    body: list[tuple[np.ndarray, np.ndarray]]       # (input, preact) per layer
    pred: list[tuple[np.ndarray, np.ndarray]]
    rej: list[tuple[np.ndarray, np.ndarray]]
    aux: list[tuple[np.ndarray, np.ndarray]]
    rej_raw: np.ndarray | None                      # (B,) pre-ReLU bandwidths
    body_masks: list[np.ndarray] | None = None      # dropout masks, training only
    n_params: int = 0


def _chain_forward(layers, a, trace_slot, masks=None):
    for i, layer in enumerate(layers):
        z = a @ layer.weights.T + layer.bias
        trace_slot.append((a, z))
        a = np.maximum(z, 0.0) if layer.activation == RELU else z
        if masks is not None and i < len(masks) and masks[i] is not None:
            a = a * masks[i]
    return a


def forward_batch(net: AbstainNetwork, x: np.ndarray,
                  body_masks: list[np.ndarray] | None = None):
    """Forward pass on a (B, input_dim) batch.

    Returns (f, rho, aux_logits, trace); aux_logits is None without an
    auxiliary head.  body_masks, when given, are multiplied onto the body
    activations (dropout, already inverted-scaled).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected (B, {net.input_dim}) input, got {x.shape}")
    trace = ForwardTrace(x=x, body=[], pred=[], rej=[], aux=[], rej_raw=None,
                         body_masks=body_masks, n_params=len(net.parameters()))
    feat = _chain_forward(net.body, x, trace.body, body_masks)
    f = _chain_forward(net.pred_head, feat, trace.pred)[:, 0]
    if net.rej_mode == SCALAR:
        raw = np.full(x.shape[0], net.raw_rho[0])
    else:
        raw = _chain_forward(net.rej_head, feat, trace.rej)[:, 0]
    trace.rej_raw = raw
    rho = np.maximum(raw, 0.0)
    aux = _chain_forward(net.aux_head, feat, trace.aux)[:, :2] if net.has_aux else None
    return f, rho, aux, trace


def forward(net: AbstainNetwork, x) -> tuple[HeadOutputs, ForwardTrace]:
    """Single-input forward pass."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    f, rho, aux, trace = forward_batch(net, x)
    out = HeadOutputs(f=float(f[0]), rho=float(rho[0]),
                      aux_logits=None if aux is None else aux[0].copy())
    return out, trace


def rho_of(net: AbstainNetwork, x) -> float:
    """Realized rejection bandwidth at x (always >= 0)."""
    if net.rej_mode == SCALAR:
        return float(max(net.raw_rho[0], 0.0))
    _, rho, _, _ = forward_batch(net, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(rho[0])


def decide(f, rho) -> Decision:
    """Three-way decision; the band is closed, so |f| == rho rejects."""
    if isinstance(f, HeadOutputs):
        f, rho = f.f, f.rho
    if abs(f) <= rho:
        return Decision.REJECT
    return Decision.POS if f > rho else Decision.NEG


def decide_batch(f: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Vectorized decide; returns int array in {-1, 0, +1}."""
    out = np.where(np.abs(f) <= rho, 0, np.where(f > rho, 1, -1))
    return out.astype(np.int64)


def _chain_backward(layers, trace_slot, d_out, grads, offset, masks=None):
    """Backpropagate d_out through a chain; writes dW, db into grads[offset:],
    returns gradient w.r.t. the chain input."""
    d_a = d_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        a_in, z = trace_slot[i]
        if masks is not None and i < len(masks) and masks[i] is not None:
            d_a = d_a * masks[i]
        d_z = d_a * (z > 0.0) if layer.activation == RELU else d_a
        grads[offset + 2 * i] += d_z.T @ a_in
        grads[offset + 2 * i + 1] += d_z.sum(axis=0)
        d_a = d_z @ layer.weights
    return d_a


def backward_batch(net: AbstainNetwork, trace: ForwardTrace,
                   d_f: np.ndarray, d_rho: np.ndarray,
                   d_aux: np.ndarray | None = None) -> list[np.ndarray]:
    """Exact gradients of sum_b(loss_b) w.r.t. every parameter.

    d_f, d_rho are (B,) upstream gradients w.r.t. the prediction score and the
    realized (post-ReLU) bandwidth; d_aux is (B, 2) when an auxiliary head is
    present.  The ReLU subgradient at 0 is taken as 0.
    """
    if trace.n_params != len(net.parameters()):
        raise ShapeError("trace was produced by a different network")
    B = trace.x.shape[0]
    if d_f.shape != (B,) or d_rho.shape != (B,):
        raise ShapeError("upstream gradient shapes do not match the trace")
    grads = [np.zeros_like(p) for p in net.parameters()]
    n_body = len(net.body)
    off_pred = 2 * n_body
    d_feat = _chain_backward(net.pred_head, trace.pred, d_f[:, None], grads, off_pred)
    off = off_pred + 2 * len(net.pred_head)
    d_raw = d_rho * (trace.rej_raw > 0.0)
    if net.rej_mode == SCALAR:
        grads[off][0] += d_raw.sum()
        off += 1
    else:
        d_feat = d_feat + _chain_backward(net.rej_head, trace.rej, d_raw[:, None], grads, off)
        off += 2 * len(net.rej_head)
    if net.has_aux:
        if d_aux is None:
            d_aux = np.zeros((B, 2))
        d_feat = d_feat + _chain_backward(net.aux_head, trace.aux, d_aux, grads, off)
    _chain_backward(net.body, trace.body, d_feat, grads, 0, trace.body_masks)
    return grads


def backward(net: AbstainNetwork, trace: ForwardTrace,
             d_f: float, d_rho: float, d_aux=None) -> list[np.ndarray]:
    """Single-input backward; see backward_batch."""
    d_aux_arr = None if d_aux is None else np.asarray(d_aux, dtype=np.float64).reshape(1, 2)
    return backward_batch(net, trace, np.array([float(d_f)]), np.array([float(d_rho)]), d_aux_arr)


def init_network(widths, rej_mode: str = SCALAR, aux: bool = False,
                 seed: int = 0, init_rho: float = 1.0) -> AbstainNetwork:
    """Build a network with He fan-in weights and zero biases.

    widths = (input_dim, h1, ..., hk): the body has k ReLU layers; each head
    is a single linear layer on the last body width.  The scalar bandwidth
    starts at init_rho (default 1.0, so the band is alive at initialization).
    Identical seeds give bit-identical parameters.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise ConfigError(f"need positive widths (input, hidden...), got {widths}")
    root = Stream(seed).child("init")

    def he_layer(idx, out_dim, in_dim, activation):
        w = root.child("layer", idx).normals(out_dim * in_dim).reshape(out_dim, in_dim)
        w *= np.sqrt(2.0 / in_dim)
        return DenseLayer(w, np.zeros(out_dim), activation)

    body = [he_layer(i, widths[i + 1], widths[i], RELU) for i in range(len(widths) - 1)]
    feat = widths[-1]
    pred = [he_layer(100, 1, feat, IDENTITY)]
    rej_head = [] if rej_mode == SCALAR else [he_layer(200, 1, feat, IDENTITY)]
    aux_head = [he_layer(300, 2, feat, IDENTITY)] if aux else []
    return AbstainNetwork(input_dim=widths[0], body=body, pred_head=pred,
                          rej_mode=rej_mode, raw_rho=np.array([float(init_rho)]),
                          rej_head=rej_head, aux_head=aux_head)


# ---------------------------------------------------------------------------
# Optimizers

@dataclass
class OptimizerState:
    """Adagrad or SGD-with-momentum, with decoupled L2 shrinkage.

    Weight decay is applied as p -= lr * wd * p before the update so the
    Adagrad accumulator sees data gradients only.
    """
    kind: str                       # "adagrad" | "sgdm"
    lr: float
    epsilon: float = 1e-8           # adagrad
    momentum: float = 0.9           # sgdm
    weight_decay: float = 0.0
    slots: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("adagrad", "sgdm"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0.0:
            raise ConfigError("learning rate must be positive")

    def ensure_slots(self, params: list[np.ndarray]):
        if not self.slots:
            self.slots = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        """Update params in place."""
        self.ensure_slots(params)
        for p, g, s in zip(params, grads, self.slots):
            if p.shape != g.shape:
                raise ShapeError("gradient shape mismatch")
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            if self.kind == "adagrad":
                s += g * g
                p -= self.lr * g / (np.sqrt(s) + self.epsilon)
            else:
                s *= self.momentum
                s -= self.lr * g
                p += s


# ---------------------------------------------------------------------------
# Serialization: one JSON document, floats carried by Python repr (shortest
# round-trip, <= 17 significant digits), so save -> load is bit-exact.

def _layer_to_json(layer: DenseLayer) -> dict:
    return {
        "rows": layer.out_dim,
        "cols": layer.in_dim,
        "weights": [float(v) for v in layer.weights.ravel()],  # row-major
        "bias": [float(v) for v in layer.bias],
        "activation": layer.activation,
    }


def _layer_from_json(d: dict) -> DenseLayer:
    w = np.array(d["weights"], dtype=np.float64).reshape(d["rows"], d["cols"])
    return DenseLayer(w, np.array(d["bias"], dtype=np.float64), d["activation"])


def to_json_dict(net: AbstainNetwork) -> dict:
    doc = {
        "config": {"format": 1, "input_dim": net.input_dim, "body_layers": len(net.body)},
        "layers": [_layer_to_json(l) for l in net.body + net.pred_head],
        "rej_mode": ({"kind": SCALAR, "raw_rho": float(net.raw_rho[0])}
                     if net.rej_mode == SCALAR else
                     {"kind": INSTANCE, "layers": [_layer_to_json(l) for l in net.rej_head]}),
        "aux_head": [_layer_to_json(l) for l in net.aux_head] if net.has_aux else None,
    }
    return doc


def from_json_dict(doc: dict) -> AbstainNetwork:
    n_body = doc["config"]["body_layers"]
    layers = [_layer_from_json(d) for d in doc["layers"]]
    rej = doc["rej_mode"]
    if rej["kind"] == SCALAR:
        return AbstainNetwork(
            input_dim=doc["config"]["input_dim"], body=layers[:n_body],
            pred_head=layers[n_body:], rej_mode=SCALAR,
            raw_rho=np.array([rej["raw_rho"]]),
            aux_head=[_layer_from_json(d) for d in doc["aux_head"]] if doc.get("aux_head") else [])
    return AbstainNetwork(
        input_dim=doc["config"]["input_dim"], body=layers[:n_body],
        pred_head=layers[n_body:], rej_mode=INSTANCE,
        rej_head=[_layer_from_json(d) for d in rej["layers"]],
        aux_head=[_layer_from_json(d) for d in doc["aux_head"]] if doc.get("aux_head") else [])


def save_network(net: AbstainNetwork, path):
    with open(path, "w") as fh:
        json.dump(to_json_dict(net), fh)
        fh.write("\n")


def load_network(path) -> AbstainNetwork:
    with open(path) as fh:
        return from_json_dict(json.load(fh))
