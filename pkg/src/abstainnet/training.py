"""Mini-batch training loop, metrics, and the rejection-cost sweep protocol.

One call to train() owns its network.  All stochasticity (shuffles, dropout
masks) derives from cfg.seed via documented child streams, so a run is
reproducible bit-for-bit from (initial network, config, data) on a given
kernel backend.  Sweep cells derive their seeds from (base seed, rep, fold,
d-index), which makes parallel and serial execution produce identical tables.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset, SplitPlan, standardize
from .losses import ConfigError, LossConfig, zero_d_one_loss
from .network import SCALAR, AbstainNetwork, decide_batch, forward_batch, init_network
from .rng import Stream


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, param_norm):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:.3e})")
        self.epoch, self.batch, self.param_norm = epoch, batch, param_norm


@dataclass(frozen=True)
class Schedule:
    kind: str = "constant"          # "constant" | "plateau"
    patience: int = 10
    factor: float = 0.5
    min_delta: float = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adagrad"      # "adagrad" | "sgdm"
    lr: float = 1e-3
    momentum: float = 0.9
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    schedule: Schedule = field(default_factory=Schedule)
    dropout_rate: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    zero_d_one_risk: float
    rejection_rate: float
    rho_min: float
    rho_mean: float
    rho_max: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def rows(self):
        return [(e.epoch, e.loss, e.zero_d_one_risk, e.rejection_rate, e.rho_mean)
                for e in self.epochs]


@dataclass
class Metrics:
    accuracy_unrejected: float | None
    rejection_rate: float
    zero_d_one_risk: float
    n: int


def _kernel_chains(net: AbstainNetwork) -> dict:
    def pack(layers):
        return [(l.weights, l.bias, 1 if l.activation == "relu" else 0) for l in layers]

    chains = {
        "body": pack(net.body),
        "pred": pack(net.pred_head),
        "rej": pack(net.rej_head) if net.rej_mode != SCALAR else [],
        "aux": pack(net.aux_head),
    }
    if net.rej_mode == SCALAR:
        chains["raw_rho"] = net.raw_rho
    return chains


def evaluate(net: AbstainNetwork, ds: Dataset, d: float) -> Metrics:
    """Decisions via the closed-band rule; accuracy over accepted points only
    (None when everything is rejected); risk is the mean 0-d-1 loss."""
    f, rho, _, _ = forward_batch(net, ds.x)
    decisions = decide_batch(f, rho)
    rejected = decisions == 0
    accepted = ~rejected
    n = ds.n
    rejection_rate = float(rejected.mean())
    if accepted.any():
        correct = decisions[accepted] == ds.y[accepted]
        accuracy = float(correct.mean())
    else:
        accuracy = None
    risk = float(np.mean(zero_d_one_loss(ds.y * f, rho, d)))
    return Metrics(accuracy, rejection_rate, risk, n)


def train(net: AbstainNetwork, ds: Dataset, cfg: TrainConfig,
          backend=None) -> tuple[AbstainNetwork, TrainHistory]:
    """Train net in place on ds; returns (net, per-epoch history).

    Each epoch: seeded shuffle, minibatches (final partial batch kept at its
    true size), one optimizer step per batch on the batch-mean loss.  A
    non-finite batch loss aborts with diagnostics.  The plateau schedule
    halves the learning rate when the epoch training loss stops improving by
    min_delta for `patience` epochs.
    """
    if cfg.loss.alpha < 1.0 and not net.has_aux:
        raise ConfigError("alpha < 1 requires an auxiliary head")
    if not net.body:
        raise ConfigError("training requires at least one body layer")
    if ds.dim != net.input_dim:
        raise ConfigError(f"data dim {ds.dim} does not match input dim {net.input_dim}")
    kernel = backend if backend is not None else _kernels
    chains = _kernel_chains(net)
    params = net.parameters()
    opt = {
        "kind": 0 if cfg.optimizer == "adagrad" else 1,
        "lr": float(cfg.lr), "eps": float(cfg.epsilon), "mom": float(cfg.momentum),
        "wd": float(cfg.weight_decay),
        "slots": [np.zeros_like(p) for p in params],
    }
    if cfg.optimizer not in ("adagrad", "sgdm"):
        raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")
    X = np.ascontiguousarray(ds.x)
    y = ds.y.astype(np.float64)
    run = Stream(cfg.seed).child("train")
    history = TrainHistory()
    best = np.inf
    stall = 0
    identity = np.arange(ds.n, dtype=np.int64)
    for epoch in range(cfg.epochs):
        order = run.child("shuffle", epoch).permutation(ds.n).astype(np.int64) \
            if cfg.shuffle else identity
        dropout_key = run.child("dropout", epoch).key
        mean_loss, bad_batch = kernel.run_epoch(
            chains, opt, X, y, order, cfg.batch_size,
            cfg.loss.d, cfg.loss.gamma, cfg.loss.alpha,
            cfg.dropout_rate, dropout_key)
        if bad_batch >= 0:
            pnorm = float(np.sqrt(sum(float(np.sum(p * p)) for p in params)))
            raise TrainingDiverged(epoch, bad_batch, pnorm)
        f, rho, _, _ = forward_batch(net, X)
        decisions = decide_batch(f, rho)
        risk = float(np.mean(zero_d_one_loss(ds.y * f, rho, cfg.loss.d)))
        history.epochs.append(EpochStats(
            epoch=epoch, loss=float(mean_loss), zero_d_one_risk=risk,
            rejection_rate=float((decisions == 0).mean()),
            rho_min=float(rho.min()), rho_mean=float(rho.mean()), rho_max=float(rho.max())))
        if cfg.schedule.kind == "plateau":
            if mean_loss < best - cfg.schedule.min_delta:
                best = mean_loss
                stall = 0
            else:
                stall += 1
                if stall >= cfg.schedule.patience:
                    opt["lr"] *= cfg.schedule.factor
                    stall = 0
    return net, history


def cell_seed(base_seed: int, rep: int, fold: int, d_index: int) -> int:
    """Deterministic per-cell seed for sweeps: child of the base stream."""
    return Stream(base_seed).child("cell", rep, fold, d_index).key


def _train_cell(args):
    (x_tr, y_tr, x_va, y_va, d, d_index, rep, fold, widths, cfg_dict,
     base_seed, standardize_features) = args
    tr = Dataset(x_tr, y_tr)
    va = Dataset(x_va, y_va)
    if standardize_features:
        (tr, va), _, _ = standardize(tr, [va])
    seed = cell_seed(base_seed, rep, fold, d_index)
    cfg = _cfg_from_dict(cfg_dict, d=d, seed=seed)
    net = init_network(widths, rej_mode=SCALAR, seed=seed)
    net, _ = train(net, tr, cfg)
    m = evaluate(net, va, d)
    return d_index, rep, fold, m.accuracy_unrejected, m.rejection_rate, m.zero_d_one_risk


def _cfg_to_dict(cfg: TrainConfig) -> dict:
    return {
        "gamma": cfg.loss.gamma, "alpha": cfg.loss.alpha, "epochs": cfg.epochs,
        "batch_size": cfg.batch_size, "optimizer": cfg.optimizer, "lr": cfg.lr,
        "momentum": cfg.momentum, "epsilon": cfg.epsilon,
        "weight_decay": cfg.weight_decay, "dropout_rate": cfg.dropout_rate,
        "schedule_kind": cfg.schedule.kind, "patience": cfg.schedule.patience,
        "factor": cfg.schedule.factor, "min_delta": cfg.schedule.min_delta,
        "shuffle": cfg.shuffle,
    }


def _cfg_from_dict(d_: dict, d: float, seed: int) -> TrainConfig:
    return TrainConfig(
        loss=LossConfig(d=d, gamma=d_["gamma"], alpha=d_["alpha"]),
        epochs=d_["epochs"], batch_size=d_["batch_size"], optimizer=d_["optimizer"],
        lr=d_["lr"], momentum=d_["momentum"], epsilon=d_["epsilon"],
        weight_decay=d_["weight_decay"],
        schedule=Schedule(d_["schedule_kind"], d_["patience"], d_["factor"], d_["min_delta"]),
        dropout_rate=d_["dropout_rate"], seed=seed, shuffle=d_["shuffle"])


def sweep_d(ds: Dataset, d_values, plan: SplitPlan, cfg_template: TrainConfig,
            widths, jobs: int = 1, standardize_features: bool = True) -> list[dict]:
    """Cross-validated sweep over rejection costs.

    For each d and each (rep, fold) cell: a fresh seeded network is trained
    on the training folds (z-scored with fold statistics) and evaluated on
    the validation fold.  Means and standard deviations aggregate over all
    rep x fold cells; cells that reject everything are excluded from the
    accuracy aggregate only.
    """
    d_values = [float(v) for v in d_values]
    if not d_values:
        raise ConfigError("need a nonempty d grid")
    cfg_dict = _cfg_to_dict(cfg_template)
    tasks = []
    for d_index, d in enumerate(d_values):
        for rep, fold, tr_idx, va_idx in plan.fold_indices(ds.n):
            tasks.append((ds.x[tr_idx], ds.y[tr_idx], ds.x[va_idx], ds.y[va_idx],
                          d, d_index, rep, fold, tuple(widths), cfg_dict,
                          cfg_template.seed, standardize_features))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_cell, tasks, chunksize=1))
    else:
        results = [_train_cell(t) for t in tasks]
    rows = []
    for d_index, d in enumerate(d_values):
        cell = [r for r in results if r[0] == d_index]
        accs = np.array([r[3] for r in cell if r[3] is not None], dtype=np.float64)
        rejs = np.array([r[4] for r in cell])
        risks = np.array([r[5] for r in cell])
        rows.append({
            "d": d,
            "acc_mean": float(accs.mean()) if accs.size else float("nan"),
            "acc_std": float(accs.std()) if accs.size else float("nan"),
            "rej_mean": float(rejs.mean()), "rej_std": float(rejs.std()),
            "risk_mean": float(risks.mean()), "risk_std": float(risks.std()),
            "cells": len(cell), "cells_with_accepts": int(accs.size),
        })
    return rows
