"""Datasets: synthetic generation, CSV ingestion, label noise, standardization
and cross-validation splits.

All randomness flows through the counter-based streams in ``rng`` (see that
module for the exact algorithm), so every operation here is bit-reproducible
from (seed, parameters).  Stream tags used:

  gen-points   one uniform pair per CANDIDATE point of the sine generator
  gen-flips    one uniform per accepted sample index (consumed only in-band)
  noise        one uniform per sample index
  cv / rep     one 64-bit key per sample for the per-repetition shuffle
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import ConfigError
from .rng import Stream


class ParseError(ValueError):
    """Malformed input file; carries the offending 1-based row number."""

    def __init__(self, msg, row=None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


@dataclass
class Dataset:
    x: np.ndarray                      # (n, dim) float64
    y: np.ndarray                      # (n,) int64 in {-1, +1}
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or len(self.x) != len(self.y) or len(self.x) == 0:
            raise ConfigError("dataset needs matching nonempty x (n, dim) and y (n,)")
        if not np.isfinite(self.x).all():
            raise ConfigError("non-finite features")
        if not np.all(np.abs(self.y) == 1):
            raise ConfigError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], dict(self.meta))


def boundary_value(x: np.ndarray) -> np.ndarray:
    """Signed value of the separating curve x2 - x1 - 2 sin(x1)."""
    return x[:, 1] - x[:, 0] - 2.0 * np.sin(x[:, 0])


def generate_sine_dataset(n: int, flip_margin: float = 0.75,
                          flip_prob: float = 0.5, seed: int = 0) -> Dataset:
    """Uniform points in [-1.5, 1.5]^2 labeled by the sine boundary.

    Clean labels are sign(x2 - x1 - 2 sin x1), with exact zeros labeled +1.
    Classes are balanced to n/2 each by rejection resampling of candidates
    (so n must be even).  Labels of points whose |boundary value| is within
    flip_margin are then flipped independently with probability flip_prob.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if n % 2:
        raise ConfigError("n must be even to balance the classes")
    if not 0.0 <= flip_prob <= 1.0:
        raise ConfigError("flip_prob must lie in [0, 1]")
    points = Stream(seed).child("gen-points")
    quota = n // 2
    counts = {1: 0, -1: 0}
    xs = np.empty((n, 2))
    labels = np.empty(n, dtype=np.int64)
    accepted = 0
    cursor = 0
    while accepted < n:
        chunk = max(2 * (n - accepted), 64)
        u = points.uniforms(2 * chunk, start=cursor)
        cursor += 2 * chunk
        cand = 3.0 * u.reshape(chunk, 2) - 1.5
        g = boundary_value(cand)
        lab = np.where(g >= 0.0, 1, -1)
        for i in range(chunk):
            c = int(lab[i])
            if counts[c] < quota:
                xs[accepted] = cand[i]
                labels[accepted] = c
                counts[c] += 1
                accepted += 1
                if accepted == n:
                    break
    clean = labels.copy()
    g = boundary_value(xs)
    in_band = np.abs(g) <= flip_margin
    u = Stream(seed).child("gen-flips").uniforms(n)
    flip = in_band & (u < flip_prob)
    labels[flip] = -labels[flip]
    meta = {
        "seed": seed, "flip_margin": flip_margin, "flip_prob": flip_prob,
        "class_counts": {"+1": int(np.sum(clean == 1)), "-1": int(np.sum(clean == -1))},
        "flips": int(flip.sum()),
    }
    return Dataset(xs, labels, meta)


def inject_uniform_noise(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Flip each label independently with probability rate."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError("noise rate must lie in [0, 1]")
    u = Stream(seed).child("noise").uniforms(ds.n)
    flip = u < rate
    y = np.where(flip, -ds.y, ds.y)
    meta = dict(ds.meta)
    meta.update({"noise_rate": rate, "noise_seed": seed, "noise_flips": int(flip.sum())})
    return Dataset(ds.x.copy(), y, meta)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _infer_label_map(tokens: set[str]) -> dict[str, int]:
    if tokens <= {"0", "1"}:
        return {"0": -1, "1": 1}
    if tokens <= {"-1", "1", "+1"}:
        return {"-1": -1, "1": 1, "+1": 1}
    if len(tokens) == 2 and not any(_is_number(t) for t in tokens):
        lo, hi = sorted(tokens)
        return {lo: -1, hi: 1}
    raise ParseError(f"cannot map label tokens {sorted(tokens)} to -1/+1")


def load_csv(path, label_last: bool = True, label_map: dict[str, int] | None = None) -> Dataset:
    """Read a numeric CSV with the label in the last (or first) column.

    A non-numeric first row is treated as a header.  Labels may be 0/1,
    -1/+1, or two string tokens (mapped alphabetically to -1/+1 unless an
    explicit label_map is given).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file", row=1)
    start = 0
    first_feats = rows[0][:-1] if label_last else rows[0][1:]
    if first_feats and not all(_is_number(t.strip()) for t in first_feats):
        start = 1
        if len(rows) == 1:
            raise ParseError(f"{path}: header only, no data", row=1)
    width = len(rows[start])
    if width < 2:
        raise ParseError(f"{path}: need at least one feature and a label", row=start + 1)
    feats, toks = [], []
    for i, r in enumerate(rows[start:], start=start + 1):
        if len(r) != width:
            raise ParseError(f"ragged row of width {len(r)}, expected {width}", row=i)
        raw_feats = r[:-1] if label_last else r[1:]
        tok = (r[-1] if label_last else r[0]).strip()
        try:
            feats.append([float(v) for v in raw_feats])
        except ValueError:
            raise ParseError(f"non-numeric feature in {raw_feats}", row=i) from None
        toks.append(tok)
    mapping = label_map if label_map is not None else _infer_label_map(set(toks))
    try:
        y = np.array([mapping[t] for t in toks], dtype=np.int64)
    except KeyError as e:
        raise ParseError(f"unmappable label {e.args[0]!r}", row=start + 1 + toks.index(e.args[0])) from None
    return Dataset(np.array(feats), y, {"path": str(path), "rows": len(toks)})


def save_csv(ds: Dataset, path, meta_path=None):
    """Write x1..xk,label rows plus a JSON metadata sidecar."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(ds.dim)] + ["label"])
        for xi, yi in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in xi] + [int(yi)])
    if meta_path is not None:
        with open(meta_path, "w") as fh:
            json.dump(ds.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def standardize(train: Dataset, others: list[Dataset] = ()):
    """Per-feature z-score using the training statistics only.

    Zero-variance features pass through unchanged.  Returns the transformed
    datasets plus the (means, stds) actually applied.
    """
    means = train.x.mean(axis=0)
    stds = train.x.std(axis=0)
    safe = np.where(stds == 0.0, 1.0, stds)
    shift = np.where(stds == 0.0, 0.0, means)

    def tf(ds):
        return Dataset((ds.x - shift) / safe, ds.y.copy(), dict(ds.meta))

    return [tf(train)] + [tf(o) for o in others], means, stds


@dataclass(frozen=True)
class SplitPlan:
    k: int
    reps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k < 2 or self.reps < 1:
            raise ConfigError("need k >= 2 folds and reps >= 1")

    def fold_indices(self, n: int):
        """Yield (rep, fold, train_idx, val_idx); folds partition each rep's
        fresh seeded shuffle, sizes differing by at most one."""
        if self.k > n:
            raise ConfigError(f"k={self.k} folds exceed n={n} samples")
        base = Stream(self.seed).child("cv")
        sizes = [n // self.k + (1 if f < n % self.k else 0) for f in range(self.k)]
        for rep in range(self.reps):
            perm = base.child("rep", rep).permutation(n)
            stop = np.cumsum(sizes)
            startv = stop - sizes
            for fold in range(self.k):
                val = perm[startv[fold]:stop[fold]]
                train = np.concatenate([perm[:startv[fold]], perm[stop[fold]:]])
                yield rep, fold, train, val


def kfold(ds: Dataset, plan: SplitPlan):
    """Iterate (rep, fold, train Dataset, validation Dataset)."""
    for rep, fold, tr, va in plan.fold_indices(ds.n):
        yield rep, fold, ds.subset(tr), ds.subset(va)
