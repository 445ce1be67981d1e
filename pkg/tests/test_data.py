import numpy as np
import pytest

from abstainnet.data import (Dataset, ParseError, SplitPlan, boundary_value,
                             generate_sine_dataset, inject_uniform_noise, kfold,
                             load_csv, save_csv, standardize)
from abstainnet.losses import ConfigError


def test_boundary_examples():
    assert boundary_value(np.array([[0.0, 1.0]]))[0] == pytest.approx(1.0)
    assert boundary_value(np.array([[0.0, 0.3]]))[0] == pytest.approx(0.3)


def test_sine_dataset_balanced_no_flips():
    ds = generate_sine_dataset(1000, flip_margin=0.75, flip_prob=0.0, seed=5)
    assert ds.n == 1000
    assert (np.abs(ds.x) <= 1.5).all()
    labels = np.where(boundary_value(ds.x) >= 0, 1, -1)
    assert np.array_equal(ds.y, labels)
    assert (ds.y == 1).sum() == 500 and (ds.y == -1).sum() == 500
    assert ds.meta["flips"] == 0


def test_sine_dataset_flips_only_in_band():
    ds = generate_sine_dataset(2000, flip_margin=0.75, flip_prob=1.0, seed=6)
    clean = np.where(boundary_value(ds.x) >= 0, 1, -1)
    flipped = ds.y != clean
    in_band = np.abs(boundary_value(ds.x)) <= 0.75
    assert flipped.sum() == in_band.sum() == ds.meta["flips"]
    assert (flipped == in_band).all()


def test_sine_dataset_deterministic():
    a = generate_sine_dataset(400, 0.75, 0.5, seed=7)
    b = generate_sine_dataset(400, 0.75, 0.5, seed=7)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    c = generate_sine_dataset(400, 0.75, 0.5, seed=8)
    assert not np.array_equal(a.x, c.x)


def test_sine_dataset_odd_n_rejected():
    with pytest.raises(ConfigError):
        generate_sine_dataset(999, 0.75, 0.5, seed=1)


def test_inject_noise_rates():
    ds = generate_sine_dataset(500, 0.75, 0.0, seed=2)
    same = inject_uniform_noise(ds, 0.0, seed=3)
    assert np.array_equal(same.y, ds.y)
    flipped = inject_uniform_noise(ds, 1.0, seed=3)
    assert np.array_equal(flipped.y, -ds.y)
    noisy = inject_uniform_noise(ds, 0.2, seed=3)
    n_flips = int((noisy.y != ds.y).sum())
    assert n_flips == noisy.meta["noise_flips"]
    assert 50 < n_flips < 150
    assert np.array_equal(noisy.x, ds.x)
    again = inject_uniform_noise(ds, 0.2, seed=3)
    assert np.array_equal(noisy.y, again.y)


def test_load_csv_basic(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("1.0,2.0,1\n3.0,4.0,0\n")
    ds = load_csv(p)
    assert ds.n == 2 and ds.dim == 2
    assert list(ds.y) == [1, -1]
    assert np.array_equal(ds.x, [[1.0, 2.0], [3.0, 4.0]])


def test_load_csv_header_and_tokens(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("f1,f2,cls\n0.5,1.5,g\n-1.0,0.0,b\n0.1,0.2,g\n")
    ds = load_csv(p)
    assert ds.n == 3
    assert list(ds.y) == [1, -1, 1]  # b < g alphabetically -> (-1, +1)


def test_load_csv_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(ParseError):
        load_csv(empty)
    ragged = tmp_path / "r.csv"
    ragged.write_text("1,2,1\n3,4\n")
    with pytest.raises(ParseError, match="row 2"):
        load_csv(ragged)
    bad = tmp_path / "b.csv"
    bad.write_text("1,x,1\n")
    with pytest.raises(ParseError):
        load_csv(bad)
    threeway = tmp_path / "w.csv"
    threeway.write_text("1,2,a\n3,4,b\n5,6,c\n")
    with pytest.raises(ParseError):
        load_csv(threeway)


def test_csv_roundtrip(tmp_path):
    ds = generate_sine_dataset(100, 0.75, 0.5, seed=4)
    p = tmp_path / "s.csv"
    save_csv(ds, p, tmp_path / "s.meta.json")
    back = load_csv(p)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.y, ds.y)


def test_standardize():
    x = np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [5.0, 5.0, 0.0], [7.0, 5.0, 2.0]])
    train = Dataset(x, np.array([1, -1, 1, -1]))
    (t,), means, stds = standardize(train)
    assert np.allclose(t.x[:, 0].mean(), 0) and np.allclose(t.x[:, 0].std(), 1)
    assert np.array_equal(t.x[:, 1], x[:, 1])  # constant column untouched
    # a shifted test set is mapped with TRAIN statistics
    test = Dataset(x + 10.0, np.array([1, 1, 1, 1]))
    (_, tt), _, _ = standardize(train, [test])
    assert np.allclose(tt.x[:, 0] - t.x[:, 0], 10.0 / x[:, 0].std())


def test_kfold_partition_and_determinism():
    ds = generate_sine_dataset(352, 0.75, 0.0, seed=1)
    ds = ds.subset(np.arange(351))
    plan = SplitPlan(k=10, reps=3, seed=4)
    seen = {}
    for rep, fold, tr, va in kfold(ds, plan):
        assert va.n in (35, 36)
        assert tr.n + va.n == 351
        seen.setdefault(rep, []).append(va.n)
    assert all(sum(v) == 351 and len(v) == 10 for v in seen.values())
    # disjoint and exhaustive per repetition
    for rep in range(3):
        folds = [va for r, f, va in
                 ((r, f, v) for r, f, _, v in plan.fold_indices(351)) if r == rep]
        allidx = np.concatenate(folds)
        assert sorted(allidx) == list(range(351))
    # replaying the plan gives identical splits
    a = [va.tolist() for _, _, _, va in plan.fold_indices(351)]
    b = [va.tolist() for _, _, _, va in plan.fold_indices(351)]
    assert a == b


def test_kfold_leave_one_out_and_errors():
    ds = generate_sine_dataset(20, 0.75, 0.0, seed=1)
    plan = SplitPlan(k=20, reps=1, seed=0)
    sizes = [va.n for _, _, _, va in ((r, f, t, ds.subset(v)) for r, f, t, v in plan.fold_indices(20))]
    assert sizes == [1] * 20
    with pytest.raises(ConfigError):
        list(SplitPlan(k=21, reps=1, seed=0).fold_indices(20))
