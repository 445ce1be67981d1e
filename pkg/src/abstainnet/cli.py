"""Command-line front end.

Subcommands: gen-data, train, eval, sweep, noise, bound, bound-curve,
calibration-check, replay.  Every run writes a manifest JSON (resolved
arguments, seeds, input hashes, kernel backend, tool version, timestamps)
sufficient to replay it exactly via `replay`.  Exit codes: 0 success, 1
runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import backend_name
from .bounds import NormSpec, ScopeError, bound_report
from .calibration import oracle_agreement_grid
from .data import (Dataset, ParseError, SplitPlan, generate_sine_dataset,
                   inject_uniform_noise, load_csv, save_csv, standardize)
from .losses import ConfigError, LossConfig
from .network import INSTANCE, SCALAR, init_network, load_network, save_network
from .training import (Schedule, TrainConfig, TrainingDiverged, evaluate,
                       sweep_d, train)


class UsageError(Exception):
    pass


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Manifest:
    def __init__(self, command: str, args: argparse.Namespace, out_dir: Path):
        self.doc = {
            "tool": "abstainnet",
            "version": __version__,
            "backend": backend_name(),
            "command": command,
            "args": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
            "inputs": {},
            "outputs": [],
            "started": _utcnow(),
        }
        self.out_dir = out_dir

    def add_input(self, path):
        p = Path(path)
        self.doc["inputs"][str(p)] = _sha256(p)

    def add_output(self, path):
        self.doc["outputs"].append(str(path))

    def write(self, name: str):
        self.doc["finished"] = _utcnow()
        path = self.out_dir / name
        _write_json(path, self.doc)
        return path


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _parse_widths(text: str):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"bad --widths {text!r}") from None


def _metrics_dict(m):
    return {"accuracy_unrejected": m.accuracy_unrejected,
            "rejection_rate": m.rejection_rate,
            "zero_d_one_risk": m.zero_d_one_risk, "n": m.n}


def _train_config(args, d: float) -> TrainConfig:
    return TrainConfig(
        loss=LossConfig(d=d, gamma=args.gamma, alpha=getattr(args, "alpha", 1.0)),
        epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer,
        lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
        schedule=Schedule(kind=args.schedule, patience=args.patience),
        dropout_rate=args.dropout, seed=args.seed, shuffle=True)


def _write_history_csv(path: Path, history):
    with open(path, "w") as fh:
        fh.write("epoch,loss,risk,rejection_rate,rho_mean\n")
        for epoch, loss, risk, rej, rho_mean in history.rows():
            fh.write(f"{epoch},{loss!r},{risk!r},{rej!r},{rho_mean!r}\n")


# --- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.n % 2:
        raise UsageError("--n must be even (balanced classes)")
    out = Path(args.out)
    if not out.is_absolute():
        out = _out_dir(args) / out
    man = Manifest("gen-data", args, out.parent)
    ds = generate_sine_dataset(args.n, args.flip_margin, args.flip_prob, args.seed)
    meta_path = out.with_suffix(out.suffix + ".meta.json")
    save_csv(ds, out, meta_path)
    man.add_output(out)
    man.add_output(meta_path)
    man.write(out.name + ".manifest.json")
    print(f"wrote {out} ({ds.n} rows, {ds.meta['flips']} flips)")
    return 0


def _load_with_optional_scaler(args, path, scaler=None):
    ds = load_csv(_require_file(path))
    if scaler is not None:
        means = np.array(scaler["means"])
        stds = np.array(scaler["stds"])
        safe = np.where(stds == 0.0, 1.0, stds)
        shift = np.where(stds == 0.0, 0.0, means)
        ds = Dataset((ds.x - shift) / safe, ds.y, dict(ds.meta))
    return ds


def cmd_train(args) -> int:
    out = _out_dir(args)
    man = Manifest("train", args, out)
    data_path = _require_file(args.data)
    man.add_input(data_path)
    ds = load_csv(data_path)
    scaler = None
    if args.standardize:
        (ds,), means, stds = standardize(ds)
        scaler = {"means": [float(v) for v in means], "stds": [float(v) for v in stds]}
    net = init_network((ds.dim,) + _parse_widths(args.widths),
                       rej_mode=args.rej, aux=args.aux, seed=args.seed,
                       init_rho=args.init_rho)
    cfg = _train_config(args, args.d)
    net, history = train(net, ds, cfg)
    model_path = out / "model.json"
    save_network(net, model_path)
    hist_path = out / "history.csv"
    _write_history_csv(hist_path, history)
    metrics_path = out / "metrics.json"
    _write_json(metrics_path, _metrics_dict(evaluate(net, ds, args.d)))
    outputs = [model_path, hist_path, metrics_path]
    if scaler is not None:
        scaler_path = out / "scaler.json"
        _write_json(scaler_path, scaler)
        outputs.append(scaler_path)
    for p in outputs:
        man.add_output(p)
    man.write("train.manifest.json")
    final = history.epochs[-1]
    print(f"trained {cfg.epochs} epochs: loss {final.loss:.4f}, "
          f"risk {final.zero_d_one_risk:.4f}, rejection {final.rejection_rate:.3f}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    man = Manifest("eval", args, out)
    model_path = _require_file(args.model)
    data_path = _require_file(args.data)
    man.add_input(model_path)
    man.add_input(data_path)
    net = load_network(model_path)
    scaler = None
    if args.scaler:
        scaler = json.loads(Path(_require_file(args.scaler)).read_text())
        man.add_input(args.scaler)
    ds = _load_with_optional_scaler(args, data_path, scaler)
    if ds.dim != net.input_dim:
        raise ConfigError(f"model expects input dim {net.input_dim}, data has {ds.dim}")
    metrics_path = out / "metrics.json"
    _write_json(metrics_path, _metrics_dict(evaluate(net, ds, args.d)))
    man.add_output(metrics_path)
    man.write("eval.manifest.json")
    print(f"wrote {metrics_path}")
    return 0


def _d_grid(d_min, d_max, d_step):
    if d_step <= 0 or d_max < d_min:
        raise UsageError("need d-step > 0 and d-max >= d-min")
    out = []
    i = 0
    while True:
        v = round(d_min + i * d_step, 10)
        if v > d_max + 1e-12:
            break
        out.append(v)
        i += 1
    return out


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    man = Manifest("sweep", args, out)
    data_path = _require_file(args.data)
    man.add_input(data_path)
    ds = load_csv(data_path)
    grid = _d_grid(args.d_min, args.d_max, args.d_step)
    plan = SplitPlan(k=args.folds, reps=args.reps, seed=args.seed)
    cfg = _train_config(args, grid[0])
    widths = (ds.dim,) + _parse_widths(args.widths)
    rows = sweep_d(ds, grid, plan, cfg, widths, jobs=args.jobs)
    table_path = out / "sweep.csv"
    with open(table_path, "w") as fh:
        fh.write("d,acc_mean,acc_std,rej_mean,rej_std,risk_mean,risk_std\n")
        for r in rows:
            fh.write(f"{r['d']!r},{r['acc_mean']!r},{r['acc_std']!r},{r['rej_mean']!r},"
                     f"{r['rej_std']!r},{r['risk_mean']!r},{r['risk_std']!r}\n")
    _write_json(out / "sweep.json", rows)
    man.add_output(table_path)
    man.add_output(out / "sweep.json")
    man.write("sweep.manifest.json")
    print(f"wrote {table_path} ({len(rows)} rows x {plan.k}x{plan.reps} cells)")
    return 0


def cmd_noise(args) -> int:
    out = _out_dir(args)
    man = Manifest("noise", args, out)
    if args.data:
        train_ds = load_csv(_require_file(args.data))
        man.add_input(args.data)
        test_ds = load_csv(_require_file(args.test_data))
        man.add_input(args.test_data)
    else:
        gen = args.seed
        train_ds = generate_sine_dataset(args.n, args.flip_margin, args.flip_prob, gen)
        test_ds = generate_sine_dataset(args.test_n, args.flip_margin, 0.0, gen + 1)
    rates = [0.0] + [float(r) for r in args.rates.split(",") if r.strip()]
    rows = []
    for rate in rates:
        noisy = inject_uniform_noise(train_ds, rate, args.seed + 17) if rate > 0 else train_ds
        net = init_network((train_ds.dim,) + _parse_widths(args.widths),
                           rej_mode=SCALAR, seed=args.seed)
        cfg = _train_config(args, args.d)
        net, _ = train(net, noisy, cfg)
        m = evaluate(net, test_ds, args.d)
        rows.append({"rate": rate, **_metrics_dict(m)})
    report_path = out / "noise_report.json"
    _write_json(report_path, rows)
    man.add_output(report_path)
    man.write("noise.manifest.json")
    print(f"wrote {report_path}")
    return 0


def cmd_bound(args) -> int:
    out = _out_dir(args)
    man = Manifest("bound", args, out)
    net = load_network(_require_file(args.model))
    man.add_input(args.model)
    ds = load_csv(_require_file(args.data))
    man.add_input(args.data)
    test = None
    if args.test_data:
        test = load_csv(_require_file(args.test_data))
        man.add_input(args.test_data)
    cfg = LossConfig(d=args.d, gamma=args.gamma)
    report = bound_report(net, ds, cfg, NormSpec(args.p, args.q), args.delta, test)
    path = out / "bound.json"
    _write_json(path, report)
    man.add_output(path)
    man.write("bound.manifest.json")
    print(f"bound {report['bound']:.4f} (empirical {report['empirical_risk']:.4f})")
    return 0


def cmd_bound_curve(args) -> int:
    out = _out_dir(args)
    man = Manifest("bound-curve", args, out)
    if args.m_step <= 0 or args.m_end < args.m_start:
        raise UsageError("need m-step > 0 and m-end >= m-start")
    ms = list(range(args.m_start, args.m_end + 1, args.m_step))
    # nested prefixes of one master draw + a fixed starting network isolate
    # the effect of the sample count on the bound
    master_n = args.m_end + (args.m_end % 2)
    master = generate_sine_dataset(master_n, args.flip_margin, args.flip_prob, args.seed + 100)
    test_ds = generate_sine_dataset(args.test_n, args.flip_margin, args.flip_prob,
                                    args.seed + 1)
    spec = NormSpec(args.p, args.q)
    rows = []
    for m in ms:
        ds = master.subset(slice(0, m))
        net = init_network((ds.dim,) + _parse_widths(args.widths),
                           rej_mode=SCALAR, seed=args.seed)
        cfg = _train_config(args, args.d)
        net, _ = train(net, ds, cfg)
        rep = bound_report(net, ds, LossConfig(d=args.d, gamma=args.gamma),
                           spec, args.delta, test_ds)
        rep["bound_geq_test"] = bool(rep["bound"] >= rep["test_risk"])
        rows.append(rep)
    _write_json(out / "curve.json", rows)
    csv_path = out / "curve.csv"
    with open(csv_path, "w") as fh:
        fh.write("m,empirical_risk,test_risk,beta,rho_bar,bound,bound_geq_test\n")
        for r in rows:
            fh.write(f"{r['m']},{r['empirical_risk']!r},{r['test_risk']!r},"
                     f"{r['beta']!r},{r['rho_bar']!r},{r['bound']!r},{int(r['bound_geq_test'])}\n")
    man.add_output(out / "curve.json")
    man.add_output(csv_path)
    man.write("bound-curve.manifest.json")
    ok = sum(r["bound_geq_test"] for r in rows)
    print(f"wrote {csv_path}: bound >= test risk in {ok}/{len(rows)} points")
    return 0


def cmd_calibration_check(args) -> int:
    out = _out_dir(args)
    man = Manifest("calibration-check", args, out)
    rhos = [float(r) for r in args.rhos.split(",") if r.strip()]
    if args.gamma != 1.0:
        # the oracle is pinned to sharpness 1; other values rescale the band
        rhos_used = [args.gamma * r for r in rhos]
    else:
        rhos_used = rhos
    report = oracle_agreement_grid(rhos=rhos_used)
    report["gamma"] = args.gamma
    report["gamma_rescaled"] = args.gamma != 1.0
    if args.gamma != 1.0:
        report["note"] = ("scores and bandwidths were rescaled by gamma; the oracle "
                          "itself is derived at sharpness 1")
    path = out / "calibration_report.json"
    _write_json(path, report)
    man.add_output(path)
    man.write("calibration-check.manifest.json")
    print(f"agreement {report['decision_agreement_rate']:.1%} over {report['n_cells']} cells; "
          f"worst finite gap {report['worst_finite_gap']:.2e}")
    return 0


def cmd_replay(args) -> int:
    man_path = _require_file(args.manifest)
    doc = json.loads(man_path.read_text())
    if doc.get("backend") != backend_name():
        raise ConfigError(
            f"manifest was produced on backend {doc.get('backend')!r}, current is "
            f"{backend_name()!r}; set ABSTAINNET_BACKEND to match")
    argv = [doc["command"]]
    for k, v in doc["args"].items():
        if args.out_dir_override and k == "out_dir":
            v = args.out_dir_override
        flag = "--" + k.replace("_", "-")
        if isinstance(v, bool):
            if v:
                argv.append(flag)
        elif v is not None:
            argv += [flag, str(v)]
    return main(argv)


# --- parser -------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default=".")


def _add_train_flags(p, with_alpha=True):
    p.add_argument("--gamma", type=float, required=True,
                   help="sigmoid sharpness (explicit by design; no silent default)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=["adagrad", "sgdm"], default="adagrad")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--schedule", choices=["constant", "plateau"], default="constant")
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--widths", default="64,64,64", help="hidden widths, comma separated")
    if with_alpha:
        p.add_argument("--alpha", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abstainnet",
                                 description="Reject-option classifiers with a double-sigmoid objective")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic sine-boundary dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--flip-margin", type=float, default=0.75)
    p.add_argument("--flip-prob", type=float, default=0.5)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--rej", choices=[SCALAR, INSTANCE], default=SCALAR)
    p.add_argument("--aux", action="store_true")
    p.add_argument("--init-rho", type=float, default=1.0)
    p.add_argument("--standardize", action="store_true")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--scaler", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="cross-validated sweep over rejection costs")
    p.add_argument("--data", required=True)
    p.add_argument("--d-min", type=float, default=0.05)
    p.add_argument("--d-max", type=float, default=0.5)
    p.add_argument("--d-step", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--reps", type=int, default=10)
    _add_train_flags(p, with_alpha=False)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("noise", help="label-noise robustness comparison")
    p.add_argument("--rates", default="0.2,0.4")
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--test-data", default=None)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--test-n", type=int, default=2000)
    p.add_argument("--flip-margin", type=float, default=0.75)
    p.add_argument("--flip-prob", type=float, default=0.5)
    _add_train_flags(p, with_alpha=False)
    _add_common(p)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("bound", help="norm-based generalization bound for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--delta", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("bound-curve", help="bound vs test risk over growing samples")
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--m-start", type=int, default=100)
    p.add_argument("--m-end", type=int, default=1000)
    p.add_argument("--m-step", type=int, default=100)
    p.add_argument("--test-n", type=int, default=2000)
    p.add_argument("--flip-margin", type=float, default=0.75)
    p.add_argument("--flip-prob", type=float, default=0.5)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--delta", type=float, default=0.1)
    _add_train_flags(p, with_alpha=False)
    _add_common(p)
    p.set_defaults(func=cmd_bound_curve)

    p = sub.add_parser("calibration-check", help="closed-form oracle vs brute force")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--rhos", default="0.25,0.5,1,2")
    _add_common(p)
    p.set_defaults(func=cmd_calibration_check)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir-override", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_replay)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 2
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ParseError, ConfigError, ScopeError,
            TrainingDiverged, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
