"""``sparse-doa`` command line.

Every subcommand reads one YAML config (``-c``), applies ``--set`` / ``--seed``
/ ``--out`` overrides, writes its artifacts atomically into the output
directory and finishes with ``manifest-<command>.json``. Exit codes: 0 ok,
2 config parse error, 3 validation error, 1 runtime error; failures also
print a one-line JSON object on stderr.

Artifacts (relative to the output directory)::

    gen-data        dataset.bin, dataset_summary.json
    reduce-classes  catalog.csv
    train           model.bin, training_log.csv
    transfer        model_transfer.bin, training_log_transfer.csv
    select          selection.csv, selection_histogram.csv
    sa-design       candidates.csv, parent_layout.csv
    evaluate        rmse.csv
    scan-loop       scan_log.csv
    crb-diff        crb_diff.csv
    eval-acc        accuracy.csv
    plot            <csv stem>.<kind>.svg
"""

import argparse
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__, config as config_mod
from .errors import SparseDoaError
from .io_utils import atomic_write_text, rows_to_csv

EXIT_CODES = {"parse": 2, "validation": 3}


def _out(cfg, name):
    return os.path.join(cfg.output_dir, name)


def _write(cfg, name, text, written):
    path = _out(cfg, name)
    atomic_write_text(path, text)
    written.append(name)
    return path


def _geometry_and_K(cfg):
    return cfg.make_geometry(), cfg.selection.K


def _azimuth_grid(cfg):
    from .dataset import direction_grid

    return direction_grid(cfg.selection.grid_points, cfg.dataset.sector, cfg.selection.theta_deg)


def _label_source(cfg, g, K):
    if cfg.dataset.label_source == "exhaustive":
        return "exhaustive"
    from .sa2d import generate_candidates

    return generate_candidates(g, K, cfg.sa.candidates, cfg.sa.sa_config(cfg.seed))


def _generate(cfg, g, K, P, L, snr_list, seed, sampling=None):
    from .dataset import generate_training_data

    d = cfg.dataset
    return generate_training_data(
        g, K, P, L, d.T, snr_list, seed, _label_source(cfg, g, K), mode=cfg.selection.mode,
        estimate=cfg.selection.estimate, form=cfg.selection.form, theta_deg=cfg.selection.theta_deg,
        sector=d.sector, sampling=sampling or d.sampling, label_snr_db=d.label_snr_db,
        tol=cfg.selection.tolerance, workers=d.workers, budget=cfg.selection.budget)


def cmd_gen_data(cfg, args, written):
    from .dataset import save_dataset, summary

    g, K = _geometry_and_K(cfg)
    d = cfg.dataset
    ds = _generate(cfg, g, K, d.P, d.L, d.snr_list, cfg.seed)
    save_dataset(ds, _out(cfg, "dataset.bin"))
    written.append("dataset.bin")
    _write(cfg, "dataset_summary.json", json.dumps(summary(ds), indent=2, sort_keys=True) + "\n", written)
    return {"N": len(ds), "n_classes": ds.n_classes}


def cmd_reduce_classes(cfg, args, written):
    from .selection import reduce_classes

    g, K = _geometry_and_K(cfg)
    s = cfg.selection
    cat = reduce_classes(g, K, _azimuth_grid(cfg), s.snr_db, s.T, s.tolerance, mode=s.mode,
                         estimate=s.estimate, budget=s.budget, seed=cfg.seed)
    _write(cfg, "catalog.csv", cat.to_csv(), written)
    return {"C": cat.n_all, "C_bar": len(cat)}


def _load_data(cfg, args, M=None):
    from .dataset import load_dataset

    return load_dataset(args.data or _out(cfg, "dataset.bin"), M)


def _split(cfg, ds):
    from .dataset import split_train_val

    return split_train_val(ds, 1.0 - cfg.dataset.val_fraction, cfg.seed)


def cmd_train(cfg, args, written):
    from .learner import log_csv, save_model, train

    ds = _load_data(cfg, args)
    tr, va = _split(cfg, ds)
    spec = cfg.training.network_spec(ds.M, ds.n_classes)
    model = train(tr, va, spec, cfg.training.train_config(cfg.seed))
    save_model(model, _out(cfg, "model.bin"))
    written.append("model.bin")
    _write(cfg, "training_log.csv", log_csv(model), written)
    return {"epochs": len(model.log), "best_val_accuracy": max(r["val_accuracy"] for r in model.log)}


def cmd_transfer(cfg, args, written):
    from .learner import load_model, log_csv, save_model, tensor_digest, transfer_learn

    if not args.source_model:
        raise config_mod.ConfigError("transfer needs --source-model")
    source = load_model(args.source_model)
    ds = _load_data(cfg, args, source.spec.input_shape[0])
    tr, va = _split(cfg, ds)
    before = tensor_digest(source, source.conv_names())
    model = transfer_learn(source, tr, va, cfg.training.train_config(cfg.seed))
    if tensor_digest(model, source.conv_names()) != before:
        raise SparseDoaError("frozen tensors changed during transfer")
    save_model(model, _out(cfg, "model_transfer.bin"))
    written.append("model_transfer.bin")
    _write(cfg, "training_log_transfer.csv", log_csv(model), written)
    return {"frozen_digest": before}


def _load_model_arg(args, required):
    from .learner import load_model

    if args.model:
        return load_model(args.model)
    if required:
        raise config_mod.ConfigError("this configuration needs --model")
    return None


def cmd_select(cfg, args, written):
    from .doa import select_label
    from .seeding import derive_rng
    from .selection import selection_histogram
    from .simulation import sample_covariance, simulate_snapshots

    g, K = _geometry_and_K(cfg)
    s = cfg.selection
    model = _load_model_arg(args, False)
    policies = ["best_crb", "greedy", "random"] + (["cnn"] if model is not None else [])
    rows, labels = [], {p: [] for p in policies}
    for i, d in enumerate(_azimuth_grid(cfg)):
        R = sample_covariance(simulate_snapshots(g, d, s.snr_db, s.T, derive_rng(cfg.seed, "select", i)))
        for p in policies:
            lab = select_label(p, g, d, K, s.snr_db, s.T, R, model=model,
                               rng=derive_rng(cfg.seed, "random", i), estimate=s.estimate)
            labels[p].append(lab)
            rows.append([d.degrees[1], p, lab])
    _write(cfg, "selection.csv", rows_to_csv(["phi_deg", "method", "label"], rows), written)
    hist = []
    for p in policies:
        for m, pct in enumerate(selection_histogram(labels[p], g.M)):
            hist.append([m, p, float(pct)])
    _write(cfg, "selection_histogram.csv", rows_to_csv(["index", "method", "percent"], hist), written)
    return {"directions": len(labels[policies[0]])}


def cmd_sa_design(cfg, args, written):
    from .sa2d import generate_candidates

    g = cfg.make_geometry()
    K = cfg.sa.K if cfg.sa.K is not None else cfg.selection.K
    cand = generate_candidates(g, K, cfg.sa.candidates, cfg.sa.sa_config(cfg.seed))
    _write(cfg, "candidates.csv", cand.to_csv(), written)
    _write(cfg, "parent_layout.csv", g.to_csv(), written)
    return {"best_cost": min(cand.costs)}


def cmd_evaluate(cfg, args, written):
    from .doa import SearchGrid, evaluate_rmse, reports_csv
    from .geometry import Direction

    g, K = _geometry_and_K(cfg)
    e = cfg.evaluation
    model = _load_model_arg(args, "cnn" in e.policies)
    truth = None if e.direction_deg is None else Direction.from_degrees(*e.direction_deg)
    if cfg.selection.estimate == "azimuth":
        grid = SearchGrid.azimuth(e.grid_step_deg, cfg.selection.theta_deg)
    else:
        grid = SearchGrid.hemisphere(e.grid_step_deg)
    reports = []
    for p in e.policies:
        reports.append(evaluate_rmse(
            g, p, truth, K=K, snr_list=e.snr_list, snapshots_list=e.snapshots_list, snr_db=e.snr_db,
            T=e.T, J_T=e.J_T, seed=cfg.seed, model=model, label=e.fixed_label, grid=grid,
            estimate=cfg.selection.estimate, sector=cfg.dataset.sector, theta_deg=cfg.selection.theta_deg,
            workers=e.workers))
    _write(cfg, "rmse.csv", reports_csv(reports), written)
    return {r.method: r.rmse for r in reports}


def cmd_scan_loop(cfg, args, written):
    from .doa import run_scan_loop, scan_log_csv
    from .geometry import Direction
    from .selection import best_subarray

    g, K = _geometry_and_K(cfg)
    sc = cfg.scan
    th = cfg.selection.theta_deg

    def traj(s):
        return Direction.from_degrees(th, sc.start_phi_deg + sc.drift_deg_per_scan * s)

    if sc.selector == "cnn":
        model = _load_model_arg(args, True)
    elif sc.selector == "best_crb":
        # a full-array estimate of the direction drives the CRB-optimal choice
        from .doa import SearchGrid, estimate_doa

        grid = SearchGrid.azimuth(theta_deg=th)

        def model(R):
            d = estimate_doa(R, g, 1, grid)[0]
            return best_subarray(g, d, K, sc.snr_db, sc.T, estimate=cfg.selection.estimate)[0]
    else:
        model = None
    if model is None and sc.fixed_label is None:
        raise config_mod.ConfigError("scan.fixed_label is required for the fixed selector")
    recs = run_scan_loop(g, model, sc.scans, sc.refresh_period, traj, sc.snr_db, sc.T, cfg.seed,
                         fixed_label=sc.fixed_label, theta_deg=th)
    _write(cfg, "scan_log.csv", scan_log_csv(recs), written)
    errs = [abs(r.error_deg) for r in recs if math.isfinite(r.error_deg)]
    return {"mean_abs_error_deg": float(np.mean(errs)) if errs else math.nan}


def cmd_crb_diff(cfg, args, written):
    from .bounds import crb_batch

    g, _ = _geometry_and_K(cfg)
    s = cfg.selection
    label = cfg.evaluation.fixed_label or tuple(range(g.M))
    combos = np.array([label], dtype=np.int64)
    rows = []
    for d in _azimuth_grid(cfg):
        kt_f, kp_f, ka_f = crb_batch(g, d, combos, s.snr_db, s.T, form="fim", estimate=s.estimate)
        kt_p, kp_p, ka_p = crb_batch(g, d, combos, s.snr_db, s.T, form="cross", estimate=s.estimate)
        a, b = float(ka_f[0]), float(ka_p[0])
        rel = abs(b - a) / a if math.isfinite(a) and math.isfinite(b) and a > 0 else math.inf
        rows.append([d.degrees[1], float(kt_f[0]), float(kp_f[0]), float(kt_p[0]), float(kp_p[0]), rel])
    header = ["phi_deg", "kappa_theta_fim", "kappa_phi_fim", "kappa_theta_cross", "kappa_phi_cross",
              "abs_rel_diff"]
    _write(cfg, "crb_diff.csv", rows_to_csv(header, rows), written)
    return {"rows": len(rows)}


def cmd_eval_acc(cfg, args, written):
    from .learner import accuracy
    from .seeding import derive_int

    model = _load_model_arg(args, True)
    g, K = _geometry_and_K(cfg)
    e = cfg.evaluation
    rows = []
    for i, snr in enumerate(e.test_snr_list):
        ds = _generate(cfg, g, K, e.test_P, e.test_L, [snr], derive_int(cfg.seed, "eval-acc", i), "random")
        rows.append([float(snr), accuracy(model, ds), len(ds)])
    _write(cfg, "accuracy.csv", rows_to_csv(["snr_test_db", "accuracy", "N"], rows), written)
    return {"accuracy": [r[1] for r in rows]}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "reduce-classes": cmd_reduce_classes,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "select": cmd_select,
    "sa-design": cmd_sa_design,
    "evaluate": cmd_evaluate,
    "scan-loop": cmd_scan_loop,
    "crb-diff": cmd_crb_diff,
    "eval-acc": cmd_eval_acc,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("parse", "UsageError", message)


def build_parser():
    p = _Parser(prog="sparse-doa", description="Cognitive sparse-array selection experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("-c", "--config", help="YAML experiment config")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. dataset.P=10 (repeatable)")
        s.add_argument("--seed", type=int, help="override the top-level seed")
        s.add_argument("--out", help="output directory (else config, else $SPARSE_DOA_OUT, else ./out)")
        s.add_argument("--data", help="dataset file (default <out>/dataset.bin)")
        s.add_argument("--model", help="model file for cnn policies")
        s.add_argument("--source-model", help="source model for transfer")
    s = sub.add_parser("plot")
    s.add_argument("csv")
    s.add_argument("--kind", required=True)
    s.add_argument("-o", "--output")
    return p


def _fail(category, kind, message):
    sys.stderr.write(json.dumps({"error": category, "type": kind, "message": str(message)}) + "\n")
    raise SystemExit(EXIT_CODES.get(category, 1))


def _manifest(cfg, digest, command, written, result, wall):
    import matplotlib
    import numba
    import yaml

    return {
        "command": command,
        "config_sha256": digest,
        "seed": cfg.seed,
        "artifacts": written,
        "result": result,
        "versions": {"sparse_doa": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "numba": numba.__version__, "matplotlib": matplotlib.__version__, "pyyaml": yaml.__version__},
        "wall_time_s": round(wall, 3),
        "config": cfg.to_dict(),
    }


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        from .plots import emit_plot

        path = emit_plot(args.csv, args.kind, args.output)
        print(json.dumps({"plot": path}))
        return 0
    cfg, digest = config_mod.load(args.config, args.set, args.seed, args.out)
    os.makedirs(cfg.output_dir, exist_ok=True)
    t0 = time.perf_counter()
    written = []
    result = COMMANDS[args.command](cfg, args, written)
    manifest = _manifest(cfg, digest, args.command, written, result, time.perf_counter() - t0)
    atomic_write_text(_out(cfg, f"manifest-{args.command}.json"),
                      json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    print(json.dumps({"command": args.command, "artifacts": written, "result": result}, default=_json_default))
    return 0


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    return str(o)


def main(argv=None):
    try:
        return run(argv)
    except SystemExit:
        raise
    except SparseDoaError as exc:
        _fail(exc.category, type(exc).__name__, exc)
    except (ValueError, KeyError, TypeError) as exc:
        _fail("validation", type(exc).__name__, exc)
    except OSError as exc:
        _fail("runtime", type(exc).__name__, exc)
    return 1


if __name__ == "__main__":
    sys.exit(main())
