"""Command-line experiment runner.

Verbs
-----
validate      parse and validate a config, print its hash
run           one run; writes ``<outdir>/<hash>/trace.csv`` and ``summary.json``
sweep         one run per sweep value plus ``<outdir>/<hash>/sweep.csv``
oracle-check  finite-difference suite for the oracles and the hypergradient

Exit codes: 0 success, 2 config error, 3 divergence, 4 oracle failure,
5 I/O error.
"""
import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from . import data, fdcheck, metrics, network
from .adaptive import AdaSDBOConfig
from .baselines import ConstConfig
from .oracle import OracleConfig, OracleFailure
from .problems import QuadraticBilevel, SoftmaxHPO, SyntheticLogisticHPO
from .runner import run
from .swarm import DivergenceError, InitSpec, projection_radius_auto

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_ORACLE, EXIT_IO = 0, 2, 3, 4, 5
OUTDIR_ENV = "ADASDBO_OUTDIR"
SWEEP_COLUMNS = ("value", "final_accuracy", "final_stationarity", "diverged")
FD_TOLERANCE = 1e-5


# -- construction -------------------------------------------------------------

def build_problem(cfg):
    pb, n = cfg["problem"], cfg["topology"]["n"]
    if pb["kind"] == "quadratic":
        return QuadraticBilevel.random(n, pb["upper_dim"], pb["lower_dim"], seed=pb["seed"],
                                       scale=pb["scale"], heterogeneity=pb["heterogeneity"],
                                       coupling=pb["coupling"])
    if pb["kind"] == "synthetic":
        shards = data.generate_synthetic(n, pb["dim"], pb["train_total"] // n,
                                         pb["val_total"] // n, pb["r"],
                                         data.RngSpec(pb["seed"], "synthetic"))
        return SyntheticLogisticHPO.from_datasets(shards, r=pb["r"])
    return _build_softmax(pb, n)


def _build_softmax(pb, n):
    train = data.load_idx(pb["train_images"], pb["train_labels"], "train")
    if pb["val_images"] and pb["val_labels"]:
        val = data.load_idx(pb["val_images"], pb["val_labels"], "validation")
        train = train.subset(np.arange(min(pb["max_train"], len(train))))
        val = val.subset(np.arange(min(pb["max_val"], len(val))))
    else:
        # carve validation samples off the end of the training file
        n_tr = min(pb["max_train"], len(train) // 2)
        n_va = min(pb["max_val"], len(train) - n_tr)
        val = train.subset(np.arange(n_tr, n_tr + n_va), "validation")
        train = train.subset(np.arange(n_tr))
    rng = data.RngSpec(pb["seed"], "partition")
    kw = dict(policy=pb["partition"], fraction=pb["skew_fraction"])
    tr = data.partition(train, n, rng=rng, **kw)
    va = data.partition(val, n, rng=data.RngSpec(pb["seed"], "partition-val"), **kw)
    return SoftmaxHPO.from_datasets(tr, va, pb["num_classes"])


def build_topology(cfg):
    topo = cfg["topology"]
    n, kind = topo["n"], topo["kind"]
    if kind == "ring":
        return network.build_ring(n, topo["ring_w"])
    if kind == "ladder":
        return network.build_ladder(n)
    if kind == "random":
        return network.build_random(n, topo["edge_prob"], topo["seed"])
    return network.build_complete(n)


def build_algorithm(cfg, problem):
    alg = cfg["algorithm"]
    (gx, gy, gv), (ex, ey, ev) = C.coefficients(alg)
    init = InitSpec(m0=alg["m0"])
    rad = alg["projection_radius"]
    if rad == "unbounded":
        radius = None
    elif rad == "auto":
        radius = projection_radius_auto(problem, init.build(problem))
    else:
        radius = float(rad)
    if alg["kind"] == "adasdbo":
        algo = AdaSDBOConfig(gamma_x=gx, gamma_y=gy, gamma_v=gv, m0=alg["m0"],
                             projection_radius=radius, rounds=alg["rounds"],
                             mix_accumulators=alg["mix_accumulators"])
    else:
        algo = ConstConfig(eta_x=ex, eta_y=ey, eta_v=ev, projection_radius=radius,
                           rounds=alg["rounds"])
    return algo, init


def build_oracle(cfg):
    o = cfg["oracle"]
    return OracleConfig(inner_tol=o["inner_tol"], cg_tol=o["cg_tol"],
                        max_inner_iters=o["max_inner_iters"], max_cg_iters=o["max_cg_iters"])


def _construct(cfg):
    """Problem, mixing matrix and algorithm; invalid parameters become ConfigError."""
    try:
        problem = build_problem(cfg)
        W = build_topology(cfg)
        algo, init = build_algorithm(cfg, problem)
    except (OSError, data.IdxParseError, OracleFailure):
        raise
    except (ValueError, RuntimeError) as err:
        raise C.ConfigError(f"cannot construct experiment: {err}") from err
    return problem, W, algo, init


# -- runs ---------------------------------------------------------------------

def run_single(cfg, outdir, threads=1):
    """Execute one run and write its trace files and ``summary.json``.

    Divergence is reported in the summary (``diverged=True``), not raised.
    """
    if cfg.get("sweep") is not None:
        raise C.ConfigError("run_single needs a config without a sweep section")
    chash = C.config_hash(cfg)
    rundir = Path(outdir) / chash
    rundir.mkdir(parents=True, exist_ok=True)
    problem, W, algo, init = _construct(cfg)

    formats = cfg["output"]["formats"]
    paths = {}
    sinks = []
    try:
        if "csv" in formats:
            paths["trace_csv"] = rundir / "trace.csv"
            sinks.append(metrics.CsvSink(paths["trace_csv"]))
        if "jsonl" in formats:
            paths["trace_jsonl"] = rundir / "trace.jsonl"
            sinks.append(metrics.JsonlSink(paths["trace_jsonl"]))
        res = run(problem, W, algo, init=init, sinks=sinks, oracle_cfg=build_oracle(cfg),
                  stride=cfg["oracle"]["stride"], threads=threads, raise_on_divergence=False)
    finally:
        for sink in sinks:
            sink.close()

    trained_acc = None
    if problem.has_heldout and not res.diverged:
        xbar, ybar, _ = res.state.means()
        trained_acc = problem.accuracy(xbar, ybar)
    summary = {
        "config_hash": chash,
        "algorithm": cfg["algorithm"]["kind"],
        "problem": cfg["problem"]["kind"],
        "rounds": cfg["algorithm"]["rounds"],
        "rounds_completed": res.rounds_completed,
        "final_stationarity": res.final_stationarity,
        "min_stationarity": res.min_stationarity,
        "average_stationarity": res.average_stationarity,
        "final_upper_loss": res.final_upper_loss,
        "final_lower_loss": res.final_lower_loss,
        "final_accuracy": res.final_accuracy,
        "trained_model_accuracy": trained_acc,
        "diverged": res.diverged,
        "divergence_round": res.divergence_round,
        "divergence_message": res.divergence_message,
        "wall_seconds": res.wall_seconds,
        "rho_w": W.rho_w,
        "projection_radius": algo.projection_radius,
        "kernel_backend": _backend(),
        "trace_path": str(paths.get("trace_csv", paths.get("trace_jsonl"))),
    }
    with open(rundir / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    with open(rundir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    summary["summary_path"] = str(rundir / "summary.json")
    return summary


def _backend():
    from .kernels import BACKEND
    return BACKEND


def _sweep_one(cfg, param, value, outdir):
    try:
        sub = C.apply_sweep_value(cfg, param, value)
        return run_single(sub, outdir, threads=1)
    except (C.ConfigError, OracleFailure, DivergenceError, OSError, ValueError) as err:
        return {"final_accuracy": None, "final_stationarity": None, "diverged": False,
                "error": f"{type(err).__name__}: {err}"}


def run_sweep(cfg, outdir, threads=1):
    """One run per sweep value; per-value output under the sweep directory.

    Runs execute on up to ``threads`` workers.  Per-run failures are recorded
    in the consolidated CSV and do not stop the sweep.
    """
    sweep = cfg.get("sweep")
    if sweep is None:
        raise C.ConfigError("config has no sweep section")
    sweep_dir = Path(outdir) / C.config_hash(cfg)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    param, values = sweep["parameter"], sweep["values"]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            summaries = list(ex.map(lambda v: _sweep_one(cfg, param, v, sweep_dir), values))
    else:
        summaries = [_sweep_one(cfg, param, v, sweep_dir) for v in values]
    with open(sweep_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for value, s in zip(values, summaries):
            w.writerow([value, _fmt(s["final_accuracy"]), _fmt(s["final_stationarity"]),
                        str(bool(s["diverged"])).lower()])
    return summaries, sweep_dir / "sweep.csv"


def _fmt(val):
    return "" if val is None else repr(float(val))


# -- entry point --------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="adasdbo", description=__doc__.split("\n")[0])
    p.add_argument("verb", choices=("validate", "run", "sweep", "oracle-check"))
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--outdir", default=None,
                   help=f"output directory (default: ${OUTDIR_ENV} or output.dir)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else (lambda *a: print(*a))
    err = lambda msg: print(f"adasdbo: {msg}", file=sys.stderr)  # noqa: E731
    if args.threads < 1:
        err("--threads must be >= 1")
        return EXIT_CONFIG

    if args.verb == "oracle-check":
        report = fdcheck.run_suite()
        worst = max(v for checks in report.values() for v in checks.values())
        for name, checks in report.items():
            for key, val in checks.items():
                say(f"{name:10s} {key:14s} {val:.3e}")
        print(f"max relative error {worst:.3e}")
        return EXIT_OK if worst <= FD_TOLERANCE else EXIT_ORACLE

    if not args.config:
        err(f"{args.verb} needs --config")
        return EXIT_CONFIG
    try:
        cfg = C.load_config(args.config)
    except C.ConfigError as e:
        err(f"config error: {e}")
        return EXIT_CONFIG
    except OSError as e:
        err(f"cannot read config: {e}")
        return EXIT_IO

    if args.verb == "validate":
        print(C.config_hash(cfg))
        return EXIT_OK

    outdir = args.outdir or os.environ.get(OUTDIR_ENV) or cfg["output"]["dir"]
    try:
        if args.verb == "run":
            if cfg.get("sweep") is not None:
                err("config has a sweep section; use the sweep verb")
                return EXIT_CONFIG
            s = run_single(cfg, outdir, threads=args.threads)
            say(f"{s['config_hash']}: {s['rounds_completed']} rounds, "
                f"final stationarity {s['final_stationarity']}, "
                f"accuracy {s['final_accuracy']}, diverged {s['diverged']}")
            say(s["summary_path"])
            return EXIT_DIVERGED if s["diverged"] else EXIT_OK
        summaries, path = run_sweep(cfg, outdir, threads=args.threads)
        for value, s in zip(cfg["sweep"]["values"], summaries):
            status = s.get("error") or ("diverged" if s["diverged"] else "ok")
            say(f"{cfg['sweep']['parameter']}={value}: {status}, "
                f"stationarity {s['final_stationarity']}")
        say(str(path))
        return EXIT_OK
    except C.ConfigError as e:
        err(f"config error: {e}")
        return EXIT_CONFIG
    except OracleFailure as e:
        err(f"oracle failure: {e}")
        return EXIT_ORACLE
    except DivergenceError as e:
        err(str(e))
        return EXIT_DIVERGED
    except (OSError, data.IdxParseError) as e:
        err(f"I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
