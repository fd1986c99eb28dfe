"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION <k> PASS|FAIL`` line with the measured
values.  Run ``python3 tests/test_acceptance.py`` for the report alone or
``pytest tests/test_acceptance.py -s`` to see it inside pytest.
"""
import functools
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from adasdbo import cli, fdcheck
from adasdbo.config import config_hash, parse_config
from adasdbo.metrics import MemorySink
from adasdbo.oracle import true_hypergradient
from adasdbo.problems import QuadraticBilevel, quadratic_true_hypergradient
from adasdbo.runner import run

HERE = Path(__file__).resolve().parent

# tolerances and budgets
ANALYTIC_TOL = 1e-8
FD_TOL = 1e-5
FD_STEP = 1e-4
C1_SECONDS = 5.0
S2000_MAX = 1e-3
RATE_RATIO_MAX = 2.0
C2_SECONDS = 30.0
SWEEP_GRID = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)
SWEEP_STAT_MAX = 1e-2
SWEEP_MIN_GOOD = 5
C3_SECONDS = 180.0
ACC_MIN = 0.70
ACC_SLACK = 0.02
C4_SECONDS = 300.0
CONSENSUS_RATIO_MAX = 0.5

QUADRATIC = 'problem = "quadratic"\n[topology]\nkind = "ring"\nn = 5\nring_w = 0.4\n' \
            '[algorithm]\ngamma = 1.0\nm0 = 10.0\nrounds = {rounds}\n'
SYNTHETIC = ('[problem]\nkind = "synthetic"\ndim = 50\nr = 1.0\ntrain_total = 2000\n'
             'val_total = 2000\n[topology]\nn = 5\n[algorithm]\nkind = "{kind}"\n'
             'rounds = 1000\n[oracle]\nstride = 10\n')


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


@functools.lru_cache(maxsize=None)
def quadratic_trace(rounds):
    cfg = parse_config(QUADRATIC.format(rounds=rounds))
    problem, W, algo, init = cli._construct(cfg)
    sink = MemorySink()
    t0 = time.perf_counter()
    run(problem, W, algo, init=init, sinks=[sink])
    return sink.records, time.perf_counter() - t0


def test_c1_hypergradient_correctness(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(2024)
    worst_analytic = 0.0
    for k in range(20):
        prob = QuadraticBilevel.random(3, 8, 6, seed=k, scale=1.0, heterogeneity=1.0)
        x = g.standard_normal(8)
        err = fdcheck.rel_error(true_hypergradient(prob, x), quadratic_true_hypergradient(prob, x))
        worst_analytic = max(worst_analytic, err)
    worst_fd = 0.0
    for name, prob in fdcheck.small_problems(seed=7).items():
        assert prob.upper_dim <= 10 and prob.lower_dim <= 10
        for _ in range(20):
            x = 0.5 * g.standard_normal(prob.upper_dim)
            worst_fd = max(worst_fd, fdcheck.hypergradient_error(prob, x, h=FD_STEP))
    secs = time.perf_counter() - t0
    ok = worst_analytic <= ANALYTIC_TOL and worst_fd <= FD_TOL and secs < C1_SECONDS
    report(1, ok, f"analytic rel err {worst_analytic:.2e} (<= {ANALYTIC_TOL:g}), "
                  f"finite-difference rel err {worst_fd:.2e} (<= {FD_TOL:g}), {secs:.2f}s")
    assert ok


def test_c2_convergence(report):
    t0 = time.perf_counter()
    recs, _ = quadratic_trace(2000)
    secs = time.perf_counter() - t0
    stat = np.array([r.stationarity for r in recs])

    def avg(T):
        return stat[:T].mean()

    def rate(T):
        return avg(T) * T / np.log(T + 2) ** 4

    ratio = rate(2000) / rate(500)
    ok = avg(2000) <= S2000_MAX and ratio <= RATE_RATIO_MAX and secs < C2_SECONDS
    report(2, ok, f"S(2000) = {avg(2000):.3e} (<= {S2000_MAX:g}), rate ratio {ratio:.3f} "
                  f"(<= {RATE_RATIO_MAX:g}), {secs:.1f}s")
    assert ok


def _sweep(kind, param, tmp):
    text = QUADRATIC.format(rounds=1000) + f'kind = "{kind}"\n' \
        + f'[sweep]\nparameter = "{param}"\nvalues = {list(SWEEP_GRID)}\n'
    summaries, _ = cli.run_sweep(parse_config(text), tmp)
    return summaries


def test_c3_stepsize_robustness(tmp_path, report):
    t0 = time.perf_counter()
    ada = _sweep("adasdbo", "gamma", tmp_path / "ada")
    const = _sweep("const", "eta", tmp_path / "const")
    secs = time.perf_counter() - t0
    ada_complete = all(not s["diverged"] and "error" not in s for s in ada)
    ada_good = sum(s["final_stationarity"] is not None
                   and s["final_stationarity"] <= SWEEP_STAT_MAX for s in ada)
    const_bad = [s["diverged"] or s["final_stationarity"] is None
                 or s["final_stationarity"] > SWEEP_STAT_MAX for s in const]
    ok = ada_complete and ada_good >= SWEEP_MIN_GOOD and all(const_bad[-2:]) and secs < C3_SECONDS
    fmt = lambda s: "div" if s["diverged"] else f"{s['final_stationarity']:.1e}"  # noqa: E731
    report(3, ok, f"AdaSDBO {ada_good}/6 <= {SWEEP_STAT_MAX:g} "
                  f"[{', '.join(fmt(s) for s in ada)}], ConstSDBO "
                  f"[{', '.join(fmt(s) for s in const)}], {secs:.0f}s")
    assert ok


def test_c4_synthetic_accuracy(tmp_path, report):
    t0 = time.perf_counter()
    ada = cli.run_single(parse_config(SYNTHETIC.format(kind="adasdbo")), tmp_path)
    const = cli.run_single(parse_config(SYNTHETIC.format(kind="const")), tmp_path)
    secs = time.perf_counter() - t0
    a, c = ada["final_accuracy"], const["final_accuracy"]
    ok = (not ada["diverged"] and a >= ACC_MIN and a >= c - ACC_SLACK and secs < C4_SECONDS)
    report(4, ok, f"AdaSDBO accuracy {a:.4f} (>= {ACC_MIN:g}), ConstSDBO {c:.4f}"
                  f"{' (diverged at round %d)' % const['divergence_round'] if const['diverged'] else ''}"
                  f", trained-model accuracy {ada['trained_model_accuracy']:.4f}, {secs:.0f}s")
    assert ok


def test_c5_consensus_decay(report):
    recs, _ = quadratic_trace(4000)
    delta = np.array([r.consensus_error for r in recs])
    ratio = delta.mean() / delta[:1000].mean()
    ok = ratio <= CONSENSUS_RATIO_MAX
    report(5, ok, f"mean consensus error [0,4000) / [0,1000) = {ratio:.3f} "
                  f"(<= {CONSENSUS_RATIO_MAX:g})")
    assert ok


INVARIANT_SUITES = ("test_network.py", "test_adaptive.py", "test_baselines.py",
                    "test_problems.py", "test_data.py", "test_metrics.py", "test_oracle.py")


def test_c6_invariant_suites(report):
    cmd = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
           *[str(HERE / f) for f in INVARIANT_SUITES]]
    out = subprocess.run(cmd, capture_output=True, text=True, cwd=HERE.parent)
    last = out.stdout.strip().splitlines()[-1] if out.stdout.strip() else out.stderr[-200:]
    ok = out.returncode == 0
    report(6, ok, f"invariant suites: {last}")
    assert ok, out.stdout[-3000:]


def test_c7_thread_determinism(tmp_path, report):
    cfg_path = tmp_path / "c2.toml"
    cfg_path.write_text(QUADRATIC.format(rounds=2000))
    traces = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        code = cli.main(["run", "--config", str(cfg_path), "--outdir", str(out),
                         "--threads", str(threads), "--quiet"])
        assert code == 0
        chash = config_hash(parse_config(cfg_path.read_text()))
        traces.append((out / chash / "trace.csv").read_bytes())
    ok = traces[0] == traces[1] and len(traces[0]) > 0
    report(7, ok, f"trace.csv with --threads 1 and 8 byte-identical: {ok} "
                  f"({len(traces[0])} bytes)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
