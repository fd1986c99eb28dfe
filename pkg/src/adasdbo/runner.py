"""Round loop shared by AdaSDBO and the constant-stepsize baseline."""
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics
from .adaptive import AdaSDBOConfig, step_with_info
from .baselines import ConstConfig, const_step_with_info
from .oracle import HypergradientOracle, OracleConfig
from .swarm import DivergenceError, InitSpec


@dataclass
class RunResult:
    state: object
    rounds_completed: int
    stationarity: list = field(default_factory=list)
    final_stationarity: float | None = None
    min_stationarity: float | None = None
    final_accuracy: float | None = None
    final_upper_loss: float | None = None
    final_lower_loss: float | None = None
    diverged: bool = False
    divergence_round: int | None = None
    divergence_message: str | None = None
    wall_seconds: float = 0.0

    @property
    def average_stationarity(self):
        """Mean of ``||grad Phi(x_bar_t)||^2`` over the evaluated rounds."""
        vals = [s for _, s in self.stationarity]
        return float(np.mean(vals)) if vals else None


def _evaluate(problem, oracle, state, want_stationarity):
    xbar, ybar, _ = state.means()
    upper = problem.mean_upper_loss(xbar, ybar)
    lower = problem.mean_lower_loss(xbar, ybar)
    stat = acc = None
    if want_stationarity:
        grad, y_hat, _ = oracle.evaluate(xbar)
        stat = float(grad @ grad)
        if problem.has_heldout:
            acc = metrics.test_accuracy(problem, xbar, y_hat)
    return upper, lower, stat, acc


def run(problem, W, cfg, init=None, sinks=(), oracle_cfg=None, stride=1, threads=1,
        raise_on_divergence=True):
    """Execute ``cfg.rounds`` rounds, emitting one :class:`RoundTrace` per round.

    Record ``t`` describes the state at the start of round ``t`` together
    with the stepsize statistics of round ``t``.  Stationarity and accuracy
    are evaluated every ``stride`` rounds and at the final state.

    On divergence, the records emitted so far are flushed and
    :class:`DivergenceError` is re-raised, unless ``raise_on_divergence`` is
    false, in which case the partial result is returned with ``diverged``
    set.
    """
    if isinstance(cfg, AdaSDBOConfig):
        step_fn = step_with_info
        m0 = cfg.m0
    elif isinstance(cfg, ConstConfig):
        step_fn = const_step_with_info
        m0 = 10.0
    else:
        raise TypeError(f"unknown algorithm config {type(cfg).__name__}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    init = init or InitSpec(m0=m0)
    if isinstance(cfg, AdaSDBOConfig) and init.m0 != cfg.m0:
        init = InitSpec(init.x0, init.y0, init.v0, cfg.m0)
    oracle = HypergradientOracle(problem, oracle_cfg or OracleConfig())
    state = init.build(problem)
    spread = metrics.RunningSpread()
    result = RunResult(state=state, rounds_completed=0)
    t0 = time.perf_counter()

    with ExitStack() as stack:
        stack.enter_context(threadpool_limits(limits=1))
        executor = None
        if threads > 1:
            executor = stack.enter_context(ThreadPoolExecutor(max_workers=threads))
        try:
            for t in range(cfg.rounds):
                want = t % stride == 0
                upper, lower, stat, acc = _evaluate(problem, oracle, state, want)
                new, info = step_fn(state, problem, W, cfg, executor)
                if isinstance(cfg, AdaSDBOConfig):
                    spread.update(metrics.stepsize_spread(info))
                    term_b = float(np.linalg.norm(info.term_decomposition()[1]))
                else:
                    spread.update({b: (0.0, 0.0) for b in "quz"})
                    term_b = 0.0
                zeta, sigma = spread.values()
                record = metrics.RoundTrace(
                    round=t, upper_loss=upper, lower_loss=lower, stationarity=stat,
                    consensus_error=metrics.consensus_error(state.x, state.y, state.v),
                    zeta_q=zeta["q"], zeta_u=zeta["u"], zeta_z=zeta["z"],
                    sigma_q=sigma["q"], sigma_u=sigma["u"], sigma_z=sigma["z"],
                    mean_acc_x=float(np.sqrt(state.acc_x).mean()),
                    mean_acc_y=float(np.sqrt(state.acc_y).mean()),
                    mean_acc_v=float(np.sqrt(state.acc_v).mean()),
                    test_accuracy=acc, term_b_norm=term_b)
                for sink in sinks:
                    metrics.emit(record, sink)
                if acc is not None:
                    result.final_accuracy = acc
                if stat is not None:
                    result.stationarity.append((t, stat))
                    result.min_stationarity = (stat if result.min_stationarity is None
                                               else min(result.min_stationarity, stat))
                state = new
                result.rounds_completed = t + 1
        except DivergenceError as err:
            result.diverged = True
            result.divergence_round = err.round
            result.divergence_message = str(err)
            if raise_on_divergence:
                raise
        finally:
            for sink in sinks:
                sink.flush()
        result.state = state
        if not result.diverged:
            upper, lower, stat, acc = _evaluate(problem, oracle, state, True)
            result.final_stationarity = stat
            result.final_accuracy = acc
            result.final_upper_loss = upper
            result.final_lower_loss = lower
            result.min_stationarity = (stat if result.min_stationarity is None
                                       else min(result.min_stationarity, stat))
    result.wall_seconds = time.perf_counter() - t0
    return result
