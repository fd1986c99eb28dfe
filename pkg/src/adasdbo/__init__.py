"""Adaptive single-loop decentralized bilevel optimization (AdaSDBO) simulator."""
from .adaptive import AdaSDBOConfig, mean_update_decomposition, step
from .baselines import ConstConfig, const_step
from .kernels import BACKEND
from .network import (MixingMatrix, build_complete, build_ladder, build_random, build_ring,
                      mix, spectral_gap)
from .oracle import HypergradientOracle, OracleConfig, stationarity, true_hypergradient
from .problems import (BilevelProblem, QuadraticBilevel, SoftmaxHPO, SyntheticLogisticHPO,
                       quadratic_true_hypergradient)
from .runner import RunResult, run
from .swarm import DivergenceError, InitSpec, SwarmState

__version__ = "0.1.0"
