"""Per-round diagnostics and trace sinks."""
import csv
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .problems import UnsupportedMetricError

CSV_COLUMNS = (
    "round", "upper_loss", "lower_loss", "stationarity", "consensus_error",
    "zeta_q", "zeta_u", "zeta_z", "sigma_q", "sigma_u", "sigma_z",
    "mean_acc_x", "mean_acc_y", "mean_acc_v", "test_accuracy", "term_b_norm",
)


@dataclass(frozen=True)
class RoundTrace:
    """Metrics for the state at the start of round ``round``.

    ``zeta_*``/``sigma_*`` are running sup/inf of the relative stepsize
    deviations over the rounds so far, ``stationarity`` and
    ``test_accuracy`` are ``None`` on rounds skipped by the evaluation stride.
    """

    round: int
    upper_loss: float
    lower_loss: float
    stationarity: float | None
    consensus_error: float
    zeta_q: float
    zeta_u: float
    zeta_z: float
    sigma_q: float
    sigma_u: float
    sigma_z: float
    mean_acc_x: float
    mean_acc_y: float
    mean_acc_v: float
    test_accuracy: float | None
    term_b_norm: float

    def check(self):
        """Raise ``ValueError`` if a record invariant is violated."""
        if self.consensus_error < 0:
            raise ValueError(f"round {self.round}: negative consensus error")
        for b in "quz":
            zeta, sigma = getattr(self, f"zeta_{b}"), getattr(self, f"sigma_{b}")
            if not zeta >= sigma >= 0:
                raise ValueError(f"round {self.round}: need zeta_{b} >= sigma_{b} >= 0")
        if self.test_accuracy is not None and not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"round {self.round}: accuracy outside [0, 1]")
        if self.stationarity is not None and self.stationarity < 0:
            raise ValueError(f"round {self.round}: negative stationarity")

    def to_row(self):
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]

    @classmethod
    def from_row(cls, row):
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        vals = {}
        for name, text in zip(CSV_COLUMNS, row):
            if name == "round":
                vals[name] = int(text)
            else:
                vals[name] = None if text == "" else float(text)
        return cls(**vals)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def consensus_error(x, y, v):
    """Total squared deviation of the agents' ``x``, ``y`` and ``v`` from their means."""
    total = 0.0
    for block in (x, y, v):
        dev = block - block.mean(axis=0)
        total += float(np.sum(dev * dev))
    return total


def stepsize_variables(acc_x, acc_y, acc_v):
    """Return ``(q, u, z)`` from squared accumulators.

    ``u = m^y``, ``z = max(m^v, m^y)``, ``q = m^x z`` with ``m = sqrt(acc)``.
    """
    mx, my, mv = np.sqrt(acc_x), np.sqrt(acc_y), np.sqrt(acc_v)
    z = np.maximum(mv, my)
    return mx * z, my, z


def relative_deviations(b):
    """``(b_i^{-1} - mean(b)^{-1})^2 / mean(b)^{-2}`` for every agent."""
    b = np.asarray(b, dtype=np.float64)
    inv_mean = 1.0 / b.mean()
    return (1.0 / b - inv_mean) ** 2 / inv_mean ** 2


def stepsize_spread(state):
    """Current-round max/min relative stepsize deviations.

    ``state`` is anything with ``acc_x``, ``acc_y`` and ``acc_v`` arrays of
    squared accumulators.  Returns ``{"q": (max, min), "u": ..., "z": ...}``.
    """
    q, u, z = stepsize_variables(state.acc_x, state.acc_y, state.acc_v)
    out = {}
    for name, b in (("q", q), ("u", u), ("z", z)):
        dev = relative_deviations(b)
        out[name] = (float(dev.max()), float(dev.min()))
    return out


class RunningSpread:
    """Running sup (zeta) and inf (sigma) of the relative stepsize deviations."""

    def __init__(self):
        self.zeta = {b: 0.0 for b in "quz"}
        self.sigma = {b: math.inf for b in "quz"}

    def update(self, spread):
        for b, (hi, lo) in spread.items():
            self.zeta[b] = max(self.zeta[b], hi)
            self.sigma[b] = min(self.sigma[b], lo)

    def values(self):
        sig = {b: (0.0 if math.isinf(s) else s) for b, s in self.sigma.items()}
        return self.zeta, sig


def test_accuracy(problem, x, y):
    """Held-out accuracy of model ``y`` (usually the lower solution at ``x``)."""
    if not problem.has_heldout:
        raise UnsupportedMetricError(f"{type(problem).__name__} has no held-out data")
    return problem.accuracy(x, y)


# -- sinks --------------------------------------------------------------------

class MemorySink:
    def __init__(self):
        self.records = []

    def write(self, trace):
        self.records.append(trace)

    def flush(self):
        pass

    def close(self):
        pass


class CsvSink:
    """CSV trace file with the fixed column order of :data:`CSV_COLUMNS`."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_COLUMNS)

    def write(self, trace):
        self._writer.writerow(trace.to_row())

    def flush(self):
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()


class JsonlSink:
    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def write(self, trace):
        self._fh.write(json.dumps(asdict(trace), allow_nan=False) + "\n")

    def flush(self):
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()


def emit(trace, sink):
    sink.write(trace)


def read_trace_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [RoundTrace.from_row(row) for row in reader]


def read_trace_jsonl(path):
    names = {f.name for f in fields(RoundTrace)}
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(RoundTrace(**{k: rec[k] for k in names}))
    return out
